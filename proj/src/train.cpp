#include "lcnet/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "lcnet/autodiff.hpp"
#include "lcnet/random.hpp"

namespace lcnet {

void ScheduleCfg::validate() const {
  if (!(base_lr >= 0.0)) throw Error(Errc::InvalidArgument, "base_lr must be >= 0");
  if (warmup_epochs < 0 || warmup_epochs >= total_epochs)
    throw Error(Errc::InvalidArgument, "need 0 <= warmup_epochs < total_epochs");
  if (steps_per_epoch < 1) throw Error(Errc::InvalidArgument, "steps_per_epoch must be >= 1");
}

double lr_at(const ScheduleCfg &cfg, std::int64_t step) {
  cfg.validate();
  const std::int64_t warm = cfg.warmup_steps(), total = cfg.total_steps();
  if (step < 0 || step >= total)
    throw Error(Errc::OutOfRange, "step " + std::to_string(step) + " outside [0, " +
                                      std::to_string(total) + ")");
  if (step < warm) return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double t = static_cast<double>(step - warm);
  const double span = static_cast<double>(total - warm);
  return 0.5 * cfg.base_lr * (1.0 + std::cos(std::numbers::pi * t / span));
}

bool decay_exempt(const std::string &name) {
  auto ends = [&](std::string_view suffix) {
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends(".bias") || ends(".b1") || ends(".b2") || ends(".gamma") || ends(".beta");
}

void sgd_step(ParamMap<float> &params, const ParamMap<float> &grads, OptState &opt, double lr) {
  for (const auto &[name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw Error(Errc::ShapeMismatch, "gradient for unknown parameter " + name);
    Tensor &w = it->second;
    if (w.dims() != g.dims())
      throw Error(Errc::ShapeMismatch, name + ": gradient " + dims_to_string(g.dims()) +
                                           " vs parameter " + dims_to_string(w.dims()));
    auto vit = opt.velocity.find(name);
    if (vit == opt.velocity.end()) vit = opt.velocity.emplace(name, Tensor(w.dims(), 0.0f)).first;
    Tensor &v = vit->second;
    if (v.dims() != w.dims()) throw Error(Errc::ShapeMismatch, name + ": velocity shape mismatch");
    const float wd = decay_exempt(name) ? 0.0f : static_cast<float>(opt.weight_decay);
    const float m = static_cast<float>(opt.momentum);
    const float rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = g[i] + wd * w[i];
      v[i] = m * v[i] + gi;
      w[i] = w[i] - rate * v[i];
    }
  }
}

SynthDataset make_synth_dataset(std::uint64_t seed, int num_classes, std::int64_t samples,
                                std::int64_t hw) {
  if (num_classes < 1 || samples < 1 || hw < 1)
    throw Error(Errc::InvalidArgument, "synthetic dataset needs positive classes, samples, size");
  SynthDataset d{seed, num_classes, hw, Tensor({samples, 3, hw, hw}), {}};
  Rng rng(seed);
  const double sigma = hw / 8.0;
  const std::int64_t plane = hw * hw;
  for (std::int64_t s = 0; s < samples; ++s) {
    const int label = static_cast<int>(s % num_classes);
    d.labels.push_back(label);
    const double cy = hw * (label + 1.0) / (num_classes + 1.0) + rng.normal();
    const double cx = hw / 2.0 + rng.normal();
    const double amp = 2.0 + 0.25 * rng.normal();
    float *img = d.images.data() + s * 3 * plane;
    for (int c = 0; c < 3; ++c) {
      const double tint = (c == label % 3) ? 1.0 : 0.3;
      for (std::int64_t y = 0; y < hw; ++y)
        for (std::int64_t x = 0; x < hw; ++x) {
          const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          const double v = amp * tint * std::exp(-r2 / (2.0 * sigma * sigma)) + 0.3 * rng.normal();
          img[c * plane + y * hw + x] = static_cast<float>(v);
        }
    }
  }
  return d;
}

namespace {

Tensor gather_batch(const SynthDataset &data, std::span<const std::int64_t> idx,
                    const std::vector<bool> &flip) {
  const std::int64_t hw = data.image_hw, sample = 3 * hw * hw;
  Tensor x({static_cast<std::int64_t>(idx.size()), 3, hw, hw});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const float *src = data.images.data() + idx[b] * sample;
    float *dst = x.data() + static_cast<std::int64_t>(b) * sample;
    if (!flip.empty() && flip[b]) {
      for (std::int64_t r = 0; r < 3 * hw; ++r)
        for (std::int64_t c = 0; c < hw; ++c) dst[r * hw + c] = src[r * hw + (hw - 1 - c)];
    } else {
      std::copy(src, src + sample, dst);
    }
  }
  return x;
}

EpochStats evaluate(const Model &model, const SynthDataset &data, std::int64_t batch, int epoch) {
  const ForwardOptions opts{true, false, false, 0};
  const std::int64_t steps = data.size() / batch;
  double loss = 0.0;
  std::int64_t correct = 0, seen = 0;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(batch));
  for (std::int64_t s = 0; s < steps; ++s) {
    std::iota(idx.begin(), idx.end(), s * batch);
    Tensor x = gather_batch(data, idx, {});
    Tensor logits = run_network(model.network, model.params, x, opts);
    std::vector<int> labels(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) labels[b] = data.labels[idx[b]];
    auto lg = softmax_cross_entropy(logits, labels);
    loss += static_cast<double>(lg.loss) * batch;
    const std::int64_t K = logits.dim(1);
    for (std::int64_t b = 0; b < batch; ++b) {
      const float *row = logits.data() + b * K;
      const auto pred = std::max_element(row, row + K) - row;
      correct += (pred == labels[b]);
    }
    seen += batch;
  }
  return {epoch, loss / seen, static_cast<double>(correct) / seen};
}

}  // namespace

TrainResult train_toy(const LCNetConfig &config, const SynthDataset &data,
                      const ScheduleCfg &schedule, OptState opt, std::uint64_t seed,
                      const TrainOptions &options) {
  const std::int64_t B = options.batch_size;
  if (B < 2) throw Error(Errc::InvalidArgument, "batch_size must be >= 2 for batch statistics");
  if (data.size() < B) throw Error(Errc::InvalidArgument, "dataset smaller than one batch");
  if (data.num_classes > 4 || data.size() > 2000)
    throw Error(Errc::InvalidArgument, "toy training takes at most 4 classes and 2000 samples");
  if (data.num_classes > config.num_classes)
    throw Error(Errc::InvalidArgument, "dataset has more classes than the model");
  const std::int64_t steps = data.size() / B;
  if (schedule.total_epochs > 0) {
    schedule.validate();
    if (schedule.steps_per_epoch != steps)
      throw Error(Errc::InvalidArgument, "steps_per_epoch must be samples / batch_size = " +
                                             std::to_string(steps));
  }

  TrainResult res{build_model(config, seed), {}};
  Model &model = res.model;
  model.mode = Mode::Train;
  res.history.push_back(evaluate(model, data, B, 0));

  Rng rng(seed ^ 0x3c6ef372fe94f82bULL);
  std::vector<std::int64_t> order(static_cast<std::size_t>(data.size()));
  std::int64_t global_step = 0;
  for (int epoch = 1; epoch <= schedule.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::int64_t s = 0; s < steps; ++s, ++global_step) {
      std::span<const std::int64_t> idx(order.data() + s * B, static_cast<std::size_t>(B));
      std::vector<bool> flip(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) flip[b] = options.hflip && (rng.next() & 1);
      Tensor x = gather_batch(data, idx, flip);
      std::vector<int> labels(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) labels[b] = data.labels[idx[b]];

      auto step = model_backward(model, x, labels, splitmix64(seed + global_step));
      if (!std::isfinite(step.loss))
        throw Error(Errc::InvalidArgument, "non-finite loss at step " + std::to_string(global_step));
      sgd_step(model.params, step.tape.grads, opt, lr_at(schedule, global_step));
      apply_running_stats(model, step.tape);
    }
    EpochStats st = evaluate(model, data, B, epoch);
    if (!std::isfinite(st.loss))
      throw Error(Errc::InvalidArgument, "non-finite loss after epoch " + std::to_string(epoch));
    res.history.push_back(st);
  }
  model.mode = Mode::Infer;
  return res;
}

std::string history_to_csv(const std::vector<EpochStats> &history) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,loss,accuracy\n";
  for (const auto &h : history) out << h.epoch << "," << h.loss << "," << h.accuracy << "\n";
  return out.str();
}

}  // namespace lcnet
