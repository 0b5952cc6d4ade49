// lcnet: cost analysis, inference, latency, ablation, gradient check and toy training.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "lcnet/analysis.hpp"
#include "lcnet/autodiff.hpp"
#include "lcnet/bench.hpp"
#include "lcnet/image.hpp"
#include "lcnet/parallel.hpp"
#include "lcnet/train.hpp"
#include "lcnet/weights_io.hpp"

namespace fs = std::filesystem;
using namespace lcnet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kCheck = 3 };

// Usage problems are reported with the flag that caused them.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string mask_check(const std::string &m) {
  if (m.size() != static_cast<std::size_t>(kNumBlocks))
    return "must have " + std::to_string(kNumBlocks) + " characters, got " + std::to_string(m.size());
  if (m.find_first_not_of("01") != std::string::npos) return "may only contain '0' and '1'";
  return {};
}

struct CommonFlags {
  double scale = 1.0;
  std::string se_mask = kDefaultSEMask;
  std::string kernel_mask = kDefaultKernelMask;
  int classes = 1000;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string output = "text";
  std::string config_path;
  std::vector<CLI::Option *> cfg_opts;  // scale, se-mask, kernel-mask, classes

  void attach(CLI::App *app) {
    cfg_opts = {
        app->add_option("--scale", scale, "channel width multiplier")->check(CLI::PositiveNumber),
        app->add_option("--se-mask", se_mask, "13 bits, 1 puts SE in that block")
            ->check(CLI::Validator(mask_check, "MASK")),
        app->add_option("--kernel-mask", kernel_mask, "13 bits, 1 means a 5x5 depthwise kernel")
            ->check(CLI::Validator(mask_check, "MASK")),
        app->add_option("--classes", classes, "number of output classes")->check(CLI::PositiveNumber),
    };
    app->add_option("--seed", seed, "seed for weights and inputs");
    app->add_option("--workers", workers, "kernel worker threads")->check(CLI::PositiveNumber);
    app->add_option("--output", output, "report format")->check(CLI::IsMember({"text", "csv"}));
    app->add_option("--config", config_path, "key = value model config; flags override it");
  }

  // The config file is read first; explicitly passed flags win.
  LCNetConfig config() const {
    LCNetConfig c;
    if (!config_path.empty()) {
      const auto bytes = read_file(config_path);
      c = LCNetConfig::from_text(std::string(bytes.begin(), bytes.end()));
    }
    if (cfg_opts[0]->count() || config_path.empty()) c.scale = scale;
    if (cfg_opts[1]->count() || config_path.empty()) c.se_mask = se_mask;
    if (cfg_opts[2]->count() || config_path.empty()) c.kernel_mask = kernel_mask;
    if (cfg_opts[3]->count() || config_path.empty()) c.num_classes = classes;
    c.validate();
    return c;
  }

  bool csv() const { return output == "csv"; }
};

void print_top_k(const Tensor &probs, int top_k, bool csv) {
  const std::int64_t N = probs.dim(0), K = probs.dim(1);
  const int k = static_cast<int>(std::min<std::int64_t>(top_k, K));
  if (csv) std::cout << "sample,rank,index,probability\n";
  for (std::int64_t n = 0; n < N; ++n) {
    const float *row = probs.data() + n * K;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(K));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return row[a] > row[b]; });
    if (!csv && N > 1) std::cout << "sample " << n << "\n";
    for (int r = 0; r < k; ++r) {
      char line[96];
      if (csv)
        std::snprintf(line, sizeof line, "%lld,%d,%lld,%.9g\n", static_cast<long long>(n), r + 1,
                      static_cast<long long>(idx[r]), row[idx[r]]);
      else
        std::snprintf(line, sizeof line, "%2d  class %-5lld  %.9f\n", r + 1,
                      static_cast<long long>(idx[r]), row[idx[r]]);
      std::cout << line;
    }
  }
}

bool has_ext(const std::string &path, const char *ext) {
  std::string e = fs::path(path).extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

std::vector<std::string> split_masks(const std::string &list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    if (auto why = mask_check(item); !why.empty())
      throw UsageError("--masks: '" + item + "' " + why);
    out.push_back(item);
  }
  if (out.empty()) throw UsageError("--masks: mask list is empty");
  return out;
}

int exit_for(const Error &e) {
  switch (e.code()) {
    case Errc::InvalidConfig:
    case Errc::InvalidArgument:
    case Errc::OutOfRange:
    case Errc::InvalidRate:
      return kUsage;
    default:
      return kData;
  }
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"LCNet CPU inference engine and architecture laboratory"};
  app.require_subcommand(1);

  // analyze
  CommonFlags an;
  std::int64_t an_hw = 224;
  auto *analyze = app.add_subcommand("analyze", "per-stage params and MACs");
  an.attach(analyze);
  analyze->add_option("--input-hw", an_hw, "square input resolution")->check(CLI::PositiveNumber);

  // infer
  CommonFlags inf;
  std::string inf_weights, inf_input;
  int top_k = 5;
  auto *infer = app.add_subcommand(
      "infer",
      "classify a .lct tensor or a P6 PPM image\n"
      "PPM images: bilinear resize (half-pixel centers) of the short edge to 256, center crop\n"
      "224, scale to [0,1], normalize with the conventional ImageNet mean (0.485,0.456,0.406)\n"
      "and std (0.229,0.224,0.225).");
  inf.attach(infer);
  infer->add_option("--weights", inf_weights, ".lcnw weights (default: fresh init from --seed)");
  infer->add_option("--input", inf_input, ".lct tensor [N,3,H,W] or .ppm image")->required();
  infer->add_option("--top-k", top_k, "rows to print")->check(CLI::PositiveNumber);

  // bench
  CommonFlags bn;
  BenchOptions bopts;
  auto *bench = app.add_subcommand("bench", "median forward latency");
  bn.attach(bench);
  bench->add_option("--warmup", bopts.warmup, "untimed iterations")->check(CLI::NonNegativeNumber);
  bench->add_option("--iters", bopts.iters, "timed iterations (>= 10)");
  bench->add_option("--batch", bopts.batch, "batch size")->check(CLI::PositiveNumber);
  bench->add_option("--input-hw", bopts.input_hw, "square input resolution")
      ->check(CLI::PositiveNumber);

  // ablate
  CommonFlags ab;
  BenchOptions aopts;
  aopts.iters = 10;
  std::string ab_mode = "se", ab_masks;
  auto *ablate = app.add_subcommand("ablate", "sweep SE or kernel masks");
  ab.attach(ablate);
  ablate->add_option("--mode", ab_mode, "which mask to sweep")->check(CLI::IsMember({"se", "kernel"}));
  auto *masks_opt = ablate->add_option("--masks", ab_masks, "comma-separated 13-bit masks");
  ablate->add_option("--iters", aopts.iters, "timed iterations per mask (0: costs only)");
  ablate->add_option("--warmup", aopts.warmup, "untimed iterations")->check(CLI::NonNegativeNumber);

  // gradcheck
  std::uint64_t gc_seed = 0;
  int gc_workers = 1;
  bool gc_fault = false;
  auto *gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the backward pass");
  gradcheck->add_option("--seed", gc_seed, "seed for weights and inputs");
  gradcheck->add_option("--workers", gc_workers)->check(CLI::PositiveNumber);
  gradcheck->add_flag("--inject-fault", gc_fault)->group("");

  // train-toy
  CommonFlags tt;
  tt.scale = 0.25;
  tt.classes = 3;
  ScheduleCfg sched{0.1, 2, 30, 1};
  OptState opt;
  std::int64_t samples = 576, batch = 32, tt_hw = 32;
  std::string history_path = "history.csv", ckpt_path = "toy.lcnw";
  auto *train = app.add_subcommand("train-toy", "SGD on a synthetic dataset");
  tt.attach(train);
  train->add_option("--epochs", sched.total_epochs, "training epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--warmup-epochs", sched.warmup_epochs, "linear warmup epochs")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--base-lr", sched.base_lr, "peak learning rate")->check(CLI::NonNegativeNumber);
  train->add_option("--momentum", opt.momentum);
  train->add_option("--weight-decay", opt.weight_decay);
  train->add_option("--samples", samples, "synthetic dataset size")->check(CLI::PositiveNumber);
  train->add_option("--batch", batch, "batch size")->check(CLI::Range(2, 1 << 20));
  train->add_option("--input-hw", tt_hw, "image size (multiple of 32)")->check(CLI::PositiveNumber);
  train->add_option("--history", history_path, "CSV of epoch,loss,accuracy");
  train->add_option("--checkpoint", ckpt_path, ".lcnw written after training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*analyze) {
      set_worker_count(an.workers);
      const auto rep = summarize(an.config(), an_hw, an_hw);
      std::cout << (an.csv() ? rep.to_csv() : rep.to_text());
      return kOk;
    }

    if (*infer) {
      set_worker_count(inf.workers);
      Model model = build_model(inf.config(), inf.seed);
      if (!inf_weights.empty()) assign_params(model, load_weights(inf_weights));
      const Tensor x = has_ext(inf_input, ".ppm") ? preprocess_eval(load_ppm(inf_input))
                                                  : load_tensor(inf_input);
      print_top_k(forward(model, x, Mode::Infer), top_k, inf.csv());
      return kOk;
    }

    if (*bench) {
      bopts.workers = bn.workers;
      bopts.seed = bn.seed;
      const auto r = run_bench(bn.config(), bopts);
      if (bn.csv()) {
        std::cout << "config,workers,batch,warmup,iters,median_ms,mean_ms,p90_ms\n"
                  << r.description << "," << r.workers << "," << r.batch << "," << r.warmup << ","
                  << r.iters << "," << r.median_ms << "," << r.mean_ms << "," << r.p90_ms << "\n";
      } else {
        std::cout << r.to_text();
      }
      return kOk;
    }

    if (*ablate) {
      const auto mode = ab_mode == "se" ? AblationMode::SE : AblationMode::Kernel;
      const auto masks = masks_opt->count() ? split_masks(ab_masks) : default_ablation_masks(mode);
      aopts.workers = ab.workers;
      aopts.seed = ab.seed;
      const auto rows = run_ablation(mode, masks, ab.config(), aopts);
      std::cout << (ab.csv() ? ablation_to_csv(rows) : ablation_to_text(rows));
      return kOk;
    }

    if (*gradcheck) {
      set_worker_count(gc_workers);
      GradCheckOptions o;
      o.inject_fault = gc_fault;
      const auto rep = grad_check(tiny_config(), gc_seed, o);
      const bool pass = rep.max_rel_error < 1e-4;
      std::printf("max_rel_error %.6e  worst %s  checked %d  resampled %d\n%s (threshold 1e-4)\n",
                  rep.max_rel_error, rep.worst.c_str(), rep.checked, rep.resampled,
                  pass ? "PASS" : "FAIL");
      return pass ? kOk : kCheck;
    }

    if (*train) {
      set_worker_count(tt.workers);
      const LCNetConfig cfg = tt.config();
      if (samples < batch) throw UsageError("--samples must be at least --batch");
      const auto data = make_synth_dataset(tt.seed, cfg.num_classes, samples, tt_hw);
      sched.steps_per_epoch = static_cast<int>(samples / batch);
      TrainOptions to;
      to.batch_size = batch;
      const auto res = train_toy(cfg, data, sched, opt, tt.seed, to);
      const auto csv = history_to_csv(res.history);
      write_file(history_path, std::span(reinterpret_cast<const std::uint8_t *>(csv.data()), csv.size()));
      save_weights(res.model, ckpt_path);
      if (tt.csv()) {
        std::cout << csv;
      } else {
        for (const auto &h : res.history)
          std::printf("epoch %3d  loss %.6f  accuracy %.4f\n", h.epoch, h.loss, h.accuracy);
      }
      const auto &last = res.history.back();
      std::printf("final accuracy %.4f  final loss %.6f  initial loss %.6f\n", last.accuracy,
                  last.loss, res.history.front().loss);
      return kOk;
    }
  } catch (const UsageError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
