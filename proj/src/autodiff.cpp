#include "lcnet/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "lcnet/random.hpp"
#include "lcnet/weights_io.hpp"

namespace lcnet {

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                             const ConvDesc &desc, const BasicTensor<T> &dout) {
  const Dims out_dims = conv2d_output_dims(input.dims(), weights.dims(),
                                           desc.has_bias ? desc.out_channels : 0, desc);
  if (dout.dims() != out_dims)
    throw Error(Errc::ShapeMismatch, "conv backward: dout " + dims_to_string(dout.dims()) +
                                         " != forward output " + dims_to_string(out_dims));
  ConvGrads<T> g{BasicTensor<T>(input.dims()), BasicTensor<T>(weights.dims()), {}};
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t Co = out_dims[1], Ho = out_dims[2], Wo = out_dims[3], P = Ho * Wo;
  const int k = desc.kernel, s = desc.stride, p = desc.padding;

  if (desc.has_bias) {
    g.bias = BasicTensor<T>({Co});
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t co = 0; co < Co; ++co) {
        const T *d = dout.data() + (n * Co + co) * P;
        T acc = T(0);
        for (std::int64_t j = 0; j < P; ++j) acc += d[j];
        g.bias[co] += acc;
      }
  }

  if (desc.depthwise) {
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const T *x = input.data() + (n * C + c) * H * W;
        const T *d = dout.data() + (n * C + c) * P;
        T *dx = g.input.data() + (n * C + c) * H * W;
        const T *w = weights.data() + c * k * k;
        T *dw = g.weights.data() + c * k * k;
        for (std::int64_t oy = 0; oy < Ho; ++oy)
          for (int ky = 0; ky < k; ++ky) {
            const std::int64_t iy = oy * s - p + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              T acc = T(0);
              const T wv = w[ky * k + kx];
              for (std::int64_t ox = 0; ox < Wo; ++ox) {
                const std::int64_t ix = ox * s - p + kx;
                if (ix < 0 || ix >= W) continue;
                const T dv = d[oy * Wo + ox];
                acc += dv * x[iy * W + ix];
                dx[iy * W + ix] += wv * dv;
              }
              dw[ky * k + kx] += acc;
            }
          }
      }
    return g;
  }

  const std::int64_t K = C * k * k;
  const bool pointwise = (k == 1 && s == 1);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(K * P));
  std::vector<T> dcol(static_cast<std::size_t>(K * P));
  for (std::int64_t n = 0; n < N; ++n) {
    const T *x = input.data() + n * C * H * W;
    const T *d = dout.data() + n * Co * P;
    const T *B = x;
    if (!pointwise) {
      for (std::int64_t r = 0; r < K; ++r) {
        const std::int64_t kx = r % k, ky = (r / k) % k, c = r / (k * k);
        for (std::int64_t oy = 0; oy < Ho; ++oy)
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t iy = oy * s - p + ky, ix = ox * s - p + kx;
            col[r * P + oy * Wo + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x[(c * H + iy) * W + ix] : T(0);
          }
      }
      B = col.data();
    }
    // dW[co, r] += sum_p d[co, p] * B[r, p]
    for (std::int64_t co = 0; co < Co; ++co)
      for (std::int64_t r = 0; r < K; ++r) {
        const T *drow = d + co * P;
        const T *brow = B + r * P;
        T acc = T(0);
        for (std::int64_t j = 0; j < P; ++j) acc += drow[j] * brow[j];
        g.weights[co * K + r] += acc;
      }
    // dB[r, p] = sum_co W[co, r] * d[co, p]
    std::fill(dcol.begin(), dcol.end(), T(0));
    for (std::int64_t r = 0; r < K; ++r) {
      T *out = dcol.data() + r * P;
      for (std::int64_t co = 0; co < Co; ++co) {
        const T a = weights[co * K + r];
        const T *drow = d + co * P;
        for (std::int64_t j = 0; j < P; ++j) out[j] += a * drow[j];
      }
    }
    T *dx = g.input.data() + n * C * H * W;
    if (pointwise) {
      std::copy(dcol.begin(), dcol.end(), dx);
    } else {
      for (std::int64_t r = 0; r < K; ++r) {
        const std::int64_t kx = r % k, ky = (r / k) % k, c = r / (k * k);
        for (std::int64_t oy = 0; oy < Ho; ++oy)
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t iy = oy * s - p + ky, ix = ox * s - p + kx;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              dx[(c * H + iy) * W + ix] += dcol[r * P + oy * Wo + ox];
          }
      }
    }
  }
  return g;
}

template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const BasicTensor<T> &input, const BasicTensor<T> &gamma,
                                           const BasicTensor<T> &batch_mean,
                                           const BasicTensor<T> &batch_var, double eps,
                                           const BasicTensor<T> &dout) {
  if (dout.dims() != input.dims())
    throw Error(Errc::ShapeMismatch, "batchnorm backward: dout shape != input shape");
  const std::int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  const double M = static_cast<double>(N * HW);
  BatchNormGrads<T> g{BasicTensor<T>(input.dims()), BasicTensor<T>({C}), BasicTensor<T>({C})};
  for (std::int64_t c = 0; c < C; ++c) {
    const double mean = batch_mean[c];
    const double inv = 1.0 / std::sqrt(static_cast<double>(batch_var[c]) + eps);
    double dbeta = 0.0, dgamma = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const T *x = input.data() + (n * C + c) * HW;
      const T *d = dout.data() + (n * C + c) * HW;
      for (std::int64_t j = 0; j < HW; ++j) {
        dbeta += d[j];
        dgamma += d[j] * ((x[j] - mean) * inv);
      }
    }
    g.beta[c] = static_cast<T>(dbeta);
    g.gamma[c] = static_cast<T>(dgamma);
    const double scale = gamma[c] * inv;
    for (std::int64_t n = 0; n < N; ++n) {
      const T *x = input.data() + (n * C + c) * HW;
      const T *d = dout.data() + (n * C + c) * HW;
      T *dx = g.input.data() + (n * C + c) * HW;
      for (std::int64_t j = 0; j < HW; ++j) {
        const double xhat = (x[j] - mean) * inv;
        dx[j] = static_cast<T>(scale * (d[j] - dbeta / M - xhat * dgamma / M));
      }
    }
  }
  return g;
}

template <typename T>
BatchNormGrads<T> batchnorm_infer_backward(const BasicTensor<T> &input, const BatchNormParams<T> &bn,
                                           const BasicTensor<T> &dout) {
  if (dout.dims() != input.dims())
    throw Error(Errc::ShapeMismatch, "batchnorm backward: dout shape != input shape");
  const std::int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  BatchNormGrads<T> g{BasicTensor<T>(input.dims()), BasicTensor<T>({C}), BasicTensor<T>({C})};
  for (std::int64_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(bn.running_var[c]) + bn.eps);
    const double mean = bn.running_mean[c];
    const double scale = bn.gamma[c] * inv;
    double dbeta = 0.0, dgamma = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const T *x = input.data() + (n * C + c) * HW;
      const T *d = dout.data() + (n * C + c) * HW;
      T *dx = g.input.data() + (n * C + c) * HW;
      for (std::int64_t j = 0; j < HW; ++j) {
        dbeta += d[j];
        dgamma += d[j] * (x[j] - mean) * inv;
        dx[j] = static_cast<T>(d[j] * scale);
      }
    }
    g.beta[c] = static_cast<T>(dbeta);
    g.gamma[c] = static_cast<T>(dgamma);
  }
  return g;
}

template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T> &input, Activation act,
                                   const BasicTensor<T> &dout) {
  if (dout.dims() != input.dims())
    throw Error(Errc::ShapeMismatch, "activation backward: dout shape != input shape");
  BasicTensor<T> dx(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i)
    dx[i] = dout[i] * (act == Activation::HSwish ? hswish_grad_scalar(input[i])
                                                 : relu_grad_scalar(input[i]));
  return dx;
}

template <typename T>
BasicTensor<T> hsigmoid_backward(const BasicTensor<T> &input, const BasicTensor<T> &dout) {
  BasicTensor<T> dx(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i) dx[i] = dout[i] * hsigmoid_grad_scalar(input[i]);
  return dx;
}

template <typename T>
SEGrads<T> se_backward(const BasicTensor<T> &input, const SEParams<T> &se,
                       const BasicTensor<T> &dout) {
  if (dout.dims() != input.dims() || input.rank() != 4 || input.dim(1) != se.channels)
    throw Error(Errc::ShapeMismatch, "SE backward: shape mismatch");
  const std::int64_t N = input.dim(0), C = se.channels;
  const std::int64_t HW = input.dim(2) * input.dim(3);

  BasicTensor<T> pooled = global_avg_pool(input).reshaped({N, C});
  BasicTensor<T> z1 = fully_connected(pooled, se.w1, se.b1.values());
  BasicTensor<T> hidden = relu(z1);
  BasicTensor<T> z2 = fully_connected(hidden, se.w2, se.b2.values());
  BasicTensor<T> gate = hsigmoid(z2);

  SEGrads<T> g{BasicTensor<T>(input.dims()), {}, {}, {}, {}};
  BasicTensor<T> dgate({N, C});
  for (std::int64_t i = 0; i < N * C; ++i) {
    const T *x = input.data() + i * HW;
    const T *d = dout.data() + i * HW;
    T *dx = g.input.data() + i * HW;
    T acc = T(0);
    for (std::int64_t j = 0; j < HW; ++j) {
      acc += d[j] * x[j];
      dx[j] = d[j] * gate[i];
    }
    dgate[i] = acc;
  }
  BasicTensor<T> dz2 = hsigmoid_backward(z2, dgate);
  auto fc2 = fully_connected_backward(hidden, se.w2, dz2);
  BasicTensor<T> dz1 = activation_backward(z1, Activation::ReLU, fc2.input);
  auto fc1 = fully_connected_backward(pooled, se.w1, dz1);
  for (std::int64_t i = 0; i < N * C; ++i) {
    const T dp = fc1.input[i] / static_cast<T>(HW);
    T *dx = g.input.data() + i * HW;
    for (std::int64_t j = 0; j < HW; ++j) dx[j] += dp;
  }
  g.w1 = std::move(fc1.weights);
  g.b1 = std::move(fc1.bias);
  g.w2 = std::move(fc2.weights);
  g.b2 = std::move(fc2.bias);
  return g;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Dims &input_dims, const BasicTensor<T> &dout) {
  const std::int64_t N = input_dims[0], C = input_dims[1], HW = input_dims[2] * input_dims[3];
  if (static_cast<std::int64_t>(dout.size()) != N * C)
    throw Error(Errc::ShapeMismatch, "gap backward: dout size mismatch");
  BasicTensor<T> dx(input_dims);
  for (std::int64_t i = 0; i < N * C; ++i) {
    const T v = dout[i] / static_cast<T>(HW);
    std::fill(dx.data() + i * HW, dx.data() + (i + 1) * HW, v);
  }
  return dx;
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T> &dout, double rate, std::uint64_t seed) {
  // The mask is a pure function of (seed, index), so backward replays it.
  return dropout(dout, rate, Mode::Train, seed);
}

template <typename T>
FCGrads<T> fully_connected_backward(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                                    const BasicTensor<T> &dout) {
  const std::int64_t N = input.dim(0), D = input.dim(1), K = weights.dim(0);
  if (weights.dim(1) != D || dout.dims() != Dims{N, K})
    throw Error(Errc::ShapeMismatch, "fc backward: shape mismatch");
  FCGrads<T> g{BasicTensor<T>({N, D}), BasicTensor<T>({K, D}), BasicTensor<T>({K})};
  for (std::int64_t n = 0; n < N; ++n) {
    const T *x = input.data() + n * D;
    T *dx = g.input.data() + n * D;
    for (std::int64_t k = 0; k < K; ++k) {
      const T d = dout[n * K + k];
      const T *w = weights.data() + k * D;
      T *dw = g.weights.data() + k * D;
      g.bias[k] += d;
      for (std::int64_t j = 0; j < D; ++j) {
        dx[j] += d * w[j];
        dw[j] += d * x[j];
      }
    }
  }
  return g;
}

template <typename T>
LossAndGrad<T> softmax_cross_entropy(const BasicTensor<T> &logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw Error(Errc::ShapeMismatch, "cross-entropy expects [N,K] logits");
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw Error(Errc::InvalidLabel, "got " + std::to_string(labels.size()) + " labels for batch " +
                                        std::to_string(N));
  for (int y : labels)
    if (y < 0 || y >= K)
      throw Error(Errc::InvalidLabel,
                  "label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
  LossAndGrad<T> r{T(0), BasicTensor<T>(logits.dims())};
  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    const T *z = logits.data() + n * K;
    const double mx = *std::max_element(z, z + K);
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += std::exp(z[k] - mx);
    const double lse = mx + std::log(sum);
    total += lse - z[labels[n]];
    for (std::int64_t k = 0; k < K; ++k) {
      const double prob = std::exp(z[k] - lse);
      r.dlogits[n * K + k] = static_cast<T>((prob - (k == labels[n] ? 1.0 : 0.0)) / N);
    }
  }
  r.loss = static_cast<T>(total / N);
  return r;
}

namespace {

template <typename T>
const BasicTensor<T> &param_at(const ParamMap<T> &params, const std::string &name) {
  auto it = params.find(name);
  if (it == params.end()) throw Error(Errc::ShapeMismatch, "missing parameter " + name);
  return it->second;
}

template <typename T>
SEParams<T> se_params(const ParamMap<T> &params, const Layer &l) {
  return {l.channels, l.reduction, param_at(params, l.name + ".w1"),
          param_at(params, l.name + ".b1"), param_at(params, l.name + ".w2"),
          param_at(params, l.name + ".b2")};
}

}  // namespace

template <typename T>
BackwardResult<T> network_backward(const Network &net, const ParamMap<T> &params,
                                   const BasicTensor<T> &input, std::span<const int> labels,
                                   std::uint64_t dropout_seed, const BackwardOptions &opts) {
  ForwardOptions fo{opts.bn_batch_stats, opts.dropout_active, false, dropout_seed};
  BackwardResult<T> res{T(0), {}};
  GradTape<T> &tape = res.tape;
  tape.logits = run_network(net, params, input, fo, &tape.trace);
  auto lg = softmax_cross_entropy(tape.logits, labels);
  res.loss = lg.loss;
  BasicTensor<T> dy = std::move(lg.dlogits);

  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const Layer &l = net.layers[i];
    const LayerTrace<T> &rec = tape.trace[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        auto g = conv2d_backward(rec.input, param_at(params, l.name + ".weight"), l.conv, dy);
        tape.grads[l.name + ".weight"] = std::move(g.weights);
        if (l.conv.has_bias) tape.grads[l.name + ".bias"] = std::move(g.bias);
        dy = std::move(g.input);
        break;
      }
      case LayerKind::BatchNorm: {
        BatchNormGrads<T> g;
        if (opts.bn_batch_stats) {
          g = batchnorm_train_backward(rec.input, param_at(params, l.name + ".gamma"),
                                       rec.saved.at(0), rec.saved.at(1), kBatchNormEps, dy);
        } else {
          BatchNormParams<T> bn{param_at(params, l.name + ".gamma"),
                                param_at(params, l.name + ".beta"),
                                param_at(params, l.name + ".running_mean"),
                                param_at(params, l.name + ".running_var"), kBatchNormEps};
          g = batchnorm_infer_backward(rec.input, bn, dy);
        }
        tape.grads[l.name + ".gamma"] = std::move(g.gamma);
        tape.grads[l.name + ".beta"] = std::move(g.beta);
        dy = std::move(g.input);
        break;
      }
      case LayerKind::Act:
        dy = activation_backward(rec.input, l.act, dy);
        break;
      case LayerKind::SqueezeExcite: {
        auto g = se_backward(rec.input, se_params(params, l), dy);
        tape.grads[l.name + ".w1"] = std::move(g.w1);
        tape.grads[l.name + ".b1"] = std::move(g.b1);
        tape.grads[l.name + ".w2"] = std::move(g.w2);
        tape.grads[l.name + ".b2"] = std::move(g.b2);
        dy = std::move(g.input);
        break;
      }
      case LayerKind::GlobalAvgPool:
        dy = global_avg_pool_backward(rec.input.dims(), dy);
        break;
      case LayerKind::Dropout:
        if (opts.dropout_active) dy = dropout_backward(dy, l.rate, rec.seed);
        dy = dy.reshaped(rec.input.dims());
        break;
      case LayerKind::FullyConnected: {
        const auto &x = rec.input;
        auto g = fully_connected_backward(x.reshaped({x.dim(0), static_cast<std::int64_t>(x.size()) / x.dim(0)}),
                                          param_at(params, l.name + ".weight"), dy);
        tape.grads[l.name + ".weight"] = std::move(g.weights);
        tape.grads[l.name + ".bias"] = std::move(g.bias);
        dy = g.input.reshaped(x.dims());
        break;
      }
    }
  }
  tape.input_grad = std::move(dy);
  if (opts.inject_fault) {
    auto &g = tape.grads.at("stem.conv.weight");
    for (auto &v : g.values()) v *= T(1.5);
  }
  return res;
}

BackwardResult<float> model_backward(const Model &model, const Tensor &input,
                                     std::span<const int> labels, std::uint64_t dropout_seed,
                                     const BackwardOptions &opts) {
  return network_backward(model.network, model.params, input, labels, dropout_seed, opts);
}

void apply_running_stats(Model &model, const GradTape<float> &tape, double momentum) {
  const auto &layers = model.network.layers;
  if (tape.trace.size() != layers.size())
    throw Error(Errc::InvalidArgument, "tape does not cover the model's layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != LayerKind::BatchNorm || tape.trace[i].saved.size() != 2) continue;
    const auto &name = layers[i].name;
    Tensor &rm = model.params.at(name + ".running_mean");
    Tensor &rv = model.params.at(name + ".running_var");
    const auto &bm = tape.trace[i].saved[0];
    const auto &bv = tape.trace[i].saved[1];
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<float>((1.0 - momentum) * rm[c] + momentum * bm[c]);
      rv[c] = static_cast<float>((1.0 - momentum) * rv[c] + momentum * bv[c]);
    }
  }
}

LCNetConfig tiny_config() {
  LCNetConfig cfg;
  cfg.scale = 0.25;
  cfg.num_classes = 3;
  return cfg;
}

namespace {

// Which linear piece every piecewise activation input sits on. Two evaluations
// with equal signatures lie on one smooth piece of the loss.
std::uint64_t kink_signature(const Network &net, const Trace<double> &trace) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](unsigned v) { h = (h ^ v) * 0x100000001b3ULL; };
  auto hard = [](double x) -> unsigned { return x < -3.0 ? 0u : (x < 3.0 ? 1u : 2u); };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer &l = net.layers[i];
    if (l.kind == LayerKind::Act) {
      for (double x : trace[i].input.values())
        mix(l.act == Activation::HSwish ? hard(x) : (x > 0.0 ? 1u : 0u));
    } else if (l.kind == LayerKind::SqueezeExcite) {
      for (double x : trace[i].saved.at(1).values()) mix(x > 0.0 ? 1u : 0u);
      for (double x : trace[i].saved.at(2).values()) mix(hard(x));
    }
  }
  return h;
}

struct LossProbe {
  const Network &net;
  const TensorD &input;
  std::span<const int> labels;
  std::uint64_t seed;

  std::pair<double, std::uint64_t> operator()(const ParamMap<double> &params,
                                              const TensorD &x) const {
    Trace<double> trace;
    auto logits = run_network(net, params, x, ForwardOptions{true, true, false, seed}, &trace);
    return {softmax_cross_entropy(logits, labels).loss, kink_signature(net, trace)};
  }
};

}  // namespace

GradCheckReport grad_check(const LCNetConfig &config, std::uint64_t seed,
                           const GradCheckOptions &opts) {
  const Network net = build_network(config);
  ParamMap<float> init;
  init_params(net, init, seed);
  ParamMap<double> params;
  Rng rng(seed ^ 0x6a09e667f3bcc908ULL);
  // Move BN affine terms and biases off their init constants so every
  // gradient path carries signal.
  for (const auto &info : net.params()) {
    TensorD t = init.at(info.name).cast<double>();
    if (info.role == ParamRole::Gamma)
      for (auto &v : t.values()) v = 1.0 + 0.2 * rng.normal();
    else if (info.role == ParamRole::Beta || info.role == ParamRole::Bias)
      for (auto &v : t.values()) v = 0.1 * rng.normal();
    params.emplace(info.name, std::move(t));
  }

  TensorD input({opts.batch, 3, opts.input_hw, opts.input_hw});
  for (auto &v : input.values()) v = rng.normal();
  std::vector<int> labels(static_cast<std::size_t>(opts.batch));
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<int>(i % static_cast<std::size_t>(config.num_classes));
  const std::uint64_t dropout_seed = splitmix64(seed);

  BackwardOptions bopts;
  bopts.inject_fault = opts.inject_fault;
  const auto base = network_backward(net, params, input, labels, dropout_seed, bopts);
  const LossProbe probe{net, input, labels, dropout_seed};
  const std::uint64_t base_sig = probe(params, input).second;

  // (tensor name, index) draws: every trainable tensor, then random top-up.
  std::vector<std::string> names;
  for (const auto &[name, g] : base.tape.grads) names.push_back(name);
  std::vector<std::string> plan;
  for (const auto &name : names)
    for (int i = 0; i < opts.samples_per_tensor; ++i) plan.push_back(name);
  while (static_cast<int>(plan.size()) < opts.min_samples)
    plan.push_back(names[rng.below(names.size())]);
  for (int i = 0; i < opts.input_samples; ++i) plan.push_back("input");

  GradCheckReport rep;
  TensorD x = input;
  for (const auto &name : plan) {
    const bool is_input = name == "input";
    TensorD &target = is_input ? x : params.at(name);
    const TensorD &grad = is_input ? base.tape.input_grad : base.tape.grads.at(name);
    for (int attempt = 0; attempt < 32; ++attempt) {
      const std::int64_t idx = static_cast<std::int64_t>(rng.below(target.size()));
      const double theta = target[idx];
      const double h = opts.h_scale * std::max(1.0, std::fabs(theta));
      bool crossed = false;
      auto central = [&](double step) {
        target[idx] = theta + step;
        auto [lp, sp] = probe(params, x);
        target[idx] = theta - step;
        auto [lm, sm] = probe(params, x);
        target[idx] = theta;
        crossed = crossed || sp != base_sig || sm != base_sig;
        return (lp - lm) / (2.0 * step);
      };
      // Richardson table over steps h, h/2, h/4, ...; each level cancels the
      // next even power of h.
      std::vector<double> d;
      for (int k = 0; k <= opts.richardson_levels; ++k) d.push_back(central(std::ldexp(h, -k)));
      if (crossed) {
        ++rep.resampled;
        continue;
      }
      for (int level = 1; level <= opts.richardson_levels; ++level) {
        const double f = std::ldexp(1.0, 2 * level);
        for (std::size_t k = d.size() - 1; k >= static_cast<std::size_t>(level); --k)
          d[k] = (f * d[k] - d[k - 1]) / (f - 1.0);
      }
      const double numeric = d.back();
      const double analytic = grad[idx];
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(analytic - numeric) / denom;
      rep.entries.push_back({name, idx, analytic, numeric, rel});
      ++rep.checked;
      if (rel >= rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst = name + "[" + std::to_string(idx) + "]";
      }
      break;
    }
  }
  return rep;
}

#define LCNET_INSTANTIATE_AUTODIFF(T)                                                             \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T> &, const BasicTensor<T> &,           \
                                        const ConvDesc &, const BasicTensor<T> &);                \
  template BatchNormGrads<T> batchnorm_train_backward(                                            \
      const BasicTensor<T> &, const BasicTensor<T> &, const BasicTensor<T> &,                     \
      const BasicTensor<T> &, double, const BasicTensor<T> &);                                    \
  template BatchNormGrads<T> batchnorm_infer_backward(                                            \
      const BasicTensor<T> &, const BatchNormParams<T> &, const BasicTensor<T> &);                \
  template BasicTensor<T> activation_backward(const BasicTensor<T> &, Activation,                 \
                                              const BasicTensor<T> &);                            \
  template BasicTensor<T> hsigmoid_backward(const BasicTensor<T> &, const BasicTensor<T> &);      \
  template SEGrads<T> se_backward(const BasicTensor<T> &, const SEParams<T> &,                    \
                                  const BasicTensor<T> &);                                        \
  template BasicTensor<T> global_avg_pool_backward(const Dims &, const BasicTensor<T> &);         \
  template BasicTensor<T> dropout_backward(const BasicTensor<T> &, double, std::uint64_t);        \
  template FCGrads<T> fully_connected_backward(const BasicTensor<T> &, const BasicTensor<T> &,    \
                                               const BasicTensor<T> &);                           \
  template LossAndGrad<T> softmax_cross_entropy(const BasicTensor<T> &, std::span<const int>);    \
  template BackwardResult<T> network_backward(const Network &, const ParamMap<T> &,               \
                                              const BasicTensor<T> &, std::span<const int>,       \
                                              std::uint64_t, const BackwardOptions &);

LCNET_INSTANTIATE_AUTODIFF(float)
LCNET_INSTANTIATE_AUTODIFF(double)

}  // namespace lcnet
