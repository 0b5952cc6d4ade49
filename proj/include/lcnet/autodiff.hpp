#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcnet/arch.hpp"
#include "lcnet/ops.hpp"

namespace lcnet {

// ---- per-layer backward kernels ------------------------------------------

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;  // empty dims when the conv has no bias
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                             const ConvDesc &desc, const BasicTensor<T> &dout);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input, gamma, beta;
};

// Backward through batch-statistics normalization (biased variance).
template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const BasicTensor<T> &input, const BasicTensor<T> &gamma,
                                           const BasicTensor<T> &batch_mean,
                                           const BasicTensor<T> &batch_var, double eps,
                                           const BasicTensor<T> &dout);

// Backward through running-statistics normalization.
template <typename T>
BatchNormGrads<T> batchnorm_infer_backward(const BasicTensor<T> &input, const BatchNormParams<T> &bn,
                                           const BasicTensor<T> &dout);

// Derivatives at the kinks take the right-hand piece.
template <typename T>
inline T hswish_grad_scalar(T x) {
  if (x < T(-3)) return T(0);
  if (x < T(3)) return (T(2) * x + T(3)) / T(6);
  return T(1);
}
template <typename T>
inline T hsigmoid_grad_scalar(T x) {
  return (x >= T(-3) && x < T(3)) ? T(1) / T(6) : T(0);
}
template <typename T>
inline T relu_grad_scalar(T x) {
  return x > T(0) ? T(1) : T(0);
}

template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T> &input, Activation act,
                                   const BasicTensor<T> &dout);
template <typename T>
BasicTensor<T> hsigmoid_backward(const BasicTensor<T> &input, const BasicTensor<T> &dout);

template <typename T>
struct SEGrads {
  BasicTensor<T> input, w1, b1, w2, b2;
};

template <typename T>
SEGrads<T> se_backward(const BasicTensor<T> &input, const SEParams<T> &se,
                       const BasicTensor<T> &dout);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Dims &input_dims, const BasicTensor<T> &dout);

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T> &dout, double rate, std::uint64_t seed);

template <typename T>
struct FCGrads {
  BasicTensor<T> input, weights, bias;
};

template <typename T>
FCGrads<T> fully_connected_backward(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                                    const BasicTensor<T> &dout);

// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
template <typename T>
struct LossAndGrad {
  T loss;
  BasicTensor<T> dlogits;
};

template <typename T>
LossAndGrad<T> softmax_cross_entropy(const BasicTensor<T> &logits, std::span<const int> labels);

// ---- whole-network backward ----------------------------------------------

template <typename T>
struct GradTape {
  Trace<T> trace;          // one entry per executed layer
  ParamMap<T> grads;       // trainable parameters only, shapes equal to the params
  BasicTensor<T> input_grad;
  BasicTensor<T> logits;
};

template <typename T>
struct BackwardResult {
  T loss;
  GradTape<T> tape;
};

struct BackwardOptions {
  bool bn_batch_stats = true;
  bool dropout_active = true;
  // Test hook: deliberately corrupts the stem conv weight gradient.
  bool inject_fault = false;
};

template <typename T>
BackwardResult<T> network_backward(const Network &net, const ParamMap<T> &params,
                                   const BasicTensor<T> &input, std::span<const int> labels,
                                   std::uint64_t dropout_seed, const BackwardOptions &opts = {});

BackwardResult<float> model_backward(const Model &model, const Tensor &input,
                                     std::span<const int> labels, std::uint64_t dropout_seed,
                                     const BackwardOptions &opts = {});

// Folds the batch statistics recorded on the tape into the model's running stats.
void apply_running_stats(Model &model, const GradTape<float> &tape,
                         double momentum = kBatchNormMomentum);

// ---- finite-difference check ---------------------------------------------

struct GradCheckOptions {
  std::int64_t batch = 4;
  std::int64_t input_hw = 32;
  double h_scale = 1e-3;        // h = h_scale * max(1, |theta|)
  // Central differences at h, h/2, ..., h/2^levels combined by Richardson
  // extrapolation; 0 is the plain two-point difference.
  int richardson_levels = 2;
  int samples_per_tensor = 3;
  int min_samples = 200;
  int input_samples = 24;
  bool inject_fault = false;
};

struct GradCheckEntry {
  std::string name;  // parameter name, or "input"
  std::int64_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  int checked = 0;
  int resampled = 0;  // draws rejected because the difference straddled a kink
  std::vector<GradCheckEntry> entries;
};

// The canonical tiny configuration: scale 0.25, 3 classes, default masks.
LCNetConfig tiny_config();

// Recomputes forward/backward in 64-bit and compares analytic gradients with
// central differences on a sample spanning every parameter tensor and the input.
GradCheckReport grad_check(const LCNetConfig &config, std::uint64_t seed,
                           const GradCheckOptions &opts = {});

}  // namespace lcnet
