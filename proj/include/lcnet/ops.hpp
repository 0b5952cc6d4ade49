#pragma once

#include <cstdint>
#include <span>

#include "lcnet/tensor.hpp"

namespace lcnet {

enum class Mode { Train, Infer };

// Square convolution with SAME-style padding. Depthwise means groups == channels.
struct ConvDesc {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  bool depthwise = false;
  bool has_bias = false;

  static ConvDesc standard(int cin, int cout, int kernel, int stride, bool bias = false) {
    return {cin, cout, kernel, stride, (kernel - 1) / 2, false, bias};
  }
  static ConvDesc dw(int channels, int kernel, int stride) {
    return {channels, channels, kernel, stride, (kernel - 1) / 2, true, false};
  }

  int in_per_group() const { return depthwise ? 1 : in_channels; }
  Dims weight_dims() const {
    return {out_channels, in_per_group(), kernel, kernel};
  }
  std::int64_t out_extent(std::int64_t in) const { return (in + 2 * padding - kernel) / stride + 1; }

  // Throws InvalidArgument on kernel/stride/padding outside the supported set.
  void validate() const;
};

template <typename T>
struct BatchNormParams {
  BasicTensor<T> gamma, beta, running_mean, running_var;
  double eps = 1e-5;

  static BatchNormParams unit(int channels, double eps = 1e-5) {
    return {BasicTensor<T>({channels}, T(1)), BasicTensor<T>({channels}, T(0)),
            BasicTensor<T>({channels}, T(0)), BasicTensor<T>({channels}, T(1)), eps};
  }
  std::int64_t channels() const { return gamma.size(); }
};

// Squeeze-and-excitation: gate = hsigmoid(w2 relu(w1 mean(x) + b1) + b2).
// w1 is [channels/reduction, channels], w2 is [channels, channels/reduction].
template <typename T>
struct SEParams {
  int channels = 0;
  int reduction = 4;
  BasicTensor<T> w1, b1, w2, b2;

  int reduced() const { return channels / reduction; }
};

template <typename T>
struct BatchNormTrainResult {
  BasicTensor<T> output;
  BasicTensor<T> batch_mean;
  BasicTensor<T> batch_var;  // biased
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
};

template <typename T>
struct FoldedConv {
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr int kSEReduction = 4;
inline constexpr float kDefaultDropout = 0.2f;

// Output dims of a convolution; validates input/weight shapes against desc.
Dims conv2d_output_dims(const Dims &input, const Dims &weights, std::size_t bias_len,
                        const ConvDesc &desc);

// Direct summation over the zero-padded receptive field. Reference semantics.
template <typename T>
BasicTensor<T> conv2d_naive(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                            std::span<const T> bias, const ConvDesc &desc);

// GEMM lowering for standard convs, row-streaming direct kernel for depthwise.
// Each output element is summed in (cin, ky, kx) order regardless of workers.
template <typename T>
BasicTensor<T> conv2d_fast(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                           std::span<const T> bias, const ConvDesc &desc);

template <typename T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T> &input, const BatchNormParams<T> &bn);

template <typename T>
BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T> &input, const BatchNormParams<T> &bn,
                                        double momentum = kBatchNormMomentum);

template <typename T>
FoldedConv<T> bn_fold(const BasicTensor<T> &conv_weights, std::span<const T> conv_bias,
                      const BatchNormParams<T> &bn);

template <typename T>
inline T hsigmoid_scalar(T x) {
  T r = x + T(3);
  r = r < T(0) ? T(0) : (r > T(6) ? T(6) : r);
  return r / T(6);
}
template <typename T>
inline T hswish_scalar(T x) {
  T r = x + T(3);
  r = r < T(0) ? T(0) : (r > T(6) ? T(6) : r);
  return x * r / T(6);
}

template <typename T>
BasicTensor<T> hswish(const BasicTensor<T> &x);
template <typename T>
BasicTensor<T> hsigmoid(const BasicTensor<T> &x);
template <typename T>
BasicTensor<T> relu(const BasicTensor<T> &x);

template <typename T>
BasicTensor<T> se_apply(const BasicTensor<T> &input, const SEParams<T> &se);

// [N,C,H,W] -> [N,C,1,1]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T> &input);

// input [N,D], weights [K,D], bias [K] -> [N,K]
template <typename T>
BasicTensor<T> fully_connected(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                               std::span<const T> bias);

// Row-wise over the last axis of a [N,K] tensor.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T> &logits);

// Keep-mask for inverted dropout: element i survives iff uniform(seed, i) >= rate.
bool dropout_keep(std::uint64_t seed, std::uint64_t index, double rate);

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T> &x, double rate, Mode mode, std::uint64_t seed);

}  // namespace lcnet
