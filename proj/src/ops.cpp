#include "lcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "lcnet/parallel.hpp"
#include "lcnet/random.hpp"

namespace lcnet {

void ConvDesc::validate() const {
  if (kernel != 1 && kernel != 3 && kernel != 5)
    throw Error(Errc::InvalidArgument, "kernel must be 1, 3 or 5, got " + std::to_string(kernel));
  if (stride != 1 && stride != 2)
    throw Error(Errc::InvalidArgument, "stride must be 1 or 2, got " + std::to_string(stride));
  if (padding != (kernel - 1) / 2)
    throw Error(Errc::InvalidArgument, "padding must be (kernel-1)/2");
  if (in_channels < 1 || out_channels < 1)
    throw Error(Errc::InvalidArgument, "channel counts must be positive");
  if (depthwise && in_channels != out_channels)
    throw Error(Errc::InvalidArgument, "depthwise conv requires in_channels == out_channels");
}

Dims conv2d_output_dims(const Dims &input, const Dims &weights, std::size_t bias_len,
                        const ConvDesc &desc) {
  desc.validate();
  if (input.size() != 4)
    throw Error(Errc::ShapeMismatch, "conv input must be 4-D, got " + dims_to_string(input));
  if (input[1] != desc.in_channels)
    throw Error(Errc::ShapeMismatch, "conv input has " + std::to_string(input[1]) +
                                         " channels, desc expects " +
                                         std::to_string(desc.in_channels));
  if (weights != desc.weight_dims())
    throw Error(Errc::ShapeMismatch, "conv weights " + dims_to_string(weights) + " != expected " +
                                         dims_to_string(desc.weight_dims()));
  if (bias_len != 0 && bias_len != static_cast<std::size_t>(desc.out_channels))
    throw Error(Errc::ShapeMismatch, "conv bias length " + std::to_string(bias_len) +
                                         " != out_channels " + std::to_string(desc.out_channels));
  if (desc.has_bias && bias_len == 0)
    throw Error(Errc::ShapeMismatch, "conv desc requires a bias");
  return {input[0], desc.out_channels, desc.out_extent(input[2]), desc.out_extent(input[3])};
}

template <typename T>
BasicTensor<T> conv2d_naive(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                            std::span<const T> bias, const ConvDesc &desc) {
  BasicTensor<T> out(conv2d_output_dims(input.dims(), weights.dims(), bias.size(), desc));
  const std::int64_t N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const std::int64_t Ho = out.dim(2), Wo = out.dim(3);
  const int k = desc.kernel, s = desc.stride, p = desc.padding;
  const int cin_g = desc.in_per_group();
  for (std::int64_t n = 0; n < N; ++n)
    for (int co = 0; co < desc.out_channels; ++co)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          T acc = T(0);
          for (int cg = 0; cg < cin_g; ++cg) {
            const int ci = desc.depthwise ? co : cg;
            for (int ky = 0; ky < k; ++ky) {
              const std::int64_t iy = oy * s - p + ky;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k; ++kx) {
                const std::int64_t ix = ox * s - p + kx;
                if (ix < 0 || ix >= W) continue;
                acc += weights[((co * cin_g + cg) * k + ky) * k + kx] *
                       input[((n * input.dim(1) + ci) * H + iy) * W + ix];
              }
            }
          }
          if (!bias.empty()) acc += bias[co];
          out[((n * desc.out_channels + co) * Ho + oy) * Wo + ox] = acc;
        }
  return out;
}

namespace {

constexpr std::int64_t kRowBlock = 4;
constexpr std::int64_t kColBlock = 256;

// C[M,N] = A[M,K] * B[K,N], all row-major and dense. Every C element is
// accumulated over k = 0..K-1 in order, starting from zero.
template <typename T>
void gemm(const T *A, const T *B, T *C, std::int64_t M, std::int64_t N, std::int64_t K) {
  const std::int64_t mt = (M + kRowBlock - 1) / kRowBlock;
  const std::int64_t nt = (N + kColBlock - 1) / kColBlock;
  parallel_for(mt * nt, [&](std::int64_t t0, std::int64_t t1) {
    alignas(64) T acc[kRowBlock][kColBlock];
    for (std::int64_t t = t0; t < t1; ++t) {
      const std::int64_t m0 = (t / nt) * kRowBlock;
      const std::int64_t p0 = (t % nt) * kColBlock;
      const std::int64_t rows = std::min(kRowBlock, M - m0);
      const std::int64_t cols = std::min(kColBlock, N - p0);
      for (std::int64_t r = 0; r < rows; ++r) std::fill(acc[r], acc[r] + cols, T(0));
      if (rows == kRowBlock) {
        T *c0 = acc[0], *c1 = acc[1], *c2 = acc[2], *c3 = acc[3];
        for (std::int64_t k = 0; k < K; ++k) {
          const T a0 = A[(m0 + 0) * K + k], a1 = A[(m0 + 1) * K + k];
          const T a2 = A[(m0 + 2) * K + k], a3 = A[(m0 + 3) * K + k];
          const T *b = B + k * N + p0;
          for (std::int64_t j = 0; j < cols; ++j) {
            const T bj = b[j];
            c0[j] += a0 * bj;
            c1[j] += a1 * bj;
            c2[j] += a2 * bj;
            c3[j] += a3 * bj;
          }
        }
      } else {
        for (std::int64_t k = 0; k < K; ++k) {
          const T *b = B + k * N + p0;
          for (std::int64_t r = 0; r < rows; ++r) {
            const T a = A[(m0 + r) * K + k];
            T *c = acc[r];
            for (std::int64_t j = 0; j < cols; ++j) c[j] += a * b[j];
          }
        }
      }
      for (std::int64_t r = 0; r < rows; ++r)
        std::copy(acc[r], acc[r] + cols, C + (m0 + r) * N + p0);
    }
  });
}

// Column matrix [Cin*k*k, Ho*Wo]; row index order is (ci, ky, kx).
template <typename T>
void im2col(const T *img, std::int64_t C, std::int64_t H, std::int64_t W, int k, int s, int p,
            std::int64_t Ho, std::int64_t Wo, T *col) {
  parallel_for(C * k * k, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const std::int64_t kx = r % k, ky = (r / k) % k, c = r / (k * k);
      T *dst = col + r * Ho * Wo;
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        const std::int64_t iy = oy * s - p + ky;
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          const std::int64_t ix = ox * s - p + kx;
          dst[oy * Wo + ox] =
              (iy >= 0 && iy < H && ix >= 0 && ix < W) ? img[(c * H + iy) * W + ix] : T(0);
        }
      }
    }
  });
}

template <typename T>
void depthwise_plane(const T *in, const T *w, T *out, std::int64_t H, std::int64_t W,
                     std::int64_t Ho, std::int64_t Wo, int k, int s, int p) {
  for (std::int64_t oy = 0; oy < Ho; ++oy) {
    T *row = out + oy * Wo;
    std::fill(row, row + Wo, T(0));
    for (int ky = 0; ky < k; ++ky) {
      const std::int64_t iy = oy * s - p + ky;
      if (iy < 0 || iy >= H) continue;
      const T *src = in + iy * W;
      for (int kx = 0; kx < k; ++kx) {
        const T wv = w[ky * k + kx];
        // ox range with 0 <= ox*s - p + kx < W
        const std::int64_t lo = std::max<std::int64_t>(0, (p - kx + s - 1) / s);
        const std::int64_t last = W - 1 + p - kx;
        if (last < 0) continue;
        const std::int64_t hi = std::min<std::int64_t>(Wo, last / s + 1);
        if (s == 1) {
          const std::int64_t shift = kx - p;
          for (std::int64_t ox = lo; ox < hi; ++ox) row[ox] += wv * src[ox + shift];
        } else {
          for (std::int64_t ox = lo; ox < hi; ++ox) row[ox] += wv * src[ox * s - p + kx];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_fast(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                           std::span<const T> bias, const ConvDesc &desc) {
  BasicTensor<T> out(conv2d_output_dims(input.dims(), weights.dims(), bias.size(), desc));
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t Co = out.dim(1), Ho = out.dim(2), Wo = out.dim(3);
  const int k = desc.kernel, s = desc.stride, p = desc.padding;

  if (desc.depthwise) {
    parallel_for(N * C, [&](std::int64_t i0, std::int64_t i1) {
      for (std::int64_t i = i0; i < i1; ++i) {
        const std::int64_t c = i % C;
        depthwise_plane(input.data() + i * H * W, weights.data() + c * k * k,
                        out.data() + i * Ho * Wo, H, W, Ho, Wo, k, s, p);
      }
    });
  } else {
    const std::int64_t K = C * k * k;
    std::vector<T> col;
    const bool direct = (k == 1 && s == 1);
    if (!direct) col.resize(static_cast<std::size_t>(K * Ho * Wo));
    for (std::int64_t n = 0; n < N; ++n) {
      const T *img = input.data() + n * C * H * W;
      const T *B = img;
      if (!direct) {
        im2col(img, C, H, W, k, s, p, Ho, Wo, col.data());
        B = col.data();
      }
      gemm(weights.data(), B, out.data() + n * Co * Ho * Wo, Co, Ho * Wo, K);
    }
  }
  if (!bias.empty()) {
    parallel_for(N * Co, [&](std::int64_t i0, std::int64_t i1) {
      for (std::int64_t i = i0; i < i1; ++i) {
        const T b = bias[i % Co];
        T *o = out.data() + i * Ho * Wo;
        for (std::int64_t j = 0; j < Ho * Wo; ++j) o[j] += b;
      }
    });
  }
  return out;
}

namespace {

template <typename T>
void check_bn(const Dims &in, const BatchNormParams<T> &bn) {
  if (in.size() != 4) throw Error(Errc::ShapeMismatch, "batchnorm input must be 4-D");
  const std::int64_t C = in[1];
  for (const auto *v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
    if (static_cast<std::int64_t>(v->size()) != C)
      throw Error(Errc::ShapeMismatch, "batchnorm has " + std::to_string(v->size()) +
                                           " channels, input has " + std::to_string(C));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T> &input, const BatchNormParams<T> &bn) {
  check_bn(input.dims(), bn);
  BasicTensor<T> out(input.dims());
  const std::int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  parallel_for(N * C, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) {
      const std::int64_t c = i % C;
      const T scale = bn.gamma[c] / std::sqrt(bn.running_var[c] + T(bn.eps));
      const T mean = bn.running_mean[c], beta = bn.beta[c];
      const T *x = input.data() + i * HW;
      T *o = out.data() + i * HW;
      for (std::int64_t j = 0; j < HW; ++j) o[j] = (x[j] - mean) * scale + beta;
    }
  });
  return out;
}

template <typename T>
BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T> &input, const BatchNormParams<T> &bn,
                                        double momentum) {
  check_bn(input.dims(), bn);
  const std::int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  const std::int64_t count = N * HW;
  if (count < 2)
    throw Error(Errc::DegenerateBatch,
                "batch statistics need N*H*W >= 2, got " + std::to_string(count));
  BatchNormTrainResult<T> r{BasicTensor<T>(input.dims()), BasicTensor<T>({C}),
                            BasicTensor<T>({C}), BasicTensor<T>({C}), BasicTensor<T>({C})};
  parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c) {
      double sum = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T *x = input.data() + (n * C + c) * HW;
        for (std::int64_t j = 0; j < HW; ++j) sum += x[j];
      }
      const double mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T *x = input.data() + (n * C + c) * HW;
        for (std::int64_t j = 0; j < HW; ++j) {
          const double d = x[j] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      const double inv_std = 1.0 / std::sqrt(var + bn.eps);
      r.batch_mean[c] = static_cast<T>(mean);
      r.batch_var[c] = static_cast<T>(var);
      const double g = bn.gamma[c], b = bn.beta[c];
      for (std::int64_t n = 0; n < N; ++n) {
        const T *x = input.data() + (n * C + c) * HW;
        T *o = r.output.data() + (n * C + c) * HW;
        for (std::int64_t j = 0; j < HW; ++j) o[j] = static_cast<T>(g * ((x[j] - mean) * inv_std) + b);
      }
      r.running_mean[c] =
          static_cast<T>((1.0 - momentum) * bn.running_mean[c] + momentum * mean);
      r.running_var[c] = static_cast<T>((1.0 - momentum) * bn.running_var[c] + momentum * var);
    }
  });
  return r;
}

template <typename T>
FoldedConv<T> bn_fold(const BasicTensor<T> &conv_weights, std::span<const T> conv_bias,
                      const BatchNormParams<T> &bn) {
  const std::int64_t Co = conv_weights.dim(0);
  if (bn.channels() != Co || static_cast<std::int64_t>(bn.beta.size()) != Co ||
      static_cast<std::int64_t>(bn.running_mean.size()) != Co ||
      static_cast<std::int64_t>(bn.running_var.size()) != Co)
    throw Error(Errc::ShapeMismatch, "batchnorm channels != conv out_channels");
  if (!conv_bias.empty() && static_cast<std::int64_t>(conv_bias.size()) != Co)
    throw Error(Errc::ShapeMismatch, "conv bias length != out_channels");
  FoldedConv<T> f{conv_weights, BasicTensor<T>({Co})};
  const std::int64_t per = static_cast<std::int64_t>(conv_weights.size()) / Co;
  for (std::int64_t c = 0; c < Co; ++c) {
    const T scale = bn.gamma[c] / std::sqrt(bn.running_var[c] + T(bn.eps));
    for (std::int64_t j = 0; j < per; ++j) f.weights[c * per + j] *= scale;
    const T b = conv_bias.empty() ? T(0) : conv_bias[c];
    f.bias[c] = (b - bn.running_mean[c]) * scale + bn.beta[c];
  }
  return f;
}

template <typename T>
BasicTensor<T> hswish(const BasicTensor<T> &x) {
  BasicTensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = hswish_scalar(x[i]);
  return out;
}

template <typename T>
BasicTensor<T> hsigmoid(const BasicTensor<T> &x) {
  BasicTensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = hsigmoid_scalar(x[i]);
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T> &x) {
  BasicTensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> se_apply(const BasicTensor<T> &input, const SEParams<T> &se) {
  if (input.rank() != 4 || input.dim(1) != se.channels)
    throw Error(Errc::ShapeMismatch, "SE expects " + std::to_string(se.channels) +
                                         " channels, input is " + dims_to_string(input.dims()));
  const int C = se.channels, R = se.reduced();
  if (se.reduction < 1 || C % se.reduction != 0)
    throw Error(Errc::ShapeMismatch, "SE channels not divisible by reduction");
  if (se.w1.dims() != Dims{R, C} || se.b1.size() != static_cast<std::size_t>(R) ||
      se.w2.dims() != Dims{C, R} || se.b2.size() != static_cast<std::size_t>(C))
    throw Error(Errc::ShapeMismatch, "SE parameter shapes do not match channels/reduction");

  const std::int64_t N = input.dim(0);
  BasicTensor<T> pooled = global_avg_pool(input).reshaped({N, C});
  BasicTensor<T> hidden = relu(fully_connected(pooled, se.w1, se.b1.values()));
  BasicTensor<T> gate = hsigmoid(fully_connected(hidden, se.w2, se.b2.values()));
  BasicTensor<T> out(input.dims());
  const std::int64_t HW = input.dim(2) * input.dim(3);
  for (std::int64_t i = 0; i < N * C; ++i) {
    const T g = gate[i];
    const T *x = input.data() + i * HW;
    T *o = out.data() + i * HW;
    for (std::int64_t j = 0; j < HW; ++j) o[j] = x[j] * g;
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T> &input) {
  if (input.rank() != 4) throw Error(Errc::ShapeMismatch, "global_avg_pool expects 4-D input");
  const std::int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  BasicTensor<T> out({N, C, 1, 1});
  for (std::int64_t i = 0; i < N * C; ++i) {
    double sum = 0.0;
    const T *x = input.data() + i * HW;
    for (std::int64_t j = 0; j < HW; ++j) sum += x[j];
    out[i] = static_cast<T>(sum / static_cast<double>(HW));
  }
  return out;
}

template <typename T>
BasicTensor<T> fully_connected(const BasicTensor<T> &input, const BasicTensor<T> &weights,
                               std::span<const T> bias) {
  if (input.rank() != 2 || weights.rank() != 2 || weights.dim(1) != input.dim(1))
    throw Error(Errc::ShapeMismatch, "fully_connected: input " + dims_to_string(input.dims()) +
                                         " vs weights " + dims_to_string(weights.dims()));
  const std::int64_t N = input.dim(0), D = input.dim(1), K = weights.dim(0);
  if (!bias.empty() && static_cast<std::int64_t>(bias.size()) != K)
    throw Error(Errc::ShapeMismatch, "fully_connected: bias length != output width");
  BasicTensor<T> out({N, K});
  parallel_for(N * K, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) {
      const std::int64_t n = i / K, kk = i % K;
      const T *x = input.data() + n * D;
      const T *w = weights.data() + kk * D;
      T acc = T(0);
      for (std::int64_t d = 0; d < D; ++d) acc += x[d] * w[d];
      if (!bias.empty()) acc += bias[kk];
      out[i] = acc;
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T> &logits) {
  if (logits.rank() != 2) throw Error(Errc::ShapeMismatch, "softmax expects [N,K]");
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  BasicTensor<T> out(logits.dims());
  std::vector<double> e(static_cast<std::size_t>(K));
  for (std::int64_t n = 0; n < N; ++n) {
    const T *z = logits.data() + n * K;
    const double mx = *std::max_element(z, z + K);
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += (e[k] = std::exp(z[k] - mx));
    for (std::int64_t k = 0; k < K; ++k) out[n * K + k] = static_cast<T>(e[k] / sum);
  }
  return out;
}

bool dropout_keep(std::uint64_t seed, std::uint64_t index, double rate) {
  return hash_uniform(seed, index) >= rate;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T> &x, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw Error(Errc::InvalidRate, "dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::Infer || rate == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  BasicTensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = dropout_keep(seed, i, rate) ? x[i] * scale : T(0);
  return out;
}

#define LCNET_INSTANTIATE_OPS(T)                                                                  \
  template BasicTensor<T> conv2d_naive(const BasicTensor<T> &, const BasicTensor<T> &,             \
                                       std::span<const T>, const ConvDesc &);                      \
  template BasicTensor<T> conv2d_fast(const BasicTensor<T> &, const BasicTensor<T> &,              \
                                      std::span<const T>, const ConvDesc &);                       \
  template BasicTensor<T> batchnorm_infer(const BasicTensor<T> &, const BatchNormParams<T> &);     \
  template BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T> &,                         \
                                                   const BatchNormParams<T> &, double);            \
  template FoldedConv<T> bn_fold(const BasicTensor<T> &, std::span<const T>,                      \
                                 const BatchNormParams<T> &);                                     \
  template BasicTensor<T> hswish(const BasicTensor<T> &);                                          \
  template BasicTensor<T> hsigmoid(const BasicTensor<T> &);                                        \
  template BasicTensor<T> relu(const BasicTensor<T> &);                                            \
  template BasicTensor<T> se_apply(const BasicTensor<T> &, const SEParams<T> &);                   \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T> &);                                 \
  template BasicTensor<T> fully_connected(const BasicTensor<T> &, const BasicTensor<T> &,          \
                                          std::span<const T>);                                     \
  template BasicTensor<T> softmax(const BasicTensor<T> &);                                         \
  template BasicTensor<T> dropout(const BasicTensor<T> &, double, Mode, std::uint64_t);

LCNET_INSTANTIATE_OPS(float)
LCNET_INSTANTIATE_OPS(double)

}  // namespace lcnet
