#include "lcnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace lcnet {

const char *errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidShape: return "invalid-shape";
    case Errc::OutOfBounds: return "out-of-bounds";
    case Errc::ShapeMismatch: return "shape-mismatch";
    case Errc::DegenerateBatch: return "degenerate-batch";
    case Errc::InvalidRate: return "invalid-rate";
    case Errc::InvalidArgument: return "invalid-argument";
    case Errc::InvalidConfig: return "invalid-config";
    case Errc::InvalidLabel: return "invalid-label";
    case Errc::OutOfRange: return "out-of-range";
    case Errc::IoError: return "io-error";
    case Errc::CorruptFile: return "corrupt-file";
  }
  return "unknown";
}

std::int64_t dims_product(const Dims &dims) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string dims_to_string(const Dims &dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

void validate_dims(const Dims &dims) {
  if (dims.empty()) throw Error(Errc::InvalidShape, "dims must be non-empty");
  for (auto d : dims) {
    if (d < 1) throw Error(Errc::InvalidShape, "non-positive extent in " + dims_to_string(dims));
  }
}

std::int64_t tensor_offset(const Dims &dims, std::span<const std::int64_t> index) {
  if (index.size() != dims.size()) {
    throw Error(Errc::OutOfBounds, "index rank " + std::to_string(index.size()) +
                                       " != tensor rank " + std::to_string(dims.size()));
  }
  std::int64_t off = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (index[i] < 0 || index[i] >= dims[i]) {
      throw Error(Errc::OutOfBounds, "index " + std::to_string(index[i]) + " out of extent " +
                                         std::to_string(dims[i]) + " on axis " + std::to_string(i));
    }
    off = off * dims[i] + index[i];
  }
  return off;
}

template <typename T>
bool tensor_allclose(const BasicTensor<T> &a, const BasicTensor<T> &b, double rtol, double atol) {
  if (a.dims() != b.dims()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = a[i], y = b[i];
    if (x == y) continue;  // covers equal infinities
    if (!(std::fabs(x - y) <= atol + rtol * std::fabs(y))) return false;
  }
  return true;
}

template <typename T>
double tensor_max_violation(const BasicTensor<T> &a, const BasicTensor<T> &b, double rtol,
                            double atol) {
  if (a.dims() != b.dims()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = a[i], y = b[i];
    double bound = atol + rtol * std::fabs(y);
    double r = std::fabs(x - y) / (bound > 0 ? bound : std::numeric_limits<double>::min());
    if (std::isnan(r)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, r);
  }
  return worst;
}

template <typename T>
bool tensor_bit_equal(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  return a.dims() == b.dims() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

template bool tensor_allclose(const Tensor &, const Tensor &, double, double);
template bool tensor_allclose(const TensorD &, const TensorD &, double, double);
template double tensor_max_violation(const Tensor &, const Tensor &, double, double);
template double tensor_max_violation(const TensorD &, const TensorD &, double, double);
template bool tensor_bit_equal(const Tensor &, const Tensor &);
template bool tensor_bit_equal(const TensorD &, const TensorD &);

}  // namespace lcnet
