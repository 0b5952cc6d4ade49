#include "lcnet/weights_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lcnet/random.hpp"

namespace lcnet {

double conv_init_std(const ConvDesc &desc) {
  const int groups = desc.depthwise ? desc.in_channels : 1;
  const double fan_out =
      static_cast<double>(desc.out_channels) * desc.kernel * desc.kernel / groups;
  return std::sqrt(2.0 / fan_out);
}

void fill_normal(Tensor &t, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  for (auto &v : t.values()) v = static_cast<float>(rng.normal() * stddev);
}

void init_params(const Network &net, ParamMap<float> &params, std::uint64_t seed) {
  std::map<std::string, const Layer *> by_name;
  for (const auto &l : net.layers) by_name[l.name] = &l;

  for (const ParamInfo &info : net.params()) {
    auto it = params.find(info.name);
    if (it == params.end() || it->second.dims() != info.dims) it = params.insert_or_assign(info.name, Tensor(info.dims)).first;
    Tensor &t = it->second;
    const std::uint64_t stream = seed ^ hash_name(info.name);
    switch (info.role) {
      case ParamRole::Weight: {
        const Layer &l = *by_name.at(info.name.substr(0, info.name.rfind('.')));
        double stddev = kFcInitStd;
        if (l.kind == LayerKind::Conv) {
          stddev = conv_init_std(l.conv);
        } else if (l.kind == LayerKind::SqueezeExcite) {
          // 1x1 transforms; fan_out is the output width.
          stddev = std::sqrt(2.0 / static_cast<double>(info.dims[0]));
        }
        fill_normal(t, stddev, stream);
        break;
      }
      case ParamRole::Bias:
      case ParamRole::Beta:
      case ParamRole::RunningMean:
        t.fill(0.0f);
        break;
      case ParamRole::Gamma:
      case ParamRole::RunningVar:
        t.fill(1.0f);
        break;
    }
  }
}

namespace {

void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t pos() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }

  void need(std::uint64_t n, const std::string &what) const {
    if (remaining() < n) throw CorruptFile(pos_, "truncated " + what);
  }
  std::uint8_t u8(const std::string &what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const std::string &what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::uint64_t n, const std::string &what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const ParamMap<float> &tensors) {
  std::vector<std::uint8_t> out{'L', 'C', 'N', 'W'};
  put_u32(out, kWeightFileVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto &[name, t] : tensors) {
    if (t.rank() > 255) throw Error(Errc::InvalidArgument, name + ": rank exceeds 255");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF32);
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    out.reserve(out.size() + 4 * t.size());
    for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ParamMap<float> decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "LCNW", 4) != 0)
    throw CorruptFile(0, "bad magic, expected \"LCNW\"");
  r.take(4, "magic");
  const std::uint64_t version_at = r.pos();
  const std::uint32_t version = r.u32("header");
  if (version != kWeightFileVersion)
    throw CorruptFile(version_at, "unsupported format version " + std::to_string(version));
  const std::uint32_t count = r.u32("header");

  ParamMap<float> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string idx = "tensor #" + std::to_string(i);
    const std::uint32_t name_len = r.u32(idx + " name length");
    const std::uint64_t name_at = r.pos();
    auto name_bytes = r.take(name_len, idx + " name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::string label = "tensor '" + name + "'";
    if (out.count(name)) throw CorruptFile(name_at, "duplicate " + label);

    const std::uint64_t dtype_at = r.pos();
    const std::uint8_t dtype = r.u8(label + " dtype");
    if (dtype != kDtypeF32)
      throw CorruptFile(dtype_at, label + ": unknown dtype code " + std::to_string(dtype));
    const std::uint64_t ndim_at = r.pos();
    const std::uint8_t ndim = r.u8(label + " ndim");
    if (ndim == 0) throw CorruptFile(ndim_at, label + ": zero rank");

    Dims dims;
    std::uint64_t elems = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::uint64_t dim_at = r.pos();
      const std::uint32_t extent = r.u32(label + " dims");
      if (extent == 0) throw CorruptFile(dim_at, label + ": zero extent");
      elems *= extent;
      // Any payload larger than the file is a truncation; stop before overflow.
      if (elems > r.remaining()) throw CorruptFile(dim_at, label + ": payload truncated");
      dims.push_back(extent);
    }
    auto payload = r.take(4 * elems, label + " payload");
    std::vector<float> data(elems);
    for (std::uint64_t j = 0; j < elems; ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(payload[4 * j + b]) << (8 * b);
      data[j] = std::bit_cast<float>(bits);
    }
    out.emplace(std::move(name), Tensor(std::move(dims), std::move(data)));
  }
  if (r.remaining() != 0) throw CorruptFile(r.pos(), "trailing bytes after last tensor");
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::IoError, "read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "write failed: " + path.string());
}

void save_weights(const ParamMap<float> &tensors, const std::filesystem::path &path) {
  write_file(path, encode_weights(tensors));
}

ParamMap<float> load_weights(const std::filesystem::path &path) {
  return decode_weights(read_file(path));
}

void save_tensor(const Tensor &t, const std::filesystem::path &path) {
  ParamMap<float> m;
  m.emplace("data", t);
  save_weights(m, path);
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  auto m = decode_weights(bytes);
  if (m.size() != 1) throw CorruptFile(8, "tensor file must hold exactly one tensor");
  auto it = m.find("data");
  if (it == m.end()) throw CorruptFile(16, "tensor file entry must be named \"data\"");
  return std::move(it->second);
}

Tensor load_tensor(const std::filesystem::path &path) { return decode_tensor(read_file(path)); }

}  // namespace lcnet
