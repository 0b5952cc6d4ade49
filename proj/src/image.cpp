#include "lcnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "lcnet/weights_io.hpp"

namespace lcnet {

namespace {

struct HeaderReader {
  std::span<const std::uint8_t> in;
  std::size_t pos = 0;
  std::size_t field_start = 0;  // first digit of the last number read

  [[noreturn]] void fail(const std::string &what) const { fail_at(pos, what); }
  [[noreturn]] void fail_at(std::size_t at, const std::string &what) const {
    throw CorruptFile(at, "ppm: " + what);
  }

  void skip_space_and_comments() {
    while (pos < in.size()) {
      if (in[pos] == '#') {
        while (pos < in.size() && in[pos] != '\n') ++pos;
      } else if (std::isspace(in[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::int64_t number() {
    skip_space_and_comments();
    if (pos >= in.size() || !std::isdigit(in[pos])) fail("expected a number");
    field_start = pos;
    std::int64_t v = 0;
    while (pos < in.size() && std::isdigit(in[pos])) {
      v = v * 10 + (in[pos] - '0');
      if (v > (1 << 24)) fail("number too large");
      ++pos;
    }
    return v;
  }
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  HeaderReader r{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') r.fail("not a binary P6 file");
  r.pos = 2;
  Image img;
  img.width = r.number();
  if (img.width < 1) r.fail_at(r.field_start, "zero image width");
  img.height = r.number();
  if (img.height < 1) r.fail_at(r.field_start, "zero image height");
  const std::int64_t maxval = r.number();
  if (maxval != 255) r.fail_at(r.field_start, "only maxval 255 is supported");
  if (r.pos >= bytes.size() || !std::isspace(bytes[r.pos])) r.fail("missing separator after header");
  ++r.pos;
  const auto need = static_cast<std::size_t>(img.width * img.height * 3);
  if (bytes.size() - r.pos < need) r.fail("truncated pixel data");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + need));
  return img;
}

Image load_ppm(const std::string &path) {
  const auto bytes = read_file(path);
  return decode_ppm(bytes);
}

std::vector<std::uint8_t> encode_ppm(const Image &img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

Tensor image_to_planar(const Image &img) {
  const std::int64_t plane = img.width * img.height;
  if (static_cast<std::int64_t>(img.rgb.size()) != plane * 3)
    throw Error(Errc::InvalidShape, "image buffer does not match its extent");
  Tensor t({3, img.height, img.width});
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) t[c * plane + i] = img.rgb[i * 3 + c];
  return t;
}

Tensor resize_bilinear(const Tensor &chw, std::int64_t out_h, std::int64_t out_w) {
  if (chw.rank() != 3) throw Error(Errc::InvalidShape, "resize expects [C,H,W]");
  if (out_h < 1 || out_w < 1) throw Error(Errc::InvalidShape, "resize target must be positive");
  const std::int64_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);

  struct Tap {
    std::int64_t i0, i1;
    double f;
  };
  auto taps = [](std::int64_t in, std::int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(s));
      t[o] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(H, out_h), tx = taps(W, out_w);

  Tensor out({C, out_h, out_w});
  for (std::int64_t c = 0; c < C; ++c) {
    const float *src = chw.data() + c * H * W;
    float *dst = out.data() + c * out_h * out_w;
    for (std::int64_t y = 0; y < out_h; ++y) {
      const float *r0 = src + ty[y].i0 * W, *r1 = src + ty[y].i1 * W;
      const double fy = ty[y].f;
      for (std::int64_t x = 0; x < out_w; ++x) {
        const auto &t = tx[x];
        const double top = r0[t.i0] + (r0[t.i1] - r0[t.i0]) * t.f;
        const double bot = r1[t.i0] + (r1[t.i1] - r1[t.i0]) * t.f;
        dst[y * out_w + x] = static_cast<float>(top + (bot - top) * fy);
      }
    }
  }
  return out;
}

std::pair<std::int64_t, std::int64_t> short_edge_dims(std::int64_t h, std::int64_t w,
                                                      std::int64_t short_edge) {
  if (h < 1 || w < 1 || short_edge < 1) throw Error(Errc::InvalidShape, "non-positive extent");
  if (h <= w)
    return {short_edge, std::llround(static_cast<double>(w) * short_edge / static_cast<double>(h))};
  return {std::llround(static_cast<double>(h) * short_edge / static_cast<double>(w)), short_edge};
}

Tensor center_crop(const Tensor &chw, std::int64_t size) {
  if (chw.rank() != 3) throw Error(Errc::InvalidShape, "crop expects [C,H,W]");
  const std::int64_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  if (size < 1 || size > H || size > W)
    throw Error(Errc::InvalidShape, "crop " + std::to_string(size) + " larger than image " +
                                        dims_to_string(chw.dims()));
  const std::int64_t oy = (H - size) / 2, ox = (W - size) / 2;
  Tensor out({C, size, size});
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < size; ++y) {
      const float *src = chw.data() + (c * H + oy + y) * W + ox;
      std::copy(src, src + size, out.data() + (c * size + y) * size);
    }
  return out;
}

Tensor preprocess_eval(const Image &img, std::int64_t resize, std::int64_t crop) {
  const auto [rh, rw] = short_edge_dims(img.height, img.width, resize);
  Tensor t = center_crop(resize_bilinear(image_to_planar(img), rh, rw), crop);
  const std::int64_t plane = crop * crop;
  for (int c = 0; c < 3; ++c) {
    float *p = t.data() + c * plane;
    for (std::int64_t i = 0; i < plane; ++i) p[i] = (p[i] / 255.0f - kImageMean[c]) / kImageStd[c];
  }
  return t.reshaped({1, 3, crop, crop});
}

}  // namespace lcnet
