#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcnet/tensor.hpp"

namespace lcnet {

// Interleaved 8-bit RGB.
struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> rgb;
};

// Binary P6 with maxval 255 only. Header comments are allowed.
Image decode_ppm(std::span<const std::uint8_t> bytes);
Image load_ppm(const std::string &path);
std::vector<std::uint8_t> encode_ppm(const Image &img);

// Planar [3,H,W] float copy of the pixels (0..255).
Tensor image_to_planar(const Image &img);

// Bilinear, half-pixel centers: src = (dst + 0.5) * in / out - 0.5, clamped to
// [0, in - 1]. Works on [C,H,W].
Tensor resize_bilinear(const Tensor &chw, std::int64_t out_h, std::int64_t out_w);

// Output size that makes the short edge equal to `short_edge`, long edge rounded.
std::pair<std::int64_t, std::int64_t> short_edge_dims(std::int64_t h, std::int64_t w,
                                                      std::int64_t short_edge);

Tensor center_crop(const Tensor &chw, std::int64_t size);

// Conventional ImageNet statistics.
inline constexpr float kImageMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImageStd[3] = {0.229f, 0.224f, 0.225f};

// Resize short edge to 256, center-crop 224, scale to [0,1], normalize.
// Returns [1,3,224,224].
Tensor preprocess_eval(const Image &img, std::int64_t resize = 256, std::int64_t crop = 224);

}  // namespace lcnet
