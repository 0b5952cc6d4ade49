#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lcnet/arch.hpp"

namespace lcnet {

// Weight container layout (all integers little-endian):
//   "LCNW" | u32 version | u32 count |
//   count x { u32 name_len | name bytes | u8 dtype (0 = f32) | u8 ndim |
//             ndim x u32 dim | f32 payload }
// The file ends exactly after the last payload.
inline constexpr std::uint32_t kWeightFileVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

// Kaiming-normal fan-out std for a conv: sqrt(2 / (Cout * k * k / groups)).
double conv_init_std(const ConvDesc &desc);
inline constexpr double kFcInitStd = 0.01;

void fill_normal(Tensor &t, double stddev, std::uint64_t seed);

// Convs and SE transforms ~ N(0, sqrt(2/fan_out)); FC ~ N(0, 0.01); biases 0;
// BN gamma 1, beta 0, running mean 0, running var 1. Each tensor draws from its
// own stream keyed by (seed, name).
void init_params(const Network &net, ParamMap<float> &params, std::uint64_t seed);
inline void init_params(Model &model, std::uint64_t seed) {
  init_params(model.network, model.params, seed);
}

std::vector<std::uint8_t> encode_weights(const ParamMap<float> &tensors);
ParamMap<float> decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ParamMap<float> &tensors, const std::filesystem::path &path);
inline void save_weights(const Model &model, const std::filesystem::path &path) {
  save_weights(model.params, path);
}
ParamMap<float> load_weights(const std::filesystem::path &path);

// Single tensor stored under the name "data".
void save_tensor(const Tensor &t, const std::filesystem::path &path);
Tensor load_tensor(const std::filesystem::path &path);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);

}  // namespace lcnet
