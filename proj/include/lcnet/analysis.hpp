#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcnet/arch.hpp"

namespace lcnet {

// Cost conventions: one MAC per multiply-accumulate in convs, SE transforms and
// the FC; BN, activations, pooling and dropout cost zero. Params are weights,
// biases and BN gamma/beta; BN running statistics are not counted.
struct CostRow {
  std::string layer;
  Dims out_shape;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct CostReport {
  std::vector<CostRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;

  std::string to_text() const;
  std::string to_csv() const;
};

std::int64_t layer_params(const Layer &layer);
// MACs of one layer for a single sample whose input has spatial size (h, w).
std::int64_t layer_macs(const Layer &layer, std::int64_t h, std::int64_t w);

std::int64_t count_params(const Network &net);
inline std::int64_t count_params(const Model &model) { return count_params(model.network); }

// Per-sample count (batch size 1).
std::int64_t count_macs(const Network &net, std::int64_t height, std::int64_t width);
inline std::int64_t count_macs(const Model &model, std::int64_t height, std::int64_t width) {
  return count_macs(model.network, height, width);
}

// One row per layer group: stem, blocks.1 .. blocks.13, gap, last_conv, fc.
CostReport summarize(const LCNetConfig &config, std::int64_t height, std::int64_t width);

// "3.0M"-style display with three significant digits.
std::string format_millions(std::int64_t v);

}  // namespace lcnet
