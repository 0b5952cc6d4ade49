#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcnet/arch.hpp"

namespace lcnet {

struct BenchOptions {
  int workers = 1;
  int warmup = 3;
  int iters = 20;
  std::int64_t batch = 1;
  std::int64_t input_hw = 224;
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::string description;
  int workers = 1;
  int warmup = 0;
  int iters = 0;
  std::int64_t batch = 1;
  std::vector<double> samples_ms;
  double median_ms = 0.0;
  double mean_ms = 0.0;
  double p90_ms = 0.0;

  std::string to_text() const;
};

struct LatencyStats {
  double median, mean, p90;
};

// p90 is the nearest-rank percentile: sorted[ceil(0.9 n) - 1].
LatencyStats latency_stats(std::vector<double> samples_ms);

// Infer-mode forward passes on a random input. Throws InvalidArgument for iters < 10.
BenchResult run_bench(const LCNetConfig &config, const BenchOptions &opts);

struct AblationRow {
  std::string mask;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  double median_ms = 0.0;
};

enum class AblationMode { SE, Kernel };

const std::vector<std::string> &default_ablation_masks(AblationMode mode);

// With opts.iters == 0 only costs are computed and median_ms stays 0.
std::vector<AblationRow> run_ablation(AblationMode mode, const std::vector<std::string> &masks,
                                      const LCNetConfig &base, const BenchOptions &opts);

std::string ablation_to_text(const std::vector<AblationRow> &rows);
std::string ablation_to_csv(const std::vector<AblationRow> &rows);

}  // namespace lcnet
