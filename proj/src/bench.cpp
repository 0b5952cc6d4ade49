#include "lcnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "lcnet/analysis.hpp"
#include "lcnet/parallel.hpp"
#include "lcnet/random.hpp"

namespace lcnet {

LatencyStats latency_stats(std::vector<double> s) {
  if (s.empty()) throw Error(Errc::InvalidArgument, "no latency samples");
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  const double median = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(n);
  const auto rank = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(n)));
  return {median, mean, s[std::max<std::size_t>(rank, 1) - 1]};
}

namespace {

std::string describe(const LCNetConfig &c) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "scale=%g se=%s kernel=%s", c.scale, c.se_mask.c_str(),
                c.kernel_mask.c_str());
  return buf;
}

std::vector<double> time_forward(const Model &model, const BenchOptions &opts) {
  Tensor x({opts.batch, 3, opts.input_hw, opts.input_hw});
  Rng rng(opts.seed);
  for (auto &v : x.values()) v = static_cast<float>(rng.normal());
  WorkerScope scope(opts.workers);
  for (int i = 0; i < opts.warmup; ++i) (void)forward(model, x, Mode::Infer);
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(opts.iters));
  for (int i = 0; i < opts.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)forward(model, x, Mode::Infer);
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return samples;
}

}  // namespace

BenchResult run_bench(const LCNetConfig &config, const BenchOptions &opts) {
  if (opts.iters < 10) throw Error(Errc::InvalidArgument, "iters must be ≥ 10");
  if (opts.warmup < 0) throw Error(Errc::InvalidArgument, "warmup must be >= 0");
  if (opts.batch < 1) throw Error(Errc::InvalidArgument, "batch must be >= 1");
  const Model model = build_model(config, opts.seed);
  BenchResult r;
  r.description = describe(config);
  r.workers = opts.workers;
  r.warmup = opts.warmup;
  r.iters = opts.iters;
  r.batch = opts.batch;
  r.samples_ms = time_forward(model, opts);
  const auto st = latency_stats(r.samples_ms);
  r.median_ms = st.median;
  r.mean_ms = st.mean;
  r.p90_ms = st.p90;
  return r;
}

std::string BenchResult::to_text() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%s\nworkers=%d batch=%lld warmup=%d iters=%d\nmedian %.3f ms  mean %.3f ms  "
                "p90 %.3f ms\n",
                description.c_str(), workers, static_cast<long long>(batch), warmup, iters,
                median_ms, mean_ms, p90_ms);
  return buf;
}

const std::vector<std::string> &default_ablation_masks(AblationMode mode) {
  static const std::vector<std::string> se = {"1100000000000", "0000001100000", "0000000000011",
                                              "1111111111111"};
  static const std::vector<std::string> kernel = {"1111111000000", "0000001111111",
                                                  "1111111111111"};
  return mode == AblationMode::SE ? se : kernel;
}

std::vector<AblationRow> run_ablation(AblationMode mode, const std::vector<std::string> &masks,
                                      const LCNetConfig &base, const BenchOptions &opts) {
  if (masks.empty()) throw Error(Errc::InvalidArgument, "mask list is empty");
  if (opts.iters != 0 && opts.iters < 10) throw Error(Errc::InvalidArgument, "iters must be ≥ 10");
  std::vector<AblationRow> rows;
  for (const auto &m : masks) {
    LCNetConfig cfg = base;
    (mode == AblationMode::SE ? cfg.se_mask : cfg.kernel_mask) = m;
    cfg.validate();
    AblationRow row{m, 0, 0, 0.0};
    if (opts.iters == 0) {
      const Network net = build_network(cfg);
      row.params = count_params(net);
      row.macs = count_macs(net, opts.input_hw, opts.input_hw);
    } else {
      const Model model = build_model(cfg, opts.seed);
      row.params = count_params(model.network);
      row.macs = count_macs(model.network, opts.input_hw, opts.input_hw);
      row.median_ms = latency_stats(time_forward(model, opts)).median;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_to_text(const std::vector<AblationRow> &rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-13s  %10s  %8s  %12s  %8s  %10s\n", "mask", "params", "",
                "macs", "", "median_ms");
  out << line;
  for (const auto &r : rows) {
    std::snprintf(line, sizeof line, "%-13s  %10lld  %8s  %12lld  %8s  %10.3f\n", r.mask.c_str(),
                  static_cast<long long>(r.params), format_millions(r.params).c_str(),
                  static_cast<long long>(r.macs), format_millions(r.macs).c_str(), r.median_ms);
    out << line;
  }
  return out.str();
}

std::string ablation_to_csv(const std::vector<AblationRow> &rows) {
  std::ostringstream out;
  out << "mask,params,macs,median_ms\n";
  for (const auto &r : rows) out << r.mask << "," << r.params << "," << r.macs << "," << r.median_ms << "\n";
  return out.str();
}

}  // namespace lcnet
