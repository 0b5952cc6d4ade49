#include "lcnet/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace lcnet {

std::int64_t layer_params(const Layer &l) {
  switch (l.kind) {
    case LayerKind::Conv:
      return dims_product(l.conv.weight_dims()) + (l.conv.has_bias ? l.conv.out_channels : 0);
    case LayerKind::BatchNorm:
      return 2 * static_cast<std::int64_t>(l.channels);
    case LayerKind::SqueezeExcite: {
      const std::int64_t c = l.channels, r = l.channels / l.reduction;
      return c * r + r + r * c + c;
    }
    case LayerKind::FullyConnected:
      return static_cast<std::int64_t>(l.in_features) * l.out_features + l.out_features;
    default:
      return 0;
  }
}

std::int64_t layer_macs(const Layer &l, std::int64_t h, std::int64_t w) {
  switch (l.kind) {
    case LayerKind::Conv: {
      const std::int64_t ho = l.conv.out_extent(h), wo = l.conv.out_extent(w);
      const std::int64_t k2 = static_cast<std::int64_t>(l.conv.kernel) * l.conv.kernel;
      return ho * wo * l.conv.out_channels * l.conv.in_per_group() * k2;
    }
    case LayerKind::SqueezeExcite: {
      const std::int64_t c = l.channels, r = l.channels / l.reduction;
      return 2 * c * r;
    }
    case LayerKind::FullyConnected:
      return static_cast<std::int64_t>(l.in_features) * l.out_features;
    default:
      return 0;
  }
}

std::int64_t count_params(const Network &net) {
  std::int64_t total = 0;
  for (const auto &l : net.layers) total += layer_params(l);
  return total;
}

std::int64_t count_macs(const Network &net, std::int64_t height, std::int64_t width) {
  const auto dims = layer_output_dims(net, height, width);
  std::int64_t total = 0, h = height, w = width;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    total += layer_macs(net.layers[i], h, w);
    if (dims[i].size() == 4) {
      h = dims[i][2];
      w = dims[i][3];
    }
  }
  return total;
}

CostReport summarize(const LCNetConfig &config, std::int64_t height, std::int64_t width) {
  const Network net = build_network(config);
  const auto dims = layer_output_dims(net, height, width);
  CostReport rep;
  std::int64_t h = height, w = width;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer &l = net.layers[i];
    if (rep.rows.empty() || rep.rows.back().layer != l.group) rep.rows.push_back({l.group, {}, 0, 0});
    CostRow &row = rep.rows.back();
    row.params += layer_params(l);
    row.macs += layer_macs(l, h, w);
    row.out_shape = dims[i];
    if (dims[i].size() == 4) {
      h = dims[i][2];
      w = dims[i][3];
    }
  }
  for (const auto &r : rep.rows) {
    rep.total_params += r.params;
    rep.total_macs += r.macs;
  }
  return rep;
}

namespace {

std::string shape_str(const Dims &d) {
  std::string s;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(d[i]);
  }
  return s;
}

}  // namespace

std::string format_millions(std::int64_t v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3gM", static_cast<double>(v) / 1e6);
  return buf;
}

std::string CostReport::to_text() const {
  std::size_t wl = 5, ws = 9;
  for (const auto &r : rows) {
    wl = std::max(wl, r.layer.size());
    ws = std::max(ws, shape_str(r.out_shape).size());
  }
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %-*s  %12s  %14s\n", static_cast<int>(wl), "layer",
                static_cast<int>(ws), "out_shape", "params", "macs");
  out << line;
  for (const auto &r : rows) {
    std::snprintf(line, sizeof line, "%-*s  %-*s  %12lld  %14lld\n", static_cast<int>(wl),
                  r.layer.c_str(), static_cast<int>(ws), shape_str(r.out_shape).c_str(),
                  static_cast<long long>(r.params), static_cast<long long>(r.macs));
    out << line;
  }
  std::snprintf(line, sizeof line, "%-*s  %-*s  %12lld  %14lld\n", static_cast<int>(wl), "total",
                static_cast<int>(ws), "", static_cast<long long>(total_params),
                static_cast<long long>(total_macs));
  out << line;
  out << "params: " << format_millions(total_params) << "  macs: " << format_millions(total_macs)
      << "\n";
  return out.str();
}

std::string CostReport::to_csv() const {
  std::ostringstream out;
  out << "layer,out_shape,params,macs\n";
  for (const auto &r : rows)
    out << r.layer << "," << shape_str(r.out_shape) << "," << r.params << "," << r.macs << "\n";
  return out.str();
}

}  // namespace lcnet
