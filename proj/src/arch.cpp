#include "lcnet/arch.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "lcnet/random.hpp"
#include "lcnet/weights_io.hpp"

namespace lcnet {

const std::array<BlockSpec, kNumBlocks> &base_block_table() {
  static const std::array<BlockSpec, kNumBlocks> table{{
      {3, 1, 16, 32, false},
      {3, 2, 32, 64, false},
      {3, 1, 64, 64, false},
      {3, 2, 64, 128, false},
      {3, 1, 128, 128, false},
      {3, 2, 128, 256, false},
      {5, 1, 256, 256, false},
      {5, 1, 256, 256, false},
      {5, 1, 256, 256, false},
      {5, 1, 256, 256, false},
      {5, 1, 256, 256, false},
      {5, 2, 256, 512, true},
      {5, 1, 512, 512, true},
  }};
  return table;
}

int make_divisible(double v, int divisor) {
  if (!(v > 0.0) || divisor <= 0)
    throw Error(Errc::InvalidArgument, "make_divisible needs v > 0 and divisor > 0");
  const auto d = static_cast<std::int64_t>(divisor);
  std::int64_t rounded = static_cast<std::int64_t>(v + divisor / 2.0) / d * d;
  std::int64_t out = std::max(d, rounded);
  if (static_cast<double>(out) < 0.9 * v) out += d;
  return static_cast<int>(out);
}

namespace {

void check_mask(const std::string &mask, const char *field) {
  if (mask.size() != static_cast<std::size_t>(kNumBlocks))
    throw Error(Errc::InvalidConfig, std::string(field) + " must have exactly 13 characters, got \"" +
                                         mask + "\"");
  for (char c : mask)
    if (c != '0' && c != '1')
      throw Error(Errc::InvalidConfig, std::string(field) + " may only contain 0 and 1, got \"" +
                                           mask + "\"");
}

std::string trim(const std::string &s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(Errc::InvalidConfig, key + ": expected true/false, got \"" + v + "\"");
}

template <typename Num>
Num parse_num(const std::string &key, const std::string &v) {
  std::istringstream in(v);
  Num out{};
  in >> out;
  if (in.fail() || !in.eof())
    throw Error(Errc::InvalidConfig, key + ": cannot parse \"" + v + "\"");
  return out;
}

}  // namespace

void LCNetConfig::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw Error(Errc::InvalidConfig, "scale must be > 0");
  check_mask(se_mask, "se_mask");
  check_mask(kernel_mask, "kernel_mask");
  if (num_classes < 1) throw Error(Errc::InvalidConfig, "num_classes must be >= 1");
  if (last_conv_dim < 1) throw Error(Errc::InvalidConfig, "last_conv_dim must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw Error(Errc::InvalidConfig, "dropout_rate must be in [0, 1)");
  if (divisor < 1) throw Error(Errc::InvalidConfig, "divisor must be >= 1");
}

std::string LCNetConfig::to_text() const {
  // Shortest text that parses back to the same double.
  auto num = [](double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
  };
  std::ostringstream out;
  out << "scale = " << num(scale) << "\n"
      << "se_mask = " << se_mask << "\n"
      << "kernel_mask = " << kernel_mask << "\n"
      << "num_classes = " << num_classes << "\n"
      << "last_conv_dim = " << last_conv_dim << "\n"
      << "dropout_rate = " << num(dropout_rate) << "\n"
      << "divisor = " << divisor << "\n"
      << "enable_hswish = " << (enable_hswish ? "true" : "false") << "\n"
      << "enable_last_conv = " << (enable_last_conv ? "true" : "false") << "\n";
  return out.str();
}

LCNetConfig LCNetConfig::from_text(const std::string &text) {
  LCNetConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "scale") cfg.scale = parse_num<double>(key, val);
    else if (key == "se_mask") cfg.se_mask = val;
    else if (key == "kernel_mask") cfg.kernel_mask = val;
    else if (key == "num_classes") cfg.num_classes = parse_num<int>(key, val);
    else if (key == "last_conv_dim") cfg.last_conv_dim = parse_num<int>(key, val);
    else if (key == "dropout_rate") cfg.dropout_rate = parse_num<double>(key, val);
    else if (key == "divisor") cfg.divisor = parse_num<int>(key, val);
    else if (key == "enable_hswish") cfg.enable_hswish = parse_bool(key, val);
    else if (key == "enable_last_conv") cfg.enable_last_conv = parse_bool(key, val);
    else throw Error(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": unknown key \"" + key + "\"");
  }
  cfg.validate();
  return cfg;
}

const char *layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Act: return "activation";
    case LayerKind::SqueezeExcite: return "se";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::FullyConnected: return "fc";
  }
  return "?";
}

Network build_network(const LCNetConfig &config) {
  config.validate();
  Network net{config, {}};
  auto &L = net.layers;
  const Activation act = config.enable_hswish ? Activation::HSwish : Activation::ReLU;
  auto width = [&](int base) { return make_divisible(base * config.scale, config.divisor); };

  auto conv = [&](std::string name, std::string group, ConvDesc d) {
    Layer l{LayerKind::Conv, std::move(name), std::move(group)};
    l.conv = d;
    L.push_back(std::move(l));
  };
  auto bn = [&](std::string name, std::string group, int c) {
    Layer l{LayerKind::BatchNorm, std::move(name), std::move(group)};
    l.channels = c;
    L.push_back(std::move(l));
  };
  auto activation = [&](std::string name, std::string group) {
    Layer l{LayerKind::Act, std::move(name), std::move(group)};
    l.act = act;
    L.push_back(std::move(l));
  };

  int c = width(kStemSpec.out_c_base);
  conv("stem.conv", "stem", ConvDesc::standard(3, c, kStemSpec.kernel, kStemSpec.stride));
  bn("stem.bn", "stem", c);
  activation("stem.act", "stem");

  const auto &table = base_block_table();
  for (int i = 0; i < kNumBlocks; ++i) {
    const BlockSpec &spec = table[i];
    const int k = config.kernel_mask[i] == '1' ? 5 : 3;
    const int cin = width(spec.in_c_base), cout = width(spec.out_c_base);
    const std::string g = "blocks." + std::to_string(i + 1);
    conv(g + ".dw", g, ConvDesc::dw(cin, k, spec.stride));
    bn(g + ".dw_bn", g, cin);
    activation(g + ".dw_act", g);
    if (config.se_mask[i] == '1') {
      if (cin % kSEReduction != 0)
        throw Error(Errc::InvalidConfig, g + ": " + std::to_string(cin) +
                                             " channels not divisible by SE reduction 4");
      Layer se{LayerKind::SqueezeExcite, g + ".se", g};
      se.channels = cin;
      L.push_back(std::move(se));
    }
    conv(g + ".pw", g, ConvDesc::standard(cin, cout, 1, 1));
    bn(g + ".pw_bn", g, cout);
    activation(g + ".pw_act", g);
    c = cout;
  }

  L.push_back(Layer{LayerKind::GlobalAvgPool, "gap", "gap"});
  if (config.enable_last_conv) {
    conv("last_conv", "last_conv", ConvDesc::standard(c, config.last_conv_dim, 1, 1, true));
    activation("last_act", "last_conv");
    c = config.last_conv_dim;
  }
  Layer drop{LayerKind::Dropout, "dropout", "fc"};
  drop.rate = config.dropout_rate;
  L.push_back(std::move(drop));
  Layer fc{LayerKind::FullyConnected, "fc", "fc"};
  fc.in_features = c;
  fc.out_features = config.num_classes;
  L.push_back(std::move(fc));
  return net;
}

std::vector<ParamInfo> Network::params() const {
  std::vector<ParamInfo> out;
  for (const Layer &l : layers) {
    auto add = [&](const char *suffix, Dims d, ParamRole role) {
      out.push_back({l.name + suffix, std::move(d), role, l.kind});
    };
    switch (l.kind) {
      case LayerKind::Conv:
        add(".weight", l.conv.weight_dims(), ParamRole::Weight);
        if (l.conv.has_bias) add(".bias", {l.conv.out_channels}, ParamRole::Bias);
        break;
      case LayerKind::BatchNorm:
        add(".gamma", {l.channels}, ParamRole::Gamma);
        add(".beta", {l.channels}, ParamRole::Beta);
        add(".running_mean", {l.channels}, ParamRole::RunningMean);
        add(".running_var", {l.channels}, ParamRole::RunningVar);
        break;
      case LayerKind::SqueezeExcite: {
        const int r = l.channels / l.reduction;
        add(".w1", {r, l.channels}, ParamRole::Weight);
        add(".b1", {r}, ParamRole::Bias);
        add(".w2", {l.channels, r}, ParamRole::Weight);
        add(".b2", {l.channels}, ParamRole::Bias);
        break;
      }
      case LayerKind::FullyConnected:
        add(".weight", {l.out_features, l.in_features}, ParamRole::Weight);
        add(".bias", {l.out_features}, ParamRole::Bias);
        break;
      default:
        break;
    }
  }
  return out;
}

std::size_t Network::block_count(LayerKind kind) const {
  std::size_t n = 0;
  for (const auto &l : layers) n += (l.kind == kind);
  return n;
}

const Tensor &Model::param(const std::string &name) const {
  auto it = params.find(name);
  if (it == params.end()) throw Error(Errc::InvalidArgument, "no parameter named " + name);
  return it->second;
}

Model build_model(const LCNetConfig &config, std::uint64_t seed) {
  Model m;
  m.config = config;
  m.network = build_network(config);
  for (const auto &p : m.network.params()) m.params.emplace(p.name, Tensor(p.dims));
  init_params(m, seed);
  return m;
}

void assign_params(Model &model, const ParamMap<float> &values) {
  for (const auto &[name, t] : model.params) {
    auto it = values.find(name);
    if (it == values.end()) throw Error(Errc::ShapeMismatch, "missing parameter " + name);
    if (it->second.dims() != t.dims())
      throw Error(Errc::ShapeMismatch, name + ": expected " + dims_to_string(t.dims()) + ", got " +
                                           dims_to_string(it->second.dims()));
  }
  for (const auto &[name, t] : values)
    if (!model.params.count(name))
      throw Error(Errc::ShapeMismatch, "unexpected parameter " + name);
  for (auto &[name, t] : model.params) t = values.at(name);
}

void check_model_input(const Dims &d) {
  if (d.size() != 4 || d[1] != 3)
    throw Error(Errc::ShapeMismatch, "model input must be [N,3,H,W], got " + dims_to_string(d));
  if (d[2] < 32 || d[3] < 32 || d[2] % 32 != 0 || d[3] % 32 != 0)
    throw Error(Errc::ShapeMismatch,
                "model input H and W must be positive multiples of 32, got " + dims_to_string(d));
}

namespace {

template <typename T>
const BasicTensor<T> &get(const ParamMap<T> &params, const std::string &name) {
  auto it = params.find(name);
  if (it == params.end()) throw Error(Errc::ShapeMismatch, "missing parameter " + name);
  return it->second;
}

template <typename T>
BatchNormParams<T> bn_params(const ParamMap<T> &params, const std::string &name) {
  return {get(params, name + ".gamma"), get(params, name + ".beta"),
          get(params, name + ".running_mean"), get(params, name + ".running_var"),
          kBatchNormEps};
}

template <typename T>
BasicTensor<T> flatten2d(const BasicTensor<T> &x) {
  std::int64_t rest = 1;
  for (std::size_t i = 1; i < x.rank(); ++i) rest *= x.dim(i);
  return x.reshaped({x.dim(0), rest});
}

}  // namespace

template <typename T>
BasicTensor<T> run_network(const Network &net, const ParamMap<T> &params,
                           const BasicTensor<T> &input, const ForwardOptions &opts,
                           Trace<T> *trace) {
  check_model_input(input.dims());
  if (trace) trace->clear();
  BasicTensor<T> x = input;
  for (const Layer &l : net.layers) {
    LayerTrace<T> rec;
    if (trace) rec.input = x;
    switch (l.kind) {
      case LayerKind::Conv: {
        const auto &w = get(params, l.name + ".weight");
        std::span<const T> b;
        if (l.conv.has_bias) b = get(params, l.name + ".bias").values();
        x = conv2d_fast(x, w, b, l.conv);
        break;
      }
      case LayerKind::BatchNorm: {
        auto bn = bn_params(params, l.name);
        if (opts.bn_batch_stats) {
          auto r = batchnorm_train(x, bn);
          if (trace) rec.saved = {std::move(r.batch_mean), std::move(r.batch_var)};
          x = std::move(r.output);
        } else {
          x = batchnorm_infer(x, bn);
        }
        break;
      }
      case LayerKind::Act:
        x = l.act == Activation::HSwish ? hswish(x) : relu(x);
        break;
      case LayerKind::SqueezeExcite: {
        const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        if (C != l.channels) throw Error(Errc::ShapeMismatch, l.name + ": channel mismatch");
        BasicTensor<T> pooled = global_avg_pool(x).reshaped({N, C});
        BasicTensor<T> z1 = fully_connected(pooled, get(params, l.name + ".w1"),
                                            get(params, l.name + ".b1").values());
        BasicTensor<T> z2 = fully_connected(relu(z1), get(params, l.name + ".w2"),
                                            get(params, l.name + ".b2").values());
        BasicTensor<T> gate = hsigmoid(z2);
        BasicTensor<T> out(x.dims());
        for (std::int64_t i = 0; i < N * C; ++i)
          for (std::int64_t j = 0; j < HW; ++j) out[i * HW + j] = x[i * HW + j] * gate[i];
        if (trace) rec.saved = {std::move(pooled), std::move(z1), std::move(z2), std::move(gate)};
        x = std::move(out);
        break;
      }
      case LayerKind::GlobalAvgPool:
        x = global_avg_pool(x);
        break;
      case LayerKind::Dropout:
        if (opts.dropout_active) {
          const std::uint64_t seed = opts.dropout_seed ^ hash_name(l.name);
          rec.seed = seed;
          x = dropout(x, l.rate, Mode::Train, seed);
        }
        break;
      case LayerKind::FullyConnected:
        x = fully_connected(flatten2d(x), get(params, l.name + ".weight"),
                            get(params, l.name + ".bias").values());
        break;
    }
    if (trace) trace->push_back(std::move(rec));
  }
  if (opts.apply_softmax) x = softmax(x);
  return x;
}

template BasicTensor<float> run_network(const Network &, const ParamMap<float> &,
                                        const BasicTensor<float> &, const ForwardOptions &,
                                        Trace<float> *);
template BasicTensor<double> run_network(const Network &, const ParamMap<double> &,
                                         const BasicTensor<double> &, const ForwardOptions &,
                                         Trace<double> *);

Tensor forward(const Model &model, const Tensor &input, Mode mode, std::uint64_t seed) {
  return run_network(model.network, model.params, input, ForwardOptions::for_mode(mode, seed));
}

std::vector<Dims> layer_output_dims(const Network &net, std::int64_t height, std::int64_t width) {
  Dims d{1, 3, height, width};
  check_model_input(d);
  std::vector<Dims> out;
  for (const Layer &l : net.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        d = {d[0], l.conv.out_channels, l.conv.out_extent(d[2]), l.conv.out_extent(d[3])};
        break;
      case LayerKind::GlobalAvgPool:
        d = {d[0], d[1], 1, 1};
        break;
      case LayerKind::FullyConnected:
        d = {d[0], l.out_features};
        break;
      default:
        break;
    }
    out.push_back(d);
  }
  return out;
}

}  // namespace lcnet
