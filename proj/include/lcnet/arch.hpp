#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lcnet/ops.hpp"
#include "lcnet/tensor.hpp"

namespace lcnet {

inline constexpr int kNumBlocks = 13;
inline constexpr const char *kDefaultSEMask = "0000000000011";
inline constexpr const char *kDefaultKernelMask = "0000001111111";

// One DepthSepConv row of the architecture table, at base width.
struct BlockSpec {
  int kernel;
  int stride;
  int in_c_base;
  int out_c_base;
  bool use_se;

  friend bool operator==(const BlockSpec &, const BlockSpec &) = default;
};

// Stem conv: 3x3, stride 2, 3 -> 16 at base width.
inline constexpr BlockSpec kStemSpec{3, 2, 3, 16, false};

const std::array<BlockSpec, kNumBlocks> &base_block_table();

int make_divisible(double v, int divisor);

struct LCNetConfig {
  double scale = 1.0;
  std::string se_mask = kDefaultSEMask;
  std::string kernel_mask = kDefaultKernelMask;
  int num_classes = 1000;
  int last_conv_dim = 1280;
  double dropout_rate = kDefaultDropout;
  int divisor = 8;
  bool enable_hswish = true;
  bool enable_last_conv = true;

  // Throws InvalidConfig naming the offending field.
  void validate() const;

  // key = value lines; unknown keys and malformed values are InvalidConfig.
  std::string to_text() const;
  static LCNetConfig from_text(const std::string &text);

  friend bool operator==(const LCNetConfig &, const LCNetConfig &) = default;
};

enum class Activation { HSwish, ReLU };

enum class LayerKind { Conv, BatchNorm, Act, SqueezeExcite, GlobalAvgPool, Dropout, FullyConnected };

const char *layer_kind_name(LayerKind kind);

struct Layer {
  LayerKind kind;
  std::string name;   // parameter prefix, e.g. "blocks.12.dw"
  std::string group;  // cost-report row: "stem", "blocks.N", "gap", "last_conv", "fc"
  ConvDesc conv{};
  Activation act = Activation::HSwish;
  int channels = 0;  // BatchNorm, SqueezeExcite
  int reduction = kSEReduction;
  double rate = 0.0;  // Dropout
  int in_features = 0;
  int out_features = 0;
};

enum class ParamRole { Weight, Bias, Gamma, Beta, RunningMean, RunningVar };

struct ParamInfo {
  std::string name;
  Dims dims;
  ParamRole role;
  LayerKind layer;

  // BN running statistics: stored and serialized, but not trained or counted.
  bool is_buffer() const { return role == ParamRole::RunningMean || role == ParamRole::RunningVar; }
};

template <typename T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

// The executable layer chain for a config. Strictly sequential: no shortcuts.
struct Network {
  LCNetConfig config;
  std::vector<Layer> layers;

  std::vector<ParamInfo> params() const;
  std::size_t block_count(LayerKind kind) const;
};

Network build_network(const LCNetConfig &config);

struct Model {
  LCNetConfig config;
  Network network;
  ParamMap<float> params;  // includes BN running statistics
  Mode mode = Mode::Infer;

  const Tensor &param(const std::string &name) const;
};

// Builds the layer chain and initializes parameters deterministically from seed.
Model build_model(const LCNetConfig &config, std::uint64_t seed);

// Replaces parameter values; names and shapes must match the model exactly.
void assign_params(Model &model, const ParamMap<float> &values);

struct ForwardOptions {
  bool bn_batch_stats = false;
  bool dropout_active = false;
  bool apply_softmax = true;
  std::uint64_t dropout_seed = 0;

  static ForwardOptions for_mode(Mode mode, std::uint64_t seed = 0) {
    if (mode == Mode::Infer) return {};
    return {true, true, false, seed};
  }
};

// What one layer saw during forward, for the hand-written backward pass.
template <typename T>
struct LayerTrace {
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> saved;
  std::uint64_t seed = 0;
};

template <typename T>
using Trace = std::vector<LayerTrace<T>>;

// Throws ShapeMismatch unless input is [N,3,H,W] with H, W positive multiples of 32.
void check_model_input(const Dims &input);

template <typename T>
BasicTensor<T> run_network(const Network &net, const ParamMap<T> &params,
                           const BasicTensor<T> &input, const ForwardOptions &opts,
                           Trace<T> *trace = nullptr);

// Infer mode returns softmax probabilities; train mode returns logits using
// batch statistics and an active dropout mask drawn from seed.
Tensor forward(const Model &model, const Tensor &input, Mode mode, std::uint64_t seed = 0);

// Output dims of every layer in order, for an input of [1,3,H,W].
std::vector<Dims> layer_output_dims(const Network &net, std::int64_t height, std::int64_t width);

}  // namespace lcnet
