#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcnet/arch.hpp"

namespace lcnet {

struct ScheduleCfg {
  double base_lr = 0.8;
  int warmup_epochs = 5;
  int total_epochs = 360;
  int steps_per_epoch = 1;

  std::int64_t warmup_steps() const { return std::int64_t{warmup_epochs} * steps_per_epoch; }
  std::int64_t total_steps() const { return std::int64_t{total_epochs} * steps_per_epoch; }
  void validate() const;
};

// Linear warmup to base_lr over warmup_steps, then cosine decay to zero over
// the remaining steps.
double lr_at(const ScheduleCfg &cfg, std::int64_t global_step);

struct OptState {
  double momentum = 0.9;
  double weight_decay = 3e-5;
  ParamMap<float> velocity;
};

// Biases and BN gamma/beta are not decayed.
bool decay_exempt(const std::string &param_name);

// Heavy-ball SGD with coupled weight decay:
//   g' = g + wd * w;  v = m * v + g';  w = w - lr * v
void sgd_step(ParamMap<float> &params, const ParamMap<float> &grads, OptState &opt, double lr);

// Class-dependent Gaussian blobs plus pixel noise. Blobs sit on the vertical
// midline so horizontal flips preserve the label.
struct SynthDataset {
  std::uint64_t seed = 0;
  int num_classes = 3;
  std::int64_t image_hw = 32;
  Tensor images;  // [S,3,H,W]
  std::vector<int> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

SynthDataset make_synth_dataset(std::uint64_t seed, int num_classes, std::int64_t samples,
                                std::int64_t image_hw = 32);

struct EpochStats {
  int epoch;  // 0 is the evaluation before any update
  double loss;
  double accuracy;
};

struct TrainOptions {
  std::int64_t batch_size = 32;
  bool hflip = true;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

// At most 4 classes and 2000 samples. steps_per_epoch must equal
// samples / batch_size (the remainder is dropped).
// After each epoch the whole training set is evaluated in fixed batches with
// batch statistics, no dropout and no augmentation.
TrainResult train_toy(const LCNetConfig &config, const SynthDataset &data,
                      const ScheduleCfg &schedule, OptState opt, std::uint64_t seed,
                      const TrainOptions &options = {});

std::string history_to_csv(const std::vector<EpochStats> &history);

}  // namespace lcnet
