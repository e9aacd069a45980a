#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "bevtrack/losses.hpp"
#include "bevtrack/nn/network.hpp"
#include "bevtrack/targets.hpp"

namespace bevtrack::nn {

struct TrainingSample {
  GridD input;
  TargetMaps targets;
};

struct TrainOptions {
  double base_learning_rate = 1.25e-4;
  double lr_decay = 0.95;    // multiplied in once per epoch
  int steps_per_epoch = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  LossWeights weights;
  FocalParams focal;
  double size_weight = 0.1;    // L1 on half extents inside the objectness term
  double offset_weight = 1.0;  // L1 on sub-pixel offsets inside the objectness term
  double displacement_z_weight = 1.0;

  void validate() const;
};

struct TrainState {
  std::vector<double> params;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::uint64_t step = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;

  static TrainState initial(const Network& network, std::uint64_t seed, const TrainOptions& options);
};

double learning_rate_at(const TrainOptions& options, std::uint64_t step);

// Objectness = focal + size_weight * L1(size) + offset_weight * L1(offset),
// all at ground-truth centers. Fills `grads` with d(total)/d(outputs).
LossBreakdown evaluate_loss(const NetworkOutputs& outputs, const TargetMaps& targets, const TrainOptions& options,
                            OutputGradients* grads = nullptr);

// One Adam update on the batch mean. Throws TrainingError naming the first
// non-finite loss component.
LossBreakdown train_step(const Network& network, TrainState& state, std::span<const TrainingSample> batch,
                         const TrainOptions& options);

// Mean loss over samples at the current parameters; no update.
LossBreakdown dataset_loss(const Network& network, std::span<const double> params,
                           std::span<const TrainingSample> samples, const TrainOptions& options);

using StepCallback = std::function<void(std::uint64_t step, const LossBreakdown&)>;

// Runs `steps` updates over epoch-shuffled batches (shuffle seeded by state.seed and epoch).
void run_training(const Network& network, TrainState& state, std::span<const TrainingSample> samples,
                  const TrainOptions& options, int batch_size, int steps, const StepCallback& on_step = {});

// Binary container, little endian:
//   "BVTKCKPT" | u32 version | model config | u64 step | f64 lr | u64 seed |
//   u64 n | f64 params[n] | f64 adam_m[n] | f64 adam_v[n]
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const TrainState& state);
std::pair<ModelConfig, TrainState> load_checkpoint(const std::filesystem::path& path);

}  // namespace bevtrack::nn
