#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bevtrack/geometry.hpp"
#include "bevtrack/nn/network.hpp"
#include "bevtrack/nn/train.hpp"
#include "bevtrack/synthetic.hpp"
#include "bevtrack/tracker.hpp"

namespace bevtrack {

struct RunConfig {
  std::optional<std::filesystem::path> root;
  std::vector<int> sequences;  // empty = every sequence in the dataset
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> pred;
  std::uint64_t seed = 1;
  std::string format = "csv";
  std::string export_frame = "world";  // world (lat/lon) or ego (meters from the ego origin)
  double depth_cap = 80.0;
  double iou_threshold = 0.5;
  double ground_distance = 2.0;  // meters, ground-plane true-positive radius
  double split_ratio = 0.8;

  nn::ModelConfig model;
  nn::TrainOptions train;
  int train_steps = 2000;
  int batch_size = 4;
  TrackerConfig tracker;
  RigidTransform cam_to_ego = default_cam_to_ego();
  SyntheticConfig synth;
};

// Applies one `key = value` setting. Throws ConfigError naming the key when it
// is unknown or its value does not parse.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// Lines of `key = value`; '#' starts a comment.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

// Every recognised key with its current value, in file syntax.
std::string describe_run_config(const RunConfig& config);

std::vector<int> parse_int_list(const std::string& text, const std::string& key);

// Returns the value or throws ConfigError("missing config key '<key>'").
const std::filesystem::path& require(const std::optional<std::filesystem::path>& value, const std::string& key);

}  // namespace bevtrack
