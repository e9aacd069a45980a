#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "bevtrack/kitti.hpp"
#include "bevtrack/nn/network.hpp"
#include "bevtrack/nn/train.hpp"
#include "bevtrack/targets.hpp"
#include "bevtrack/tracker.hpp"

namespace bevtrack {

// LiDAR depth target on the padded network grid.
SparseDepthMap frame_depth_target(const Frame& frame, const nn::ModelConfig& config);

// Frame with its image zero-padded to the network input size.
Frame pad_frame(const Frame& frame, const nn::ModelConfig& config);

// Previous-frame ground truth as a tracklet prior (confidence 1). Objects
// without any depth return are left out.
std::vector<PriorObject> priors_from_annotations(std::span<const BoxAnnotation2D> boxes,
                                                 const SparseDepthMap& depth);

// One sample per frame of each listed sequence. Frame 0 pairs with itself and
// gets an empty prior, matching inference.
std::vector<nn::TrainingSample> build_training_samples(const DatasetIndex& index, std::span<const int> sequences,
                                                       const nn::ModelConfig& config);

struct SequenceRun {
  int sequence = 0;
  std::vector<Track> tracks;       // all tracks, dead ones included
  std::vector<GridD> depth;        // predicted depth per frame
  std::vector<int> detections;     // detections kept per frame
};

SequenceRun track_sequence(const nn::Model& model, const DatasetIndex& index, int sequence,
                           const TrackerConfig& tracker_config);

// Depth grid file: "BVTKDEPT" | u32 rows | u32 cols | f64 values (row major).
void write_depth_grid(const std::filesystem::path& path, const GridD& depth);
GridD read_depth_grid(const std::filesystem::path& path);

}  // namespace bevtrack
