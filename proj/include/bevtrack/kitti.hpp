#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bevtrack/geometry.hpp"
#include "bevtrack/image.hpp"

namespace bevtrack {

inline constexpr int kNumClasses = 2;  // Car, Pedestrian

// Returns the class index for a KITTI type string, or -1 if the class is not used.
int class_from_name(const std::string& type);
const char* class_name(int class_id);

struct BoxAnnotation2D {
  double x1 = 0;
  double y1 = 0;
  double x2 = 0;
  double y2 = 0;
  int class_id = 0;
  int track_id = 0;
  // Object location in the rectified camera frame when the label has it.
  std::optional<Vec3> location;

  double center_u() const { return 0.5 * (x1 + x2); }
  double center_v() const { return 0.5 * (y1 + y2); }
  double half_width() const { return 0.5 * (x2 - x1); }
  double half_height() const { return 0.5 * (y2 - y1); }
};

struct Frame {
  Image image;
  std::vector<BoxAnnotation2D> annotations;
  std::optional<std::vector<Vec3>> cloud;
  std::optional<EgoPose> ego;
  int sequence_id = 0;
  int frame_index = 0;
  CameraCalibration calib;
};

struct SequenceInfo {
  int id = 0;
  int frame_count = 0;
  bool has_labels = false;
  bool has_velodyne = false;
  bool has_oxts = false;
  bool has_calib = false;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<SequenceInfo> sequences;

  const SequenceInfo& sequence(int id) const;
  int total_frames() const;
};

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> val;
};

std::string sequence_name(int id);  // "0007"
std::string frame_name(int index);  // "000042"

DatasetIndex index_dataset(const std::filesystem::path& root);

// Sequence-granular split: sequences (ascending id) go to train while the
// frames already assigned fall short of ratio * total.
DatasetSplit split_train_val(const DatasetIndex& index, double ratio);

// Explicit assignment; every listed id must exist and the sets must be disjoint.
DatasetSplit explicit_split(const DatasetIndex& index, const std::vector<int>& train_ids);

// label_02/<seq>.txt, keyed by frame index; only Car and Pedestrian rows.
std::map<int, std::vector<BoxAnnotation2D>> parse_labels(const std::string& text, int image_width,
                                                         int image_height);
std::vector<EgoPose> parse_oxts(const std::string& text);

class SequenceLoader {
 public:
  SequenceLoader(const DatasetIndex& index, int sequence_id);

  int frame_count() const { return info_.frame_count; }
  const CameraCalibration& calibration() const { return calib_; }
  const std::vector<EgoPose>& poses() const { return poses_; }
  const std::map<int, std::vector<BoxAnnotation2D>>& labels() const { return labels_; }

  Frame load(int t) const;
  // (frame t, frame t-1); t = 0 pairs the frame with itself.
  std::pair<Frame, Frame> load_pair(int t) const;

 private:
  std::filesystem::path root_;
  SequenceInfo info_;
  CameraCalibration calib_;
  std::vector<EgoPose> poses_;
  std::map<int, std::vector<BoxAnnotation2D>> labels_;
};

std::pair<Frame, Frame> load_frame_pair(const DatasetIndex& index, int sequence_id, int t);

struct ColorJitter {
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
};

struct AugmentationConfig {
  double flip_probability = 0.0;
  double scale_min = 1.0;
  double scale_max = 1.0;
  int crop_width = 0;  // 0 keeps the full image
  int crop_height = 0;
  ColorJitter color_jitter;
  double max_rotation_deg = 0.0;
  double max_translation_px = 0.0;
  bool scale_depth_with_resize = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AugmentedPair {
  Frame current;
  Frame previous;
  SparseDepthMap depth;
  double resize_ratio = 1.0;
};

AugmentedPair augment(const Frame& current, const Frame& previous, const SparseDepthMap& depth_gt,
                      const AugmentationConfig& config);

}  // namespace bevtrack
