#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bevtrack/targets.hpp"

namespace bevtrack {

struct TrackState {
  int frame_index = 0;
  double center_u = 0;
  double center_v = 0;
  double half_width = 0;
  double half_height = 0;
  double depth = 0;
  double confidence = 0;
  int class_id = 0;

  double x1() const { return center_u - half_width; }
  double y1() const { return center_v - half_height; }
  double x2() const { return center_u + half_width; }
  double y2() const { return center_v + half_height; }
};

struct Track {
  int id = 0;
  std::vector<TrackState> states;
  int age = 0;     // frames since creation
  int missed = 0;  // consecutive unmatched frames
  bool active = true;

  const TrackState& last() const { return states.back(); }
  std::vector<double> depths() const;
};

enum class AssociationMode {
  gated,     // nearest planar distance inside both gates
  combined,  // gates plus a normalised planar + depth cost
};

struct TrackerConfig {
  double detection_threshold = 0.3;
  int max_age = 2;
  double gate_2d = 1.0;     // times the track's largest half extent
  double gate_depth = 2.0;  // meters
  int depth_smooth_window = 5;
  AssociationMode mode = AssociationMode::gated;
  int scale = 4;  // displacement heads are in output cells

  void validate() const;
};

struct TrackMatch {
  std::size_t detection;
  std::size_t track;
};

struct Association {
  std::vector<TrackMatch> matches;
  std::vector<std::size_t> unmatched_detections;
  std::vector<std::size_t> unmatched_tracks;
};

// Greedy in descending detection confidence. Each detection is moved back by
// its predicted displacement and claims the nearest free track of its class
// that passes both gates.
Association associate(std::span<const Detection> detections, std::span<const Track> tracks,
                      const TrackerConfig& config);

class Tracker {
 public:
  explicit Tracker(TrackerConfig config);

  // Throws SequencingError unless frame_index exceeds the last processed frame.
  std::vector<Track> step(std::span<const Detection> detections, int frame_index);

  const TrackerConfig& config() const { return config_; }
  // Every track ever created, dead ones included.
  const std::vector<Track>& tracks() const { return tracks_; }
  std::vector<Track> active_tracks() const;
  int last_frame() const { return last_frame_; }

 private:
  TrackerConfig config_;
  std::vector<Track> tracks_;
  int next_id_ = 1;
  int last_frame_ = -1;
};

// Sliding median with symmetric windows truncated at the series ends.
std::vector<double> smooth_depth(std::span<const double> series, int window);

// Tracks active at `frame_index` - 1 rendered as network priors.
std::vector<PriorObject> priors_from_tracks(std::span<const Track> tracks, int frame_index);

// One line per state: "sequence frame id class x1 y1 x2 y2 depth confidence".
struct TrackRecord {
  int sequence = 0;
  int frame = 0;
  int id = 0;
  int class_id = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double depth = 0;
  double confidence = 0;
};

std::vector<TrackRecord> track_records(int sequence, std::span<const Track> tracks);
std::string format_track_records(std::span<const TrackRecord> records);
std::vector<TrackRecord> parse_track_records(const std::string& text);
// Rebuilds per-id tracks (states ordered by frame) from exported records.
std::vector<Track> tracks_from_records(std::span<const TrackRecord> records);

}  // namespace bevtrack
