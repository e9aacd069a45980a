#include "bevtrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "bevtrack/error.hpp"

namespace bevtrack {

std::vector<double> Track::depths() const {
  std::vector<double> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(s.depth);
  return out;
}

void TrackerConfig::validate() const {
  if (max_age < 0) throw ConfigError("tracker.max_age must be >= 0");
  if (!(gate_2d > 0)) throw ConfigError("tracker.gate_2d must be > 0");
  if (!(gate_depth > 0)) throw ConfigError("tracker.gate_depth must be > 0");
  if (depth_smooth_window < 1 || depth_smooth_window % 2 == 0)
    throw ConfigError("tracker.depth_smooth_window must be odd and >= 1");
  if (scale < 1) throw ConfigError("tracker.scale must be >= 1");
}

Association associate(std::span<const Detection> detections, std::span<const Track> tracks,
                      const TrackerConfig& config) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });

  Association out;
  std::vector<bool> claimed(tracks.size(), false);
  for (std::size_t di : order) {
    const Detection& d = detections[di];
    const double u = d.center_u + d.disp_u * config.scale;
    const double v = d.center_v + d.disp_v * config.scale;
    const double z = d.depth + d.disp_z;
    double best_cost = std::numeric_limits<double>::infinity();
    std::size_t best = tracks.size();
    for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
      if (claimed[ti] || !tracks[ti].active || tracks[ti].states.empty()) continue;
      const TrackState& s = tracks[ti].last();
      if (s.class_id != d.class_id) continue;
      const double gate = config.gate_2d * std::max(s.half_width, s.half_height);
      const double planar = std::hypot(u - s.center_u, v - s.center_v);
      const double dz = std::abs(z - s.depth);
      if (planar > gate || dz > config.gate_depth) continue;
      const double cost =
          config.mode == AssociationMode::gated ? planar : planar / gate + dz / config.gate_depth;
      if (cost < best_cost) {
        best_cost = cost;
        best = ti;
      }
    }
    if (best < tracks.size()) {
      claimed[best] = true;
      out.matches.push_back({di, best});
    } else {
      out.unmatched_detections.push_back(di);
    }
  }
  for (std::size_t ti = 0; ti < tracks.size(); ++ti)
    if (!claimed[ti] && tracks[ti].active) out.unmatched_tracks.push_back(ti);
  return out;
}

Tracker::Tracker(TrackerConfig config) : config_(config) { config_.validate(); }

std::vector<Track> Tracker::active_tracks() const {
  std::vector<Track> out;
  for (const auto& t : tracks_)
    if (t.active) out.push_back(t);
  return out;
}

namespace {

TrackState state_from(const Detection& d, int frame_index) {
  return {frame_index, d.center_u, d.center_v, d.half_width, d.half_height, d.depth, d.confidence, d.class_id};
}

}  // namespace

std::vector<Track> Tracker::step(std::span<const Detection> detections, int frame_index) {
  if (frame_index <= last_frame_)
    throw SequencingError("frame " + std::to_string(frame_index) + " follows frame " +
                          std::to_string(last_frame_));
  last_frame_ = frame_index;

  std::vector<Detection> kept;
  for (const auto& d : detections)
    if (d.confidence >= config_.detection_threshold) kept.push_back(d);

  const Association assoc = associate(kept, tracks_, config_);
  for (const auto& m : assoc.matches) {
    Track& t = tracks_[m.track];
    t.states.push_back(state_from(kept[m.detection], frame_index));
    t.missed = 0;
  }
  for (std::size_t ti : assoc.unmatched_tracks) {
    Track& t = tracks_[ti];
    if (++t.missed > config_.max_age) {
      t.missed = config_.max_age;
      t.active = false;
    }
  }
  for (auto& t : tracks_)
    if (t.active) ++t.age;
  for (std::size_t di : assoc.unmatched_detections) {
    Track t;
    t.id = next_id_++;
    t.states.push_back(state_from(kept[di], frame_index));
    tracks_.push_back(std::move(t));
  }
  return active_tracks();
}

std::vector<double> smooth_depth(std::span<const double> series, int window) {
  if (window < 1 || window % 2 == 0) throw ContractError("smoothing window must be odd and >= 1");
  const int n = static_cast<int>(series.size());
  const int h = window / 2;
  std::vector<double> out(series.size());
  std::vector<double> buf;
  for (int i = 0; i < n; ++i) {
    const int k = std::min({h, i, n - 1 - i});
    buf.assign(series.begin() + (i - k), series.begin() + (i + k + 1));
    std::nth_element(buf.begin(), buf.begin() + k, buf.end());
    out[i] = buf[k];
  }
  return out;
}

std::vector<PriorObject> priors_from_tracks(std::span<const Track> tracks, int frame_index) {
  std::vector<PriorObject> out;
  for (const auto& t : tracks) {
    if (!t.active || t.states.empty() || t.last().frame_index != frame_index - 1) continue;
    const TrackState& s = t.last();
    out.push_back({s.center_u, s.center_v, s.half_width, s.half_height, s.depth, s.confidence});
  }
  return out;
}

std::vector<TrackRecord> track_records(int sequence, std::span<const Track> tracks) {
  std::vector<TrackRecord> out;
  for (const auto& t : tracks)
    for (const auto& s : t.states)
      out.push_back({sequence, s.frame_index, t.id, s.class_id, s.x1(), s.y1(), s.x2(), s.y2(), s.depth,
                     s.confidence});
  std::stable_sort(out.begin(), out.end(), [](const TrackRecord& a, const TrackRecord& b) {
    return std::tie(a.frame, a.id) < std::tie(b.frame, b.id);
  });
  return out;
}

std::string format_track_records(std::span<const TrackRecord> records) {
  std::string out;
  char line[320];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%04d %d %d %s %.17g %.17g %.17g %.17g %.17g %.17g\n", r.sequence, r.frame,
                  r.id, class_name(r.class_id), r.x1, r.y1, r.x2, r.y2, r.depth, r.confidence);
    out += line;
  }
  return out;
}

std::vector<TrackRecord> parse_track_records(const std::string& text) {
  std::vector<TrackRecord> out;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream is(line);
    TrackRecord r;
    std::string cls;
    if (!(is >> r.sequence >> r.frame >> r.id >> cls >> r.x1 >> r.y1 >> r.x2 >> r.y2 >> r.depth >> r.confidence))
      throw ParseError("track record line " + std::to_string(line_no) + " is malformed");
    r.class_id = class_from_name(cls);
    if (r.class_id < 0) throw ParseError("track record line " + std::to_string(line_no) + ": unknown class " + cls);
    out.push_back(r);
  }
  return out;
}

std::vector<Track> tracks_from_records(std::span<const TrackRecord> records) {
  std::map<int, Track> by_id;
  for (const auto& r : records) {
    Track& t = by_id[r.id];
    t.id = r.id;
    t.states.push_back({r.frame, 0.5 * (r.x1 + r.x2), 0.5 * (r.y1 + r.y2), 0.5 * (r.x2 - r.x1), 0.5 * (r.y2 - r.y1),
                        r.depth, r.confidence, r.class_id});
  }
  std::vector<Track> out;
  for (auto& [id, t] : by_id) {
    std::stable_sort(t.states.begin(), t.states.end(),
                     [](const TrackState& a, const TrackState& b) { return a.frame_index < b.frame_index; });
    for (std::size_t i = 1; i < t.states.size(); ++i)
      if (t.states[i].frame_index == t.states[i - 1].frame_index)
        throw ValidationError("track " + std::to_string(id) + " has two records for frame " +
                              std::to_string(t.states[i].frame_index));
    t.age = t.states.back().frame_index - t.states.front().frame_index;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace bevtrack
