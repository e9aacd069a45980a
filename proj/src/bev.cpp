#include "bevtrack/bev.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"

namespace bevtrack {

BevExtraction extract_bev(std::span<const Track> tracks, std::span<const EgoPose> poses,
                          const CameraCalibration& calib, const RigidTransform& cam_to_ego, int smooth_window) {
  if (poses.empty()) throw ExportError("no ego poses; world-frame export is impossible, use export_frame=ego for ego-relative output");
  BevExtraction out;

  BevTrajectory ego{kEgoActor, {}};
  for (std::size_t f = 0; f < poses.size(); ++f)
    ego.samples.push_back({static_cast<int>(f), poses[f].latitude, poses[f].longitude, 0.0, 1.0});
  out.trajectories.push_back(std::move(ego));

  std::vector<const Track*> ordered;
  for (const auto& t : tracks) ordered.push_back(&t);
  std::stable_sort(ordered.begin(), ordered.end(), [](const Track* a, const Track* b) { return a->id < b->id; });

  for (const Track* t : ordered) {
    const auto depths = t->depths();
    const auto smoothed = smooth_depth(depths, smooth_window);
    BevTrajectory traj{std::to_string(t->id), {}};
    for (std::size_t i = 0; i < t->states.size(); ++i) {
      const TrackState& s = t->states[i];
      if (s.frame_index < 0 || s.frame_index >= static_cast<int>(poses.size())) {
        ++out.skipped_states;
        continue;
      }
      const Vec3 p = lift_pixel(s.center_u, s.center_v, smoothed[i], calib);
      const GeoPoint g = ego_to_world(p, poses[s.frame_index], cam_to_ego);
      traj.samples.push_back({s.frame_index, g.latitude, g.longitude, smoothed[i], s.confidence});
    }
    if (!traj.samples.empty()) out.trajectories.push_back(std::move(traj));
  }
  return out;
}

std::vector<EgoRelativeTrajectory> extract_ego_relative(std::span<const Track> tracks, const CameraCalibration& calib,
                                                        const RigidTransform& cam_to_ego, int smooth_window) {
  std::vector<const Track*> ordered;
  for (const auto& t : tracks) ordered.push_back(&t);
  std::stable_sort(ordered.begin(), ordered.end(), [](const Track* a, const Track* b) { return a->id < b->id; });
  std::vector<EgoRelativeTrajectory> out;
  for (const Track* t : ordered) {
    if (t->states.empty()) continue;
    const auto smoothed = smooth_depth(t->depths(), smooth_window);
    EgoRelativeTrajectory traj{std::to_string(t->id), {}};
    for (std::size_t i = 0; i < t->states.size(); ++i) {
      const TrackState& s = t->states[i];
      const Vec3 p = cam_to_ego.apply(lift_pixel(s.center_u, s.center_v, smoothed[i], calib));
      traj.samples.push_back({s.frame_index, p.z(), -p.x(), smoothed[i], s.confidence});
    }
    out.push_back(std::move(traj));
  }
  return out;
}

BevFormat parse_bev_format(const std::string& name) {
  if (name == "csv") return BevFormat::csv;
  if (name == "geojson") return BevFormat::geojson;
  throw ConfigError("format: expected csv or geojson, got '" + name + "'");
}

const char* bev_format_extension(BevFormat format) { return format == BevFormat::csv ? ".csv" : ".geojson"; }

namespace {

void check_csv_actor(const std::string& actor_id) {
  if (actor_id.find_first_of(",\n\"") != std::string::npos)
    throw ExportError("actor id '" + actor_id + "' cannot be written to CSV");
}

std::string format_csv(std::span<const BevTrajectory> trajectories) {
  std::string out = "actor_id,frame,lat,lon,range_m,confidence\n";
  char line[256];
  for (const auto& t : trajectories) {
    check_csv_actor(t.actor_id);
    for (const auto& s : t.samples) {
      std::snprintf(line, sizeof line, ",%d,%.17g,%.17g,%.17g,%.17g\n", s.frame, s.latitude, s.longitude, s.range_m,
                    s.confidence);
      out += t.actor_id;
      out += line;
    }
  }
  return out;
}

// Rows of a six-column trajectory CSV after `header`: actor id plus five fields.
std::vector<std::pair<std::string, std::vector<std::string>>> read_csv_rows(const std::string& text,
                                                                           const std::string& header) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) || line.rfind(header, 0) != 0)
    throw ParseError("trajectory CSV lacks the expected header");
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  int line_no = 1;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream row(line);
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError("trajectory CSV line " + std::to_string(line_no) + " needs 6 columns");
    const std::string actor = cells[0];
    cells.erase(cells.begin());
    rows.emplace_back(actor, std::move(cells));
  }
  return rows;
}

// Frame plus four reals, in column order.
std::pair<int, std::array<double, 4>> numeric_fields(const std::vector<std::string>& cells, std::size_t row) {
  try {
    std::size_t used = 0;
    const int frame = std::stoi(cells[0], &used);
    if (used != cells[0].size()) throw std::invalid_argument(cells[0]);
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      v[i] = std::stod(cells[i + 1], &used);
      if (used != cells[i + 1].size()) throw std::invalid_argument(cells[i + 1]);
    }
    return {frame, v};
  } catch (const std::exception&) {
    throw ParseError("trajectory CSV row " + std::to_string(row + 1) + " has a non-numeric field");
  }
}

template <typename Trajectory, typename Sample>
std::vector<Trajectory> group_rows(const std::vector<std::pair<std::string, std::vector<std::string>>>& rows,
                                   Sample (*make)(int, const std::array<double, 4>&)) {
  std::vector<Trajectory> out;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto [frame, v] = numeric_fields(rows[i].second, i);
    auto [it, inserted] = slot.try_emplace(rows[i].first, out.size());
    if (inserted) out.push_back({rows[i].first, {}});
    out[it->second].samples.push_back(make(frame, v));
  }
  return out;
}

std::vector<BevTrajectory> parse_csv(const std::string& text) {
  return group_rows<BevTrajectory>(read_csv_rows(text, "actor_id,frame,lat,lon,range_m,confidence"),
                                   +[](int frame, const std::array<double, 4>& v) {
                                     return BevSample{frame, v[0], v[1], v[2], v[3]};
                                   });
}

std::string format_geojson(std::span<const BevTrajectory> trajectories) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& t : trajectories) {
    nlohmann::json coords = nlohmann::json::array();
    nlohmann::json frames = nlohmann::json::array(), ranges = nlohmann::json::array(),
                   confidences = nlohmann::json::array();
    for (const auto& s : t.samples) {
      coords.push_back({s.longitude, s.latitude});
      frames.push_back(s.frame);
      ranges.push_back(s.range_m);
      confidences.push_back(s.confidence);
    }
    nlohmann::json geometry;
    if (t.samples.size() == 1)
      geometry = {{"type", "Point"}, {"coordinates", coords[0]}};
    else
      geometry = {{"type", "LineString"}, {"coordinates", coords}};
    features.push_back({{"type", "Feature"},
                        {"geometry", geometry},
                        {"properties",
                         {{"actor_id", t.actor_id}, {"frame", frames}, {"range_m", ranges}, {"confidence", confidences}}}});
  }
  nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", features}};
  return doc.dump(1) + "\n";
}

std::vector<BevTrajectory> parse_geojson(const std::string& text) {
  std::vector<BevTrajectory> out;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("type") != "FeatureCollection") throw ParseError("GeoJSON root is not a FeatureCollection");
    for (const auto& f : doc.at("features")) {
      const auto& geometry = f.at("geometry");
      const auto& props = f.at("properties");
      std::vector<nlohmann::json> coords;
      if (geometry.at("type") == "Point")
        coords.push_back(geometry.at("coordinates"));
      else
        for (const auto& c : geometry.at("coordinates")) coords.push_back(c);
      const auto& frames = props.at("frame");
      const auto& ranges = props.at("range_m");
      const auto& confidences = props.at("confidence");
      if (frames.size() != coords.size() || ranges.size() != coords.size() || confidences.size() != coords.size())
        throw ParseError("GeoJSON feature property arrays do not match its coordinates");
      BevTrajectory t{props.at("actor_id").get<std::string>(), {}};
      for (std::size_t i = 0; i < coords.size(); ++i)
        t.samples.push_back({frames[i].get<int>(), coords[i].at(1).get<double>(), coords[i].at(0).get<double>(),
                             ranges[i].get<double>(), confidences[i].get<double>()});
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed trajectory GeoJSON: ") + e.what());
  }
  return out;
}

}  // namespace

std::string format_trajectories(std::span<const BevTrajectory> trajectories, BevFormat format) {
  return format == BevFormat::csv ? format_csv(trajectories) : format_geojson(trajectories);
}

std::string format_ego_relative_csv(std::span<const EgoRelativeTrajectory> trajectories) {
  std::string out = "actor_id,frame,forward_m,left_m,range_m,confidence\n";
  char line[256];
  for (const auto& t : trajectories) {
    check_csv_actor(t.actor_id);
    for (const auto& s : t.samples) {
      std::snprintf(line, sizeof line, ",%d,%.17g,%.17g,%.17g,%.17g\n", s.frame, s.forward_m, s.left_m, s.range_m,
                    s.confidence);
      out += t.actor_id;
      out += line;
    }
  }
  return out;
}

std::vector<EgoRelativeTrajectory> parse_ego_relative_csv(const std::string& text) {
  return group_rows<EgoRelativeTrajectory>(read_csv_rows(text, "actor_id,frame,forward_m,left_m,range_m,confidence"),
                                           +[](int frame, const std::array<double, 4>& v) {
                                             return EgoRelativeSample{frame, v[0], v[1], v[2], v[3]};
                                           });
}

std::vector<BevTrajectory> parse_trajectories(const std::string& text, BevFormat format) {
  return format == BevFormat::csv ? parse_csv(text) : parse_geojson(text);
}

void export_trajectories(std::span<const BevTrajectory> trajectories, BevFormat format,
                         const std::filesystem::path& path) {
  if (trajectories.empty()) throw ExportError("no trajectories to export");
  write_text_file(path, format_trajectories(trajectories, format));
}

std::string plot_trajectories_svg(std::span<const BevTrajectory> trajectories, int width, int height) {
  double lat_min = std::numeric_limits<double>::infinity(), lat_max = -lat_min;
  double lon_min = lat_min, lon_max = -lat_min;
  int frame_max = 0;
  for (const auto& t : trajectories)
    for (const auto& s : t.samples) {
      lat_min = std::min(lat_min, s.latitude);
      lat_max = std::max(lat_max, s.latitude);
      lon_min = std::min(lon_min, s.longitude);
      lon_max = std::max(lon_max, s.longitude);
      frame_max = std::max(frame_max, s.frame);
    }
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!std::isfinite(lat_min)) {
    svg << "</svg>\n";
    return svg.str();
  }
  // Equal meters per pixel on both axes around the mean latitude.
  const double lon_scale = std::cos(0.5 * (lat_min + lat_max) * 3.14159265358979323846 / 180.0);
  const double span_x = std::max((lon_max - lon_min) * lon_scale, 1e-7);
  const double span_y = std::max(lat_max - lat_min, 1e-7);
  const double margin = 40.0;
  const double k = std::min((width - 2 * margin) / span_x, (height - 2 * margin) / span_y);
  auto px = [&](const BevSample& s) { return margin + (s.longitude - lon_min) * lon_scale * k; };
  auto py = [&](const BevSample& s) { return height - margin - (s.latitude - lat_min) * k; };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
  std::size_t color = 0;
  char buf[256];
  for (const auto& t : trajectories) {
    const char* stroke = t.actor_id == kEgoActor ? "#000000" : palette[color++ % 7];
    svg << "<g>\n<title>" << t.actor_id << "</title>\n<polyline fill=\"none\" stroke=\"" << stroke
        << "\" stroke-width=\"1\" points=\"";
    for (const auto& s : t.samples) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(s), py(s));
      svg << buf;
    }
    svg << "\"/>\n";
    for (const auto& s : t.samples) {
      const double opacity = 0.15 + 0.85 * (frame_max > 0 ? static_cast<double>(s.frame) / frame_max : 1.0);
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" fill-opacity=\"%.3f\"/>\n",
                    px(s), py(s), stroke, opacity);
      svg << buf;
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace bevtrack
