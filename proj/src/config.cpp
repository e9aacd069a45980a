#include "bevtrack/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"

namespace bevtrack {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

ConfigError bad_value(const std::string& key, const std::string& value, const char* expected) {
  return ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw bad_value(key, v, "a number");
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw bad_value(key, v, "an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw bad_value(key, v, "true or false");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter int_field(T RunConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { c.*field = static_cast<T>(to_int(k, v)); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"root", [](RunConfig& c, const std::string&, const std::string& v) { c.root = v; }},
      {"sequences",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.sequences = v == "all" ? std::vector<int>{} : parse_int_list(v, k);
       }},
      {"checkpoint", [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; }},
      {"pred", [](RunConfig& c, const std::string&, const std::string& v) { c.pred = v; }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(to_int(k, v));
       }},
      {"format",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v != "csv" && v != "geojson") throw bad_value(k, v, "csv or geojson");
         c.format = v;
       }},
      {"export_frame",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v != "world" && v != "ego") throw bad_value(k, v, "world or ego");
         c.export_frame = v;
       }},
      {"depth_cap", [](RunConfig& c, const std::string& k, const std::string& v) { c.depth_cap = to_double(k, v); }},
      {"iou_threshold",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.iou_threshold = to_double(k, v); }},
      {"ground_distance",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.ground_distance = to_double(k, v); }},
      {"split.ratio", [](RunConfig& c, const std::string& k, const std::string& v) { c.split_ratio = to_double(k, v); }},

      {"model.width", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.input_width = static_cast<int>(to_int(k, v));
       }},
      {"model.height", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.input_height = static_cast<int>(to_int(k, v));
       }},
      {"model.scale",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.scale = static_cast<int>(to_int(k, v)); }},
      {"model.channels",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.channels = parse_int_list(v, k); }},
      {"model.context_layers", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.context_layers = static_cast<int>(to_int(k, v));
       }},
      {"model.head_width", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.head_width = static_cast<int>(to_int(k, v));
       }},
      {"model.prior_channels", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.use_prior_channels = to_bool(k, v);
       }},
      {"model.prior_track_depth", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.prior_track_depth = to_bool(k, v);
       }},
      {"model.prior_depth_input", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.prior_depth_input = to_bool(k, v);
       }},
      {"model.subpixel_offset", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.use_subpixel_offset = to_bool(k, v);
       }},
      {"model.init_depth",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.init_depth = to_double(k, v); }},
      {"model.init_half_extent",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.init_half_extent = to_double(k, v); }},

      {"train.steps", int_field(&RunConfig::train_steps)},
      {"train.batch_size", int_field(&RunConfig::batch_size)},
      {"train.lr", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.base_learning_rate = to_double(k, v);
       }},
      {"train.lr_decay",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_decay = to_double(k, v); }},
      {"train.steps_per_epoch", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.steps_per_epoch = static_cast<int>(to_int(k, v));
       }},
      {"train.alpha1",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weights.alpha1 = to_double(k, v); }},
      {"train.alpha2",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weights.alpha2 = to_double(k, v); }},
      {"train.alpha3",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weights.alpha3 = to_double(k, v); }},
      {"train.focal_alpha",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.focal.alpha = to_double(k, v); }},
      {"train.focal_beta",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.focal.beta = to_double(k, v); }},
      {"train.size_weight",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.size_weight = to_double(k, v); }},
      {"train.offset_weight",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.offset_weight = to_double(k, v); }},
      {"train.z_weight", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.displacement_z_weight = to_double(k, v);
       }},

      {"tracker.threshold", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.tracker.detection_threshold = to_double(k, v);
       }},
      {"tracker.max_age", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.tracker.max_age = static_cast<int>(to_int(k, v));
       }},
      {"tracker.gate_2d",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.tracker.gate_2d = to_double(k, v); }},
      {"tracker.gate_depth",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.tracker.gate_depth = to_double(k, v); }},
      {"tracker.smooth_window", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.tracker.depth_smooth_window = static_cast<int>(to_int(k, v));
       }},
      {"tracker.mode",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "gated")
           c.tracker.mode = AssociationMode::gated;
         else if (v == "combined")
           c.tracker.mode = AssociationMode::combined;
         else
           throw bad_value(k, v, "gated or combined");
       }},

      {"cam_to_ego.translation",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto t = to_doubles(k, v);
         if (t.size() != 3) throw bad_value(k, v, "3 comma-separated numbers");
         c.cam_to_ego.translation = Vec3(t[0], t[1], t[2]);
       }},
      {"cam_to_ego.rotation",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto r = to_doubles(k, v);
         if (r.size() != 9) throw bad_value(k, v, "9 comma-separated numbers (row major)");
         Mat3 m;
         m << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
         if (!is_rotation(m)) throw bad_value(k, v, "a rotation matrix");
         c.cam_to_ego.rotation = m;
       }},

      {"synth.width",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.width = static_cast<int>(to_int(k, v)); }},
      {"synth.height", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.height = static_cast<int>(to_int(k, v));
       }},
      {"synth.frames", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.frames = static_cast<int>(to_int(k, v));
       }},
      {"synth.sequences", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.sequences = static_cast<int>(to_int(k, v));
       }},
      {"synth.objects", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth.objects = static_cast<int>(to_int(k, v));
       }},
      {"synth.ego_speed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.ego_speed = to_double(k, v); }},
      {"synth.max_speed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.max_speed = to_double(k, v); }},
  };
  return table;
}

}  // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(config, key, trim(value));
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file " + path.string() + " does not exist");
  return parse_run_config(read_text_file(path), std::move(base));
}

std::vector<int> parse_int_list(const std::string& text, const std::string& key) {
  std::vector<int> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(to_int(key, item)));
  }
  if (out.empty()) throw bad_value(key, text, "a comma-separated integer list");
  return out;
}

const std::filesystem::path& require(const std::optional<std::filesystem::path>& value, const std::string& key) {
  if (!value) throw ConfigError("missing config key '" + key + "'");
  return *value;
}

std::string describe_run_config(const RunConfig& c) {
  std::ostringstream os;
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s.empty() ? std::string("all") : s;
  };
  auto path = [](const std::optional<std::filesystem::path>& p) { return p ? p->string() : std::string("(unset)"); };
  os << "root = " << path(c.root) << "\n"
     << "sequences = " << list(c.sequences) << "\n"
     << "checkpoint = " << path(c.checkpoint) << "\n"
     << "out = " << path(c.out) << "\n"
     << "pred = " << path(c.pred) << "\n"
     << "seed = " << c.seed << "\n"
     << "format = " << c.format << "\n"
     << "export_frame = " << c.export_frame << "\n"
     << "depth_cap = " << c.depth_cap << "\n"
     << "iou_threshold = " << c.iou_threshold << "\n"
     << "ground_distance = " << c.ground_distance << "\n"
     << "split.ratio = " << c.split_ratio << "\n"
     << "model.width = " << c.model.input_width << "\n"
     << "model.height = " << c.model.input_height << "\n"
     << "model.scale = " << c.model.scale << "\n"
     << "model.channels = " << list(c.model.channels) << "\n"
     << "model.context_layers = " << c.model.context_layers << "\n"
     << "model.head_width = " << c.model.head_width << "\n"
     << "model.prior_channels = " << std::boolalpha << c.model.use_prior_channels << "\n"
     << "model.prior_track_depth = " << c.model.prior_track_depth << "\n"
     << "model.prior_depth_input = " << c.model.prior_depth_input << "\n"
     << "model.subpixel_offset = " << c.model.use_subpixel_offset << "\n"
     << "model.init_depth = " << c.model.init_depth << "\n"
     << "model.init_half_extent = " << c.model.init_half_extent << "\n"
     << "train.steps = " << c.train_steps << "\n"
     << "train.batch_size = " << c.batch_size << "\n"
     << "train.lr = " << c.train.base_learning_rate << "\n"
     << "train.lr_decay = " << c.train.lr_decay << "\n"
     << "train.steps_per_epoch = " << c.train.steps_per_epoch << "\n"
     << "train.alpha1 = " << c.train.weights.alpha1 << "\n"
     << "train.alpha2 = " << c.train.weights.alpha2 << "\n"
     << "train.alpha3 = " << c.train.weights.alpha3 << "\n"
     << "train.focal_alpha = " << c.train.focal.alpha << "\n"
     << "train.focal_beta = " << c.train.focal.beta << "\n"
     << "train.size_weight = " << c.train.size_weight << "\n"
     << "train.offset_weight = " << c.train.offset_weight << "\n"
     << "train.z_weight = " << c.train.displacement_z_weight << "\n"
     << "tracker.threshold = " << c.tracker.detection_threshold << "\n"
     << "tracker.max_age = " << c.tracker.max_age << "\n"
     << "tracker.gate_2d = " << c.tracker.gate_2d << "\n"
     << "tracker.gate_depth = " << c.tracker.gate_depth << "\n"
     << "tracker.smooth_window = " << c.tracker.depth_smooth_window << "\n"
     << "tracker.mode = " << (c.tracker.mode == AssociationMode::gated ? "gated" : "combined") << "\n"
     << "cam_to_ego.translation = " << c.cam_to_ego.translation.x() << "," << c.cam_to_ego.translation.y() << ","
     << c.cam_to_ego.translation.z() << "\n"
     << "synth.width = " << c.synth.width << "\n"
     << "synth.height = " << c.synth.height << "\n"
     << "synth.frames = " << c.synth.frames << "\n"
     << "synth.sequences = " << c.synth.sequences << "\n"
     << "synth.objects = " << c.synth.objects << "\n"
     << "synth.ego_speed = " << c.synth.ego_speed << "\n"
     << "synth.max_speed = " << c.synth.max_speed << "\n";
  return os.str();
}

}  // namespace bevtrack
