#include "bevtrack/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bevtrack/bev.hpp"
#include "bevtrack/config.hpp"
#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"
#include "bevtrack/kitti.hpp"
#include "bevtrack/metrics.hpp"
#include "bevtrack/nn/train.hpp"
#include "bevtrack/pipeline.hpp"
#include "bevtrack/synthetic.hpp"
#include "bevtrack/tracker.hpp"

namespace bevtrack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::string root, sequences, checkpoint, out, pred, format;
  std::optional<std::uint64_t> seed;
  std::optional<double> depth_cap, iou_threshold;
  std::vector<std::string> settings;
};

void add_common_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key = value config file (default: $BEVTRACK_CONFIG)");
  cmd->add_option("--root", f.root, "KITTI-layout dataset root");
  cmd->add_option("--sequences", f.sequences, "comma-separated sequence ids (default: all)");
  cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint path");
  cmd->add_option("--out", f.out, "output path");
  cmd->add_option("--pred", f.pred, "prediction input path");
  cmd->add_option("--seed", f.seed, "random seed (default 1)");
  cmd->add_option("--format", f.format, "BEV export format: csv or geojson (default csv)")
      ->check(CLI::IsMember({"csv", "geojson"}));
  cmd->add_option("--depth-cap", f.depth_cap, "depth evaluation cap in meters (default 80)");
  cmd->add_option("--iou-threshold", f.iou_threshold, "MOT true-positive IoU (default 0.5)");
  cmd->add_option("--set", f.settings, "override any config key: --set key=value (repeatable)");
}

RunConfig resolve_config(const Flags& f) {
  RunConfig config;
  std::string path = f.config;
  if (path.empty())
    if (const char* env = std::getenv(kConfigEnv); env && *env) path = env;
  if (!path.empty()) config = load_run_config(path);
  auto set = [&](const char* key, const std::string& value) {
    if (!value.empty()) apply_setting(config, key, value);
  };
  set("root", f.root);
  set("sequences", f.sequences);
  set("checkpoint", f.checkpoint);
  set("out", f.out);
  set("pred", f.pred);
  set("format", f.format);
  if (f.seed) config.seed = *f.seed;
  if (f.depth_cap) config.depth_cap = *f.depth_cap;
  if (f.iou_threshold) config.iou_threshold = *f.iou_threshold;
  for (const auto& s : f.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
  }
  config.synth.seed = config.seed;
  return config;
}

std::vector<int> selected_sequences(const RunConfig& config, const DatasetIndex& index) {
  if (!config.sequences.empty()) {
    for (int id : config.sequences) index.sequence(id);
    return config.sequences;
  }
  std::vector<int> out;
  for (const auto& s : index.sequences) out.push_back(s.id);
  return out;
}

DatasetIndex open_dataset(const RunConfig& config) {
  const fs::path& root = require(config.root, "root");
  if (!fs::is_directory(root)) throw ConfigError("config key 'root': " + root.string() + " does not exist");
  return index_dataset(root);
}

void log_record(std::ostream& out, json record) {
  record["status"] = "ok";
  out << record.dump() << std::endl;
}

void write_report(const fs::path& dir, const std::string& stem, const json& records, const std::string& kv) {
  fs::create_directories(dir);
  write_text_file(dir / (stem + ".json"), records.dump(2) + "\n");
  write_text_file(dir / (stem + ".txt"), kv);
}

int run_synth(const RunConfig& config, std::ostream& out) {
  const fs::path& dir = require(config.out, "out");
  write_synthetic_dataset(dir, config.synth);
  log_record(out, {{"stage", "synth"},
                   {"out", dir.string()},
                   {"sequences", config.synth.sequences},
                   {"frames", config.synth.sequences * config.synth.frames}});
  return 0;
}

int run_prepare(const RunConfig& config, std::ostream& out) {
  const DatasetIndex index = open_dataset(config);
  const fs::path& dir = require(config.out, "out");
  const DatasetSplit split =
      config.sequences.empty() ? split_train_val(index, config.split_ratio) : explicit_split(index, config.sequences);
  json sequences = json::array();
  for (const auto& s : index.sequences)
    sequences.push_back({{"id", s.id},
                         {"frames", s.frame_count},
                         {"labels", s.has_labels},
                         {"velodyne", s.has_velodyne},
                         {"oxts", s.has_oxts},
                         {"calib", s.has_calib}});
  const json doc = {{"root", index.root.string()}, {"train", split.train}, {"val", split.val}, {"sequences", sequences}};
  fs::create_directories(dir);
  write_text_file(dir / "split.json", doc.dump(2) + "\n");
  int train_frames = 0;
  for (int id : split.train) train_frames += index.sequence(id).frame_count;
  log_record(out, {{"stage", "prepare"},
                   {"sequences", index.sequences.size()},
                   {"frames", index.total_frames()},
                   {"train_sequences", split.train.size()},
                   {"val_sequences", split.val.size()},
                   {"train_frames", train_frames}});
  return 0;
}

int run_train(const RunConfig& config, std::ostream& out) {
  const DatasetIndex index = open_dataset(config);
  const fs::path& ckpt = require(config.checkpoint, "checkpoint");
  const auto sequences = selected_sequences(config, index);
  config.model.validate();
  config.train.validate();
  if (config.train_steps < 0) throw ConfigError("config key 'train.steps' must be >= 0");
  if (config.batch_size < 1) throw ConfigError("config key 'train.batch_size' must be >= 1");

  const auto samples = build_training_samples(index, sequences, config.model);
  if (samples.empty()) throw DatasetError("no training frames in the selected sequences");
  const nn::Network network(config.model);
  nn::TrainState state = nn::TrainState::initial(network, config.seed, config.train);
  const auto start = std::chrono::steady_clock::now();
  const LossBreakdown initial = nn::dataset_loss(network, state.params, samples, config.train);
  nn::run_training(network, state, samples, config.train, config.batch_size, config.train_steps);
  const LossBreakdown final_loss = nn::dataset_loss(network, state.params, samples, config.train);
  fs::create_directories(fs::absolute(ckpt).parent_path());
  nn::save_checkpoint(ckpt, config.model, state);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log_record(out, {{"stage", "train"},
                   {"frames", samples.size()},
                   {"steps", config.train_steps},
                   {"parameters", network.parameter_count()},
                   {"loss_initial", initial.total},
                   {"loss_final", final_loss.total},
                   {"objectness_final", final_loss.objectness},
                   {"displacement_final", final_loss.displacement},
                   {"depth_final", final_loss.depth},
                   {"learning_rate", state.learning_rate},
                   {"seconds", seconds}});
  return 0;
}

int run_track(const RunConfig& config, std::ostream& out) {
  const DatasetIndex index = open_dataset(config);
  const fs::path& ckpt = require(config.checkpoint, "checkpoint");
  const fs::path& dir = require(config.out, "out");
  if (!fs::is_regular_file(ckpt)) throw ConfigError("config key 'checkpoint': " + ckpt.string() + " does not exist");
  auto [model_config, state] = nn::load_checkpoint(ckpt);
  const nn::Model model(model_config, std::move(state.params));
  TrackerConfig tracker = config.tracker;
  tracker.scale = model_config.scale;
  tracker.validate();

  long frames = 0, detections = 0, tracks = 0, states = 0;
  for (int seq : selected_sequences(config, index)) {
    const SequenceRun run = track_sequence(model, index, seq, tracker);
    const auto records = track_records(seq, run.tracks);
    fs::create_directories(dir / "depth" / sequence_name(seq));
    write_text_file(dir / (sequence_name(seq) + ".txt"), format_track_records(records));
    for (std::size_t t = 0; t < run.depth.size(); ++t)
      write_depth_grid(dir / "depth" / sequence_name(seq) / (frame_name(static_cast<int>(t)) + ".bin"), run.depth[t]);
    frames += static_cast<long>(run.depth.size());
    for (int d : run.detections) detections += d;
    tracks += static_cast<long>(run.tracks.size());
    states += static_cast<long>(records.size());
  }
  log_record(out, {{"stage", "track"},
                   {"frames", frames},
                   {"detections", detections},
                   {"tracks", tracks},
                   {"states", states}});
  return 0;
}

std::vector<TrackedBox> ground_truth_boxes(const SequenceLoader& loader) {
  std::vector<TrackedBox> out;
  for (const auto& [frame, boxes] : loader.labels())
    for (const auto& b : boxes) {
      TrackedBox tb{frame, b.track_id, b.x1, b.y1, b.x2, b.y2, b.class_id, std::nullopt};
      if (b.location) tb.ground = std::make_pair(b.location->x(), b.location->z());
      out.push_back(tb);
    }
  return out;
}

std::vector<TrackedBox> predicted_boxes(const std::vector<TrackRecord>& records, const CameraCalibration& calib) {
  std::vector<TrackedBox> out;
  for (const auto& r : records) {
    TrackedBox tb{r.frame, r.id, r.x1, r.y1, r.x2, r.y2, r.class_id, std::nullopt};
    if (r.depth > 0) {
      const Vec3 p = lift_pixel(0.5 * (r.x1 + r.x2), 0.5 * (r.y1 + r.y2), r.depth, calib);
      tb.ground = std::make_pair(p.x(), p.z());
    }
    out.push_back(tb);
  }
  return out;
}

fs::path tracks_file(const fs::path& pred, int seq) {
  const fs::path file = pred / (sequence_name(seq) + ".txt");
  if (!fs::is_regular_file(file)) throw ConfigError("config key 'pred': missing track file " + file.string());
  return file;
}

int run_evaluate_mot(const RunConfig& config, std::ostream& out) {
  const DatasetIndex index = open_dataset(config);
  const fs::path& pred = require(config.pred, "pred");
  const fs::path& dir = require(config.out, "out");

  json records = json::array();
  std::string kv;
  std::vector<TrackedBox> all_gt, all_pred;
  auto emit = [&](const std::string& seq, const char* criterion, const MotReport& r) {
    json j = to_json(r);
    j["sequence"] = seq;
    j["criterion"] = criterion;
    records.push_back(j);
    kv += "sequence=" + seq + " criterion=" + criterion + " " + to_key_value(r) + "\n";
  };
  // Sequences are pooled with disjoint frame and id ranges.
  constexpr int kFrameStride = 1'000'000;
  for (int seq : selected_sequences(config, index)) {
    const SequenceLoader loader(index, seq);
    const auto gt = ground_truth_boxes(loader);
    const auto pr = predicted_boxes(parse_track_records(read_text_file(tracks_file(pred, seq))), loader.calibration());
    emit(sequence_name(seq), "iou", compute_mot(gt, pr, config.iou_threshold));
    emit(sequence_name(seq), "ground_distance",
         compute_mot(gt, pr, config.ground_distance, MatchCriterion::ground_distance));
    for (auto b : gt) {
      b.frame += seq * kFrameStride;
      b.id += seq * kFrameStride;
      all_gt.push_back(b);
    }
    for (auto b : pr) {
      b.frame += seq * kFrameStride;
      b.id += seq * kFrameStride;
      all_pred.push_back(b);
    }
  }
  const MotReport total = compute_mot(all_gt, all_pred, config.iou_threshold);
  emit("all", "iou", total);
  emit("all", "ground_distance", compute_mot(all_gt, all_pred, config.ground_distance, MatchCriterion::ground_distance));
  write_report(dir, "mot_report", records, kv);
  log_record(out, {{"stage", "evaluate-mot"},
                   {"gt", total.ground_truth},
                   {"mota", total.mota},
                   {"motp", total.motp},
                   {"idsw", total.id_switches}});
  return 0;
}

int run_evaluate_depth(const RunConfig& config, std::ostream& out) {
  const DatasetIndex index = open_dataset(config);
  const fs::path& pred = require(config.pred, "pred");
  const fs::path& dir = require(config.out, "out");
  const auto ranges = default_depth_ranges();

  json records = json::array();
  std::string kv;
  std::map<std::string, DepthAccumulator> totals;
  std::vector<std::string> order;
  long frames = 0;
  auto emit = [&](const std::string& seq, const DepthReport& r) {
    json j = to_json(r);
    j["sequence"] = seq;
    records.push_back(j);
    kv += "sequence=" + seq + " " + to_key_value(r) + "\n";
  };
  for (int seq : selected_sequences(config, index)) {
    const SequenceLoader loader(index, seq);
    std::map<std::string, DepthAccumulator> per_seq;
    for (int t = 0; t < loader.frame_count(); ++t) {
      const fs::path file = pred / "depth" / sequence_name(seq) / (frame_name(t) + ".bin");
      if (!fs::is_regular_file(file)) throw ConfigError("config key 'pred': missing depth file " + file.string());
      const GridD p = read_depth_grid(file);
      nn::ModelConfig grid = config.model;
      grid.input_width = p.cols() * grid.scale;
      grid.input_height = p.rows() * grid.scale;
      const Frame frame = loader.load(t);
      if (frame.image.width() > grid.input_width || frame.image.height() > grid.input_height)
        throw ValidationError(file.string() + " does not cover the image");
      const SparseDepthMap gt = frame_depth_target(frame, grid);
      for (const auto& m : region_masks(frame.annotations, gt, ranges)) {
        if (!per_seq.count(m.label) && !totals.count(m.label)) order.push_back(m.label);
        per_seq[m.label] += accumulate_depth(p, gt, &m.mask, config.depth_cap);
      }
      ++frames;
    }
    for (const auto& label : order) {
      emit(sequence_name(seq), per_seq[label].report(label));
      totals[label] += per_seq[label];
    }
  }
  for (const auto& label : order) emit("all", totals[label].report(label));
  write_report(dir, "depth_report", records, kv);
  const DepthReport whole = totals["whole_image"].report("whole_image");
  json log = {{"stage", "evaluate-depth"}, {"frames", frames}, {"pixels", whole.pixel_count}};
  if (whole.errors) log["abs_rel"] = whole.errors->abs_rel;
  log_record(out, log);
  return 0;
}

int run_export_bev(const RunConfig& config, std::ostream& out) {
  const DatasetIndex index = open_dataset(config);
  const fs::path& pred = require(config.pred, "pred");
  const fs::path& dir = require(config.out, "out");
  const BevFormat format = parse_bev_format(config.format);
  const bool ego_frame = config.export_frame == "ego";
  if (ego_frame && format != BevFormat::csv)
    throw ConfigError("config key 'format': ego-relative export is CSV only, got '" + config.format + "'");
  fs::create_directories(dir);
  long actors = 0, samples = 0, skipped = 0;
  for (int seq : selected_sequences(config, index)) {
    const SequenceLoader loader(index, seq);
    const auto tracks = tracks_from_records(parse_track_records(read_text_file(tracks_file(pred, seq))));
    if (ego_frame) {
      const auto rel =
          extract_ego_relative(tracks, loader.calibration(), config.cam_to_ego, config.tracker.depth_smooth_window);
      if (rel.empty()) throw ExportError("sequence " + sequence_name(seq) + " has no tracks to export");
      write_text_file(dir / (sequence_name(seq) + ".csv"), format_ego_relative_csv(rel));
      actors += static_cast<long>(rel.size());
      for (const auto& t : rel) samples += static_cast<long>(t.samples.size());
      continue;
    }
    if (loader.poses().empty())
      throw ExportError("sequence " + sequence_name(seq) +
                        " has no oxts poses; world-frame export is impossible, use export_frame=ego");
    const BevExtraction bev =
        extract_bev(tracks, loader.poses(), loader.calibration(), config.cam_to_ego, config.tracker.depth_smooth_window);
    export_trajectories(bev.trajectories, format, dir / (sequence_name(seq) + bev_format_extension(format)));
    actors += static_cast<long>(bev.trajectories.size());
    for (const auto& t : bev.trajectories) samples += static_cast<long>(t.samples.size());
    skipped += bev.skipped_states;
  }
  log_record(out, {{"stage", "export-bev"},
                   {"format", config.format},
                   {"frame", config.export_frame},
                   {"actors", actors},
                   {"samples", samples},
                   {"skipped_states", skipped}});
  return 0;
}

int run_plot_bev(const RunConfig& config, std::ostream& out) {
  const fs::path& pred = require(config.pred, "pred");
  const fs::path& svg = require(config.out, "out");
  if (!fs::is_regular_file(pred)) throw ConfigError("config key 'pred': " + pred.string() + " is not a file");
  const BevFormat format = pred.extension() == ".geojson" ? BevFormat::geojson : BevFormat::csv;
  const auto trajectories = parse_trajectories(read_text_file(pred), format);
  write_text_file(svg, plot_trajectories_svg(trajectories));
  log_record(out, {{"stage", "plot-bev"}, {"actors", trajectories.size()}, {"out", svg.string()}});
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Monocular 2.5D detection, tracking and BEV trajectory export"};
  app.require_subcommand(1);
  Flags flags;
  struct Stage {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&, std::ostream&);
  };
  const Stage stages[] = {
      {"synth", "write a procedural KITTI-layout dataset to --out", run_synth},
      {"prepare", "index the dataset and write split.json to --out", run_prepare},
      {"train", "train the toy backbone and write --checkpoint", run_train},
      {"track", "run detection and tracking; write tracks and depth grids to --out", run_track},
      {"evaluate-depth", "score predicted depth grids in --pred against LiDAR", run_evaluate_depth},
      {"evaluate-mot", "score track files in --pred against labels", run_evaluate_mot},
      {"export-bev", "fuse tracks in --pred with ego poses; write trajectories to --out", run_export_bev},
      {"plot-bev", "render a trajectory file (--pred) as SVG (--out)", run_plot_bev},
  };
  std::map<CLI::App*, const Stage*> commands;
  for (const auto& s : stages) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    add_common_flags(cmd, flags);
    commands[cmd] = &s;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  const Stage* stage = nullptr;
  for (const auto& [cmd, s] : commands)
    if (cmd->parsed()) stage = s;
  try {
    const RunConfig config = resolve_config(flags);
    return stage->run(config, out);
  } catch (const ConfigError& e) {
    err << "bevtrack " << stage->name << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "bevtrack " << stage->name << ": " << e.what() << "\n";
    return 1;
  }
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout, std::cerr); }

}  // namespace bevtrack
