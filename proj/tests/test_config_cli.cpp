#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevtrack/bev.hpp"
#include "bevtrack/cli.hpp"
#include "bevtrack/config.hpp"
#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"
#include "bevtrack/kitti.hpp"
#include "bevtrack/pipeline.hpp"
#include "bevtrack/tracker.hpp"
#include "support/temp_dir.hpp"

using namespace bevtrack;
using namespace bevtrack::testing;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;

  nlohmann::json log() const {
    std::istringstream lines(out);
    std::string line, last;
    while (std::getline(lines, line))
      if (!line.empty() && line.front() == '{') last = line;
    return nlohmann::json::parse(last);
  }
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "bevtrack");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

const std::vector<std::string> kSmallModel = {"--set", "model.width=128",    "--set", "model.height=96",
                                              "--set", "model.channels=4,8", "--set", "model.head_width=6"};

std::vector<std::string> with(std::vector<std::string> args, const std::vector<std::string>& extra) {
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

fs::path synth_dataset(const TempDir& dir, const std::vector<std::string>& extra = {}) {
  const fs::path root = dir / "data";
  const CliRun r = run(with({"synth", "--out", root.string()}, extra));
  REQUIRE(r.code == 0);
  return root;
}

// Ground-truth boxes fed through the tracker as confident detections with
// exact displacements.
void write_perfect_tracks(const fs::path& root, const fs::path& pred) {
  const DatasetIndex index = index_dataset(root);
  fs::create_directories(pred);
  for (const auto& info : index.sequences) {
    const SequenceLoader loader(index, info.id);
    TrackerConfig config;
    Tracker tracker(config);
    std::map<int, BoxAnnotation2D> previous;
    for (int t = 0; t < loader.frame_count(); ++t) {
      std::vector<Detection> detections;
      std::map<int, BoxAnnotation2D> current;
      const auto it = loader.labels().find(t);
      if (it != loader.labels().end())
        for (const auto& b : it->second) {
          Detection d;
          d.center_u = b.center_u();
          d.center_v = b.center_v();
          d.half_width = b.half_width();
          d.half_height = b.half_height();
          d.depth = b.location->z();
          d.confidence = 0.9;
          d.class_id = b.class_id;
          if (const auto p = previous.find(b.track_id); p != previous.end()) {
            d.disp_u = (p->second.center_u() - b.center_u()) / config.scale;
            d.disp_v = (p->second.center_v() - b.center_v()) / config.scale;
            d.disp_z = p->second.location->z() - b.location->z();
          }
          detections.push_back(d);
          current[b.track_id] = b;
        }
      tracker.step(detections, t);
      previous = std::move(current);
    }
    write_text_file(pred / (sequence_name(info.id) + ".txt"),
                    format_track_records(track_records(info.id, tracker.tracks())));
  }
}

std::string file_bytes(const fs::path& p) { return read_text_file(p); }

}  // namespace

TEST_CASE("config files parse and round trip through describe") {
  const RunConfig c = parse_run_config(
      "# comment\n"
      "root = /data/kitti\n"
      "sequences = 1, 4,7\n"
      "train.lr = 0.001   # trailing comment\n"
      "tracker.mode = combined\n"
      "export_frame = ego\n"
      "cam_to_ego.translation = 0.1, -1, 2\n");
  CHECK(c.root->string() == "/data/kitti");
  CHECK(c.sequences == std::vector<int>{1, 4, 7});
  CHECK(c.train.base_learning_rate == 0.001);
  CHECK(c.tracker.mode == AssociationMode::combined);
  CHECK(c.export_frame == "ego");
  CHECK(c.cam_to_ego.translation == Vec3(0.1, -1, 2));

  const RunConfig back = parse_run_config(describe_run_config(c));
  CHECK(describe_run_config(back) == describe_run_config(c));
  CHECK(describe_run_config(RunConfig{}).find("checkpoint = (unset)") != std::string::npos);
}

TEST_CASE("config defaults") {
  const RunConfig c;
  CHECK(c.train.base_learning_rate == 1.25e-4);
  CHECK(c.train_steps == 2000);
  CHECK(c.tracker.gate_depth == 2.0);
  CHECK(c.format == "csv");
  CHECK(c.export_frame == "world");
  CHECK(c.cam_to_ego.translation == default_cam_to_ego().translation);
}

TEST_CASE("config errors name the key") {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("train.lrr = 1\n").find("'train.lrr'") != std::string::npos);
  CHECK(message("tracker.gate_2d = wide\n").find("'tracker.gate_2d'") != std::string::npos);
  CHECK(message("format = kml\n").find("'format'") != std::string::npos);
  CHECK(message("export_frame = map\n").find("'export_frame'") != std::string::npos);
  CHECK(message("model.prior_channels = maybe\n").find("'model.prior_channels'") != std::string::npos);
  CHECK(message("cam_to_ego.rotation = 1,0,0,0,1,0,0,0,2\n").find("'cam_to_ego.rotation'") != std::string::npos);
  CHECK(message("just words\n").find("line 1") != std::string::npos);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.conf"), ConfigError);
  try {
    require(RunConfig{}.checkpoint, "checkpoint");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()) == "missing config key 'checkpoint'");
  }
}

TEST_CASE("cli usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"fly"}).code == 2);
  CHECK(run({"prepare", "--no-such-flag"}).code == 2);
  CHECK(run({"export-bev", "--format", "kml"}).code == 2);

  const CliRun missing = run({"prepare"});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("missing config key 'root'") != std::string::npos);

  const CliRun unknown = run({"prepare", "--set", "root.dir=/x"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("unknown config key 'root.dir'") != std::string::npos);

  const CliRun absent = run({"prepare", "--root", "/nonexistent/kitti", "--out", "/tmp"});
  CHECK(absent.code == 2);
  CHECK(absent.err.find("'root'") != std::string::npos);

  CHECK(run({"prepare", "--help"}).code == 0);
}

TEST_CASE("prepare reads the config file named by the environment") {
  TempDir dir("cli_env");
  const fs::path root = synth_dataset(dir, {"--set", "synth.sequences=3", "--set", "synth.frames=4"});
  write_text_file(dir / "run.conf", "root = " + root.string() + "\nout = " + (dir / "prep").string() + "\n");
  ::setenv(kConfigEnv, (dir / "run.conf").c_str(), 1);
  const CliRun r = run({"prepare"});
  ::unsetenv(kConfigEnv);
  REQUIRE(r.code == 0);
  const auto log = r.log();
  CHECK(log["stage"] == "prepare");
  CHECK(log["sequences"] == 3);
  CHECK(log["frames"] == 12);
  const auto split = nlohmann::json::parse(read_text_file(dir / "prep" / "split.json"));
  CHECK(split["train"].size() + split["val"].size() == 3);

  // Flags override the file.
  const CliRun only = run({"prepare", "--config", (dir / "run.conf").string(), "--sequences", "1"});
  REQUIRE(only.code == 0);
  CHECK(only.log()["train_sequences"] == 1);
}

TEST_CASE("evaluate-depth with the LiDAR target as prediction") {
  TempDir dir("cli_depth");
  const fs::path root = synth_dataset(dir, {"--set", "synth.frames=3"});
  nn::ModelConfig model;
  model.input_width = 128;
  model.input_height = 96;
  const DatasetIndex index = index_dataset(root);
  const SequenceLoader loader(index, 0);
  fs::create_directories(dir / "pred" / "depth" / "0000");
  for (int t = 0; t < loader.frame_count(); ++t)
    write_depth_grid(dir / "pred" / "depth" / "0000" / (frame_name(t) + ".bin"),
                     frame_depth_target(loader.load(t), model).values);
  const CliRun r = run({"evaluate-depth", "--root", root.string(), "--pred", (dir / "pred").string(), "--out",
                        (dir / "report").string()});
  REQUIRE(r.code == 0);
  CHECK(r.log()["abs_rel"] == 0.0);
  const auto report = nlohmann::json::parse(read_text_file(dir / "report" / "depth_report.json"));
  bool saw_whole = false;
  for (const auto& rec : report)
    if (rec["sequence"] == "all" && rec["region"] == "whole_image") {
      saw_whole = true;
      CHECK(rec["abs_rel"] == 0.0);
      CHECK(rec["rmse"] == 0.0);
      CHECK(rec["pixel_count"].get<long>() > 0);
    }
  CHECK(saw_whole);
  CHECK(read_text_file(dir / "report" / "depth_report.txt").find("sequence=all") != std::string::npos);

  fs::remove(dir / "pred" / "depth" / "0000" / "000002.bin");
  const CliRun gap = run({"evaluate-depth", "--root", root.string(), "--pred", (dir / "pred").string(), "--out",
                          (dir / "report").string()});
  CHECK(gap.code == 2);
  CHECK(gap.err.find("000002.bin") != std::string::npos);
}

TEST_CASE("perfect detections tracked then scored give MOTA 1") {
  TempDir dir("cli_mot");
  const fs::path root = synth_dataset(dir, {"--set", "synth.sequences=2"});
  write_perfect_tracks(root, dir / "tracks");
  const CliRun r = run({"evaluate-mot", "--root", root.string(), "--pred", (dir / "tracks").string(), "--out",
                        (dir / "report").string()});
  REQUIRE(r.code == 0);
  const auto log = r.log();
  CHECK(log["mota"] == 1.0);
  CHECK(log["idsw"] == 0);
  CHECK(log["gt"].get<int>() > 0);
  const auto report = nlohmann::json::parse(read_text_file(dir / "report" / "mot_report.json"));
  CHECK(report.size() == 6);
  for (const auto& rec : report) CHECK(rec["mota"] == 1.0);
}

TEST_CASE("export-bev is deterministic and offers an ego-relative fallback") {
  TempDir dir("cli_bev");
  const fs::path root = synth_dataset(dir, {"--set", "synth.objects=3", "--set", "synth.ego_speed=0.5"});
  write_perfect_tracks(root, dir / "tracks");
  const std::vector<std::string> base = {"export-bev", "--root", root.string(), "--pred", (dir / "tracks").string()};

  for (const std::string format : {"csv", "geojson"}) {
    const CliRun a = run(with(base, {"--format", format, "--out", (dir / "a").string()}));
    const CliRun b = run(with(base, {"--format", format, "--out", (dir / "b").string()}));
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    const std::string name = "0000." + format;
    CHECK(file_bytes(dir / "a" / name) == file_bytes(dir / "b" / name));
    const auto traj = parse_trajectories(file_bytes(dir / "a" / name), parse_bev_format(format));
    REQUIRE(!traj.empty());
    CHECK(traj[0].actor_id == kEgoActor);
    CHECK(a.log()["actors"] == static_cast<int>(traj.size()));
  }

  const CliRun plot = run({"plot-bev", "--pred", (dir / "a" / "0000.csv").string(), "--out",
                           (dir / "plot.svg").string()});
  REQUIRE(plot.code == 0);
  CHECK(file_bytes(dir / "plot.svg").rfind("<svg", 0) == 0);

  fs::remove_all(root / "oxts");
  const CliRun world = run(with(base, {"--out", (dir / "c").string()}));
  CHECK(world.code == 1);
  CHECK(world.err.find("export_frame=ego") != std::string::npos);

  const CliRun ego = run(with(base, {"--out", (dir / "c").string(), "--set", "export_frame=ego"}));
  REQUIRE(ego.code == 0);
  const auto rel = parse_ego_relative_csv(file_bytes(dir / "c" / "0000.csv"));
  CHECK(!rel.empty());
  for (const auto& t : rel)
    for (const auto& s : t.samples) CHECK(s.forward_m > 0);

  const CliRun geo = run(with(base, {"--out", (dir / "c").string(), "--set", "export_frame=ego", "--format", "geojson"}));
  CHECK(geo.code == 2);
  CHECK(geo.err.find("'format'") != std::string::npos);
}

TEST_CASE("train, track and export are bit-identical across runs") {
  TempDir dir("cli_pipeline");
  const fs::path root = synth_dataset(dir, {"--set", "synth.frames=4"});
  auto pipeline = [&](const std::string& tag) {
    const fs::path out = dir / tag;
    const auto common = with({"--root", root.string(), "--seed", "11"}, kSmallModel);
    REQUIRE(run(with({"train", "--checkpoint", (out / "model.ckpt").string(), "--set", "train.steps=3", "--set",
                      "train.lr=1e-3"},
                     common))
                .code == 0);
    REQUIRE(run(with({"track", "--checkpoint", (out / "model.ckpt").string(), "--out", (out / "tracks").string()},
                     common))
                .code == 0);
    REQUIRE(run(with({"export-bev", "--pred", (out / "tracks").string(), "--out", (out / "bev").string()}, common))
                .code == 0);
    return file_bytes(out / "model.ckpt") + file_bytes(out / "tracks" / "0000.txt") +
           file_bytes(out / "tracks" / "depth" / "0000" / "000003.bin") + file_bytes(out / "bev" / "0000.csv");
  };
  CHECK(pipeline("first") == pipeline("second"));
}

TEST_CASE("incompatible checkpoints are config errors") {
  TempDir dir("cli_ckpt");
  const fs::path root = synth_dataset(dir, {"--set", "synth.frames=2"});
  const auto common = with({"--root", root.string()}, kSmallModel);
  const fs::path ckpt = dir / "model.ckpt";
  REQUIRE(run(with({"train", "--checkpoint", ckpt.string(), "--set", "train.steps=0"}, common)).code == 0);

  std::string bytes = file_bytes(ckpt);
  bytes[8] = static_cast<char>(bytes[8] + 1);
  {
    std::ofstream f(ckpt, std::ios::binary | std::ios::trunc);
    f << bytes;
  }
  const CliRun r = run(with({"track", "--checkpoint", ckpt.string(), "--out", (dir / "t").string()}, common));
  CHECK(r.code == 2);
  CHECK(r.err.find("version") != std::string::npos);

  const CliRun none =
      run(with({"track", "--checkpoint", (dir / "absent.ckpt").string(), "--out", (dir / "t").string()}, common));
  CHECK(none.code == 2);
  CHECK(none.err.find("'checkpoint'") != std::string::npos);
}
