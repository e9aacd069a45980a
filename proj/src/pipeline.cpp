#include "bevtrack/pipeline.hpp"

#include <cstring>
#include <fstream>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"

namespace bevtrack {

namespace {

constexpr char kDepthMagic[8] = {'B', 'V', 'T', 'K', 'D', 'E', 'P', 'T'};

}  // namespace

SparseDepthMap frame_depth_target(const Frame& frame, const nn::ModelConfig& config) {
  if (!frame.cloud)
    throw DatasetError("sequence " + sequence_name(frame.sequence_id) + " frame " +
                       std::to_string(frame.frame_index) + " has no velodyne scan");
  const auto points = project_points(*frame.cloud, frame.calib);
  return rasterize_depth(points, config.input_width, config.input_height, config.scale);
}

Frame pad_frame(const Frame& frame, const nn::ModelConfig& config) {
  Frame out = frame;
  out.image = nn::pad_image(frame.image, config.input_width, config.input_height);
  return out;
}

std::vector<PriorObject> priors_from_annotations(std::span<const BoxAnnotation2D> boxes,
                                                 const SparseDepthMap& depth) {
  std::vector<PriorObject> out;
  for (const auto& b : boxes) {
    const auto d = object_depth(depth, b);
    if (!d) continue;
    out.push_back({b.center_u(), b.center_v(), b.half_width(), b.half_height(), *d, 1.0});
  }
  return out;
}

std::vector<nn::TrainingSample> build_training_samples(const DatasetIndex& index, std::span<const int> sequences,
                                                       const nn::ModelConfig& config) {
  config.validate();
  std::vector<nn::TrainingSample> samples;
  for (int seq : sequences) {
    SequenceLoader loader(index, seq);
    for (int t = 0; t < loader.frame_count(); ++t) {
      auto [cur_raw, prev_raw] = loader.load_pair(t);
      const Frame cur = pad_frame(cur_raw, config);
      const Frame prev = pad_frame(prev_raw, config);
      const SparseDepthMap depth_cur = frame_depth_target(cur, config);
      const SparseDepthMap depth_prev = t == 0 ? depth_cur : frame_depth_target(prev, config);
      nn::TrainingSample sample;
      sample.targets = encode_targets(cur, prev, depth_cur, &depth_prev, config.scale, config.num_classes);
      std::vector<PriorObject> priors;
      if (t > 0) priors = priors_from_annotations(prev.annotations, depth_prev);
      const PriorMaps prior_maps =
          render_prior_map(priors, config.output_rows(), config.output_cols(), config.scale);
      // Sparse LiDAR stands in for the previous prediction when that channel is on.
      const GridD* prev_depth = t > 0 ? &depth_prev.values : nullptr;
      sample.input = nn::build_input(config, cur.image, prev.image, prior_maps, prev_depth);
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

SequenceRun track_sequence(const nn::Model& model, const DatasetIndex& index, int sequence,
                           const TrackerConfig& tracker_config) {
  const nn::ModelConfig& config = model.config();
  SequenceLoader loader(index, sequence);
  Tracker tracker(tracker_config);
  SequenceRun run;
  run.sequence = sequence;
  DecodeOptions decode;
  decode.threshold = tracker_config.detection_threshold;
  decode.scale = config.scale;

  Frame prev;
  GridD prev_depth;
  for (int t = 0; t < loader.frame_count(); ++t) {
    Frame cur = pad_frame(loader.load(t), config);
    if (t == 0) prev = cur;
    const auto priors = priors_from_tracks(tracker.tracks(), t);
    const PriorMaps prior_maps = render_prior_map(priors, config.output_rows(), config.output_cols(), config.scale);
    const nn::NetworkOutputs out =
        model.forward(cur.image, prev.image, prior_maps, config.prior_depth_input ? &prev_depth : nullptr);
    auto detections = decode_detections(out.heatmap, out.size, out.offset, out.depth, decode, &out.displacement);
    run.detections.push_back(static_cast<int>(detections.size()));
    tracker.step(detections, t);
    run.depth.push_back(out.depth);
    prev_depth = out.depth;
    prev = std::move(cur);
  }
  run.tracks = tracker.tracks();
  return run;
}

void write_depth_grid(const std::filesystem::path& path, const GridD& depth) {
  AtomicFile file(path);
  {
    std::ofstream os(file.temp_path(), std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(kDepthMagic, sizeof kDepthMagic);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(depth.rows()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(depth.cols()));
    for (int r = 0; r < depth.rows(); ++r)
      for (int c = 0; c < depth.cols(); ++c) write_le<double>(os, depth.at(r, c));
    if (!os) throw IoError("cannot write " + path.string());
  }
  file.commit();
}

GridD read_depth_grid(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kDepthMagic, sizeof magic) != 0)
    throw ParseError(path.string() + " is not a depth grid file");
  std::uint32_t rows = 0, cols = 0;
  if (!read_le(is, rows) || !read_le(is, cols)) throw ParseError(path.string() + " is truncated");
  GridD out(1, static_cast<int>(rows), static_cast<int>(cols), 0.0);
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c)
      if (!read_le(is, out.at(r, c))) throw ParseError(path.string() + " is truncated");
  return out;
}

}  // namespace bevtrack
