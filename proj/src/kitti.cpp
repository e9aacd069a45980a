#include "bevtrack/kitti.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"

namespace bevtrack {

namespace fs = std::filesystem;

int class_from_name(const std::string& type) {
  if (type == "Car") return 0;
  if (type == "Pedestrian") return 1;
  return -1;
}

const char* class_name(int class_id) {
  switch (class_id) {
    case 0: return "Car";
    case 1: return "Pedestrian";
    default: return "DontCare";
  }
}

std::string sequence_name(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", id);
  return buf;
}

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return buf;
}

const SequenceInfo& DatasetIndex::sequence(int id) const {
  for (const auto& s : sequences)
    if (s.id == id) return s;
  throw IndexError("sequence " + sequence_name(id) + " is not in the dataset");
}

int DatasetIndex::total_frames() const {
  int n = 0;
  for (const auto& s : sequences) n += s.frame_count;
  return n;
}

namespace {

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

int count_indexed_files(const fs::path& dir, const std::string& ext, const std::string& seq) {
  std::vector<int> indices;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ext) continue;
    const auto stem = entry.path().stem().string();
    if (all_digits(stem)) indices.push_back(std::stoi(stem));
  }
  std::sort(indices.begin(), indices.end());
  for (std::size_t i = 0; i < indices.size(); ++i)
    if (indices[i] != static_cast<int>(i))
      throw ValidationError("sequence " + seq + ": frame indices in " + dir.string() +
                            " are not contiguous from 0");
  return static_cast<int>(indices.size());
}

int max_label_frame(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  int max_frame = -1;
  while (std::getline(lines, line)) {
    std::istringstream tokens(line);
    int frame;
    if (tokens >> frame) max_frame = std::max(max_frame, frame);
  }
  return max_frame;
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root) {
  const fs::path images = root / "image_02";
  if (!fs::is_directory(images)) throw DatasetError("missing image tree: " + images.string());

  DatasetIndex index;
  index.root = root;
  for (const auto& entry : fs::directory_iterator(images)) {
    const auto name = entry.path().filename().string();
    if (!entry.is_directory() || !all_digits(name)) continue;
    SequenceInfo info;
    info.id = std::stoi(name);
    info.frame_count = count_indexed_files(entry.path(), ".png", name);

    const fs::path labels = root / "label_02" / (name + ".txt");
    info.has_labels = fs::is_regular_file(labels);
    if (info.has_labels) {
      const int last = max_label_frame(read_text_file(labels));
      if (last >= info.frame_count)
        throw ValidationError("sequence " + name + ": labels reference frame " + std::to_string(last) +
                              " but only " + std::to_string(info.frame_count) + " images exist");
    }
    const fs::path velo = root / "velodyne" / name;
    info.has_velodyne = fs::is_directory(velo) && count_indexed_files(velo, ".bin", name) > 0;
    info.has_oxts = fs::is_regular_file(root / "oxts" / (name + ".txt"));
    info.has_calib = fs::is_regular_file(root / "calib" / (name + ".txt"));
    index.sequences.push_back(info);
  }
  if (index.sequences.empty()) throw DatasetError("no sequences under " + images.string());
  std::sort(index.sequences.begin(), index.sequences.end(),
            [](const SequenceInfo& a, const SequenceInfo& b) { return a.id < b.id; });
  return index;
}

DatasetSplit split_train_val(const DatasetIndex& index, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw SplitError("split ratio must lie in (0, 1)");
  if (index.sequences.size() < 2) throw SplitError("need at least 2 sequences to split");

  const double target = ratio * index.total_frames();
  DatasetSplit split;
  double assigned = 0.0;
  for (const auto& seq : index.sequences) {
    if (assigned < target) {
      split.train.push_back(seq.id);
      assigned += seq.frame_count;
    } else {
      split.val.push_back(seq.id);
    }
  }
  // Both halves must be populated.
  if (split.val.empty()) {
    split.val.push_back(split.train.back());
    split.train.pop_back();
  }
  return split;
}

DatasetSplit explicit_split(const DatasetIndex& index, const std::vector<int>& train_ids) {
  std::set<int> train(train_ids.begin(), train_ids.end());
  if (train.size() != train_ids.size()) throw SplitError("duplicate sequence in train list");
  DatasetSplit split;
  for (int id : train_ids) index.sequence(id);
  for (const auto& seq : index.sequences) {
    if (train.count(seq.id))
      split.train.push_back(seq.id);
    else
      split.val.push_back(seq.id);
  }
  if (split.train.empty() || split.val.empty()) throw SplitError("explicit split leaves one side empty");
  return split;
}

std::map<int, std::vector<BoxAnnotation2D>> parse_labels(const std::string& text, int image_width,
                                                         int image_height) {
  std::map<int, std::vector<BoxAnnotation2D>> out;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::istringstream tok(line);
    int frame, track_id;
    std::string type;
    double truncated, occluded, alpha, x1, y1, x2, y2;
    if (!(tok >> frame)) continue;
    if (!(tok >> track_id >> type >> truncated >> occluded >> alpha >> x1 >> y1 >> x2 >> y2))
      throw ParseError("label line " + std::to_string(line_no) + " is truncated");
    const int cls = class_from_name(type);
    if (cls < 0) continue;

    BoxAnnotation2D box;
    box.class_id = cls;
    box.track_id = track_id;
    box.x1 = std::clamp(x1, 0.0, static_cast<double>(image_width));
    box.x2 = std::clamp(x2, 0.0, static_cast<double>(image_width));
    box.y1 = std::clamp(y1, 0.0, static_cast<double>(image_height));
    box.y2 = std::clamp(y2, 0.0, static_cast<double>(image_height));
    if (!(box.x2 > box.x1) || !(box.y2 > box.y1)) continue;
    double h, w, l, x, y, z;
    if (tok >> h >> w >> l >> x >> y >> z) box.location = Vec3(x, y, z);

    auto& frame_boxes = out[frame];
    for (const auto& other : frame_boxes)
      if (other.track_id == track_id)
        throw ValidationError("frame " + std::to_string(frame) + " repeats track id " +
                              std::to_string(track_id));
    frame_boxes.push_back(box);
  }
  return out;
}

std::vector<EgoPose> parse_oxts(const std::string& text) {
  std::vector<EgoPose> poses;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream tok(line);
    EgoPose pose;
    double roll, pitch;
    if (!(tok >> pose.latitude)) continue;
    if (!(tok >> pose.longitude >> pose.altitude >> roll >> pitch >> pose.yaw))
      throw ParseError("oxts line " + std::to_string(poses.size() + 1) + " is truncated");
    pose.timestamp = 0.1 * static_cast<double>(poses.size());  // 10 Hz capture
    pose.validate();
    poses.push_back(pose);
  }
  return poses;
}

SequenceLoader::SequenceLoader(const DatasetIndex& index, int sequence_id)
    : root_(index.root), info_(index.sequence(sequence_id)) {
  const auto name = sequence_name(sequence_id);
  if (!info_.has_calib) throw DatasetError("sequence " + name + " has no calibration file");
  if (info_.frame_count == 0) throw DatasetError("sequence " + name + " has no frames");
  const Image first = read_png(root_ / "image_02" / name / (frame_name(0) + ".png"));
  calib_ = load_calibration(read_text_file(root_ / "calib" / (name + ".txt")), first.width(),
                            first.height());
  if (info_.has_oxts) poses_ = parse_oxts(read_text_file(root_ / "oxts" / (name + ".txt")));
  if (info_.has_labels)
    labels_ = parse_labels(read_text_file(root_ / "label_02" / (name + ".txt")), first.width(),
                           first.height());
}

Frame SequenceLoader::load(int t) const {
  if (t < 0 || t >= info_.frame_count)
    throw IndexError("frame " + std::to_string(t) + " out of range for sequence " +
                     sequence_name(info_.id));
  const auto name = sequence_name(info_.id);
  Frame frame;
  frame.sequence_id = info_.id;
  frame.frame_index = t;
  frame.calib = calib_;
  frame.image = read_png(root_ / "image_02" / name / (frame_name(t) + ".png"));
  if (auto it = labels_.find(t); it != labels_.end()) frame.annotations = it->second;
  const fs::path velo = root_ / "velodyne" / name / (frame_name(t) + ".bin");
  if (info_.has_velodyne && fs::is_regular_file(velo)) frame.cloud = read_velodyne(velo);
  if (t < static_cast<int>(poses_.size())) frame.ego = poses_[t];
  return frame;
}

std::pair<Frame, Frame> SequenceLoader::load_pair(int t) const {
  std::pair<Frame, Frame> pair{load(t), Frame{}};
  pair.second = t == 0 ? pair.first : load(t - 1);
  return pair;
}

std::pair<Frame, Frame> load_frame_pair(const DatasetIndex& index, int sequence_id, int t) {
  if (t < 0) throw IndexError("frame index must be non-negative");
  return SequenceLoader(index, sequence_id).load_pair(t);
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentationConfig::validate() const {
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
    throw ConfigError("flip_probability must lie in [0, 1]");
  if (!(scale_min > 0.0) || !(scale_min <= scale_max))
    throw ConfigError("scale_range requires 0 < min <= max");
  if (crop_width < 0 || crop_height < 0) throw ConfigError("crop size must be non-negative");
  if (max_rotation_deg < 0.0 || max_translation_px < 0.0)
    throw ConfigError("affine limits must be non-negative");
}

namespace {

// Maps source continuous pixel coordinates to destination coordinates.
struct Affine2 {
  double a = 1, b = 0, tx = 0;
  double c = 0, d = 1, ty = 0;

  std::pair<double, double> apply(double x, double y) const { return {a * x + b * y + tx, c * x + d * y + ty}; }
  Affine2 then(const Affine2& next) const {
    Affine2 r;
    r.a = next.a * a + next.b * c;
    r.b = next.a * b + next.b * d;
    r.tx = next.a * tx + next.b * ty + next.tx;
    r.c = next.c * a + next.d * c;
    r.d = next.c * b + next.d * d;
    r.ty = next.c * tx + next.d * ty + next.ty;
    return r;
  }
  Affine2 inverse() const {
    const double det = a * d - b * c;
    Affine2 r;
    r.a = d / det;
    r.b = -b / det;
    r.c = -c / det;
    r.d = a / det;
    r.tx = -(r.a * tx + r.b * ty);
    r.ty = -(r.c * tx + r.d * ty);
    return r;
  }
  bool is_identity() const { return a == 1 && b == 0 && c == 0 && d == 1 && tx == 0 && ty == 0; }
};

Image warp_image(const Image& src, const Affine2& forward, int out_w, int out_h) {
  if (forward.is_identity() && out_w == src.width() && out_h == src.height()) return src;
  const Affine2 inv = forward.inverse();
  Image out(out_w, out_h);
  const int w = src.width();
  const int h = src.height();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < out_h; ++r) {
    for (int x = 0; x < out_w; ++x) {
      auto [sx, sy] = inv.apply(x + 0.5, r + 0.5);
      sx -= 0.5;
      sy -= 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            if (wgt == 0.0) continue;
            const int xx = x0 + dx;
            const int yy = y0 + dy;
            if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
            acc += wgt * src(ch, yy, xx);
          }
        out(ch, r, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

std::vector<BoxAnnotation2D> warp_boxes(const std::vector<BoxAnnotation2D>& boxes, const Affine2& t,
                                        int out_w, int out_h) {
  std::vector<BoxAnnotation2D> out;
  for (const auto& box : boxes) {
    const double xs[2] = {box.x1, box.x2};
    const double ys[2] = {box.y1, box.y2};
    double lo_x = 1e300, lo_y = 1e300, hi_x = -1e300, hi_y = -1e300;
    for (double x : xs)
      for (double y : ys) {
        auto [u, v] = t.apply(x, y);
        lo_x = std::min(lo_x, u);
        hi_x = std::max(hi_x, u);
        lo_y = std::min(lo_y, v);
        hi_y = std::max(hi_y, v);
      }
    BoxAnnotation2D moved = box;
    moved.x1 = std::clamp(lo_x, 0.0, static_cast<double>(out_w));
    moved.x2 = std::clamp(hi_x, 0.0, static_cast<double>(out_w));
    moved.y1 = std::clamp(lo_y, 0.0, static_cast<double>(out_h));
    moved.y2 = std::clamp(hi_y, 0.0, static_cast<double>(out_h));
    if (moved.x2 - moved.x1 < 1.0 || moved.y2 - moved.y1 < 1.0) continue;
    out.push_back(moved);
  }
  return out;
}

SparseDepthMap warp_depth(const SparseDepthMap& src, const Affine2& t, int out_w, int out_h,
                          double depth_factor) {
  const int scale = src.scale;
  SparseDepthMap out((out_h + scale - 1) / scale, (out_w + scale - 1) / scale, scale);
  for (int r = 0; r < src.rows(); ++r)
    for (int c = 0; c < src.cols(); ++c) {
      if (!src.is_valid(r, c)) continue;
      auto [u, v] = t.apply((c + 0.5) * scale, (r + 0.5) * scale);
      const int nr = static_cast<int>(std::floor(v / scale));
      const int nc = static_cast<int>(std::floor(u / scale));
      if (u < 0 || v < 0 || u >= out_w || v >= out_h || !out.values.contains(nr, nc)) continue;
      const double z = src.depth(r, c) * depth_factor;
      if (!out.is_valid(nr, nc) || z < out.depth(nr, nc)) {
        out.values.at(nr, nc) = z;
        out.valid.at(nr, nc) = 1;
      }
    }
  return out;
}

void jitter_colors(Image& image, double brightness, double contrast, double saturation) {
  if (brightness == 0.0 && contrast == 0.0 && saturation == 0.0) return;
  double mean = 0.0;
  for (float v : image.pixels.data()) mean += v;
  mean /= static_cast<double>(std::max<std::size_t>(1, image.pixels.size()));
  for (int r = 0; r < image.height(); ++r)
    for (int x = 0; x < image.width(); ++x) {
      double rgb[3];
      for (int c = 0; c < 3; ++c) {
        double v = image(c, r, x) * (1.0 + brightness);
        rgb[c] = (v - mean) * (1.0 + contrast) + mean;
      }
      const double gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
      for (int c = 0; c < 3; ++c)
        image(c, r, x) = static_cast<float>(std::clamp(gray + (rgb[c] - gray) * (1.0 + saturation), 0.0, 1.0));
    }
}

}  // namespace

AugmentedPair augment(const Frame& current, const Frame& previous, const SparseDepthMap& depth_gt,
                      const AugmentationConfig& config) {
  config.validate();
  const int w = current.image.width();
  const int h = current.image.height();
  if (previous.image.width() != w || previous.image.height() != h)
    throw ContractError("frame pair images differ in size");
  const int out_w = config.crop_width > 0 ? config.crop_width : w;
  const int out_h = config.crop_height > 0 ? config.crop_height : h;
  if (out_w > w || out_h > h) throw ConfigError("crop size exceeds image size");

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto symmetric = [&](double limit) { return limit > 0.0 ? (2.0 * unit(rng) - 1.0) * limit : 0.0; };

  const bool flip = config.flip_probability > 0.0 && unit(rng) < config.flip_probability;
  const double scale = config.scale_min == config.scale_max
                           ? config.scale_min
                           : config.scale_min + (config.scale_max - config.scale_min) * unit(rng);
  const double angle = symmetric(config.max_rotation_deg) * std::numbers::pi / 180.0;
  const double shift_x = symmetric(config.max_translation_px);
  const double shift_y = symmetric(config.max_translation_px);
  const int crop_x = out_w < w ? static_cast<int>(unit(rng) * (w - out_w + 1)) : 0;
  const int crop_y = out_h < h ? static_cast<int>(unit(rng) * (h - out_h + 1)) : 0;
  const double brightness = symmetric(config.color_jitter.brightness);
  const double contrast = symmetric(config.color_jitter.contrast);
  const double saturation = symmetric(config.color_jitter.saturation);

  Affine2 t;
  if (flip) t = t.then({-1, 0, static_cast<double>(w), 0, 1, 0});
  if (scale != 1.0 || angle != 0.0) {
    const double cx = 0.5 * w, cy = 0.5 * h;
    const double cs = std::cos(angle) * scale, sn = std::sin(angle) * scale;
    t = t.then({1, 0, -cx, 0, 1, -cy}).then({cs, -sn, 0, sn, cs, 0}).then({1, 0, cx, 0, 1, cy});
  }
  t = t.then({1, 0, shift_x - crop_x, 0, 1, shift_y - crop_y});

  AugmentedPair out;
  out.resize_ratio = scale;
  for (auto [src, dst] : {std::pair{&current, &out.current}, std::pair{&previous, &out.previous}}) {
    *dst = *src;
    dst->image = warp_image(src->image, t, out_w, out_h);
    jitter_colors(dst->image, brightness, contrast, saturation);
    dst->annotations = warp_boxes(src->annotations, t, out_w, out_h);
    dst->cloud.reset();
    dst->calib.image_width = out_w;
    dst->calib.image_height = out_h;
  }
  const double depth_factor = config.scale_depth_with_resize ? 1.0 / scale : 1.0;
  out.depth = (t.is_identity() && out_w == w && out_h == h && depth_factor == 1.0)
                  ? depth_gt
                  : warp_depth(depth_gt, t, out_w, out_h, depth_factor);
  return out;
}

}  // namespace bevtrack
