#include "bevtrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "bevtrack/error.hpp"
#include "bevtrack/targets.hpp"

namespace bevtrack {

std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const int rows = static_cast<int>(cost.size());
  if (rows == 0) return {};
  const int cols = static_cast<int>(cost[0].size());
  for (const auto& row : cost)
    if (static_cast<int>(row.size()) != cols) throw ContractError("cost matrix rows differ in length");
  const bool transposed = rows > cols;
  const int n = transposed ? cols : rows;
  const int m = transposed ? rows : cols;
  auto at = [&](int i, int j) { return transposed ? cost[j - 1][i - 1] : cost[i - 1][j - 1]; };

  // Potentials formulation with 1-based indices and a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = at(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> out(rows, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    if (transposed)
      out[j - 1] = p[j] - 1;
    else
      out[p[j] - 1] = j - 1;
  }
  return out;
}

double box_iou(const TrackedBox& a, const TrackedBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

namespace {

// Similarity in [0, 1], or nullopt when the pair is not eligible.
std::optional<double> similarity(const TrackedBox& g, const TrackedBox& p, double threshold,
                                 MatchCriterion criterion) {
  if (criterion == MatchCriterion::iou) {
    const double iou = box_iou(g, p);
    if (iou >= threshold && iou > 0) return iou;
    return std::nullopt;
  }
  if (!g.ground || !p.ground) return std::nullopt;
  const double d = std::hypot(g.ground->first - p.ground->first, g.ground->second - p.ground->second);
  if (d <= threshold) return 1.0 - d / threshold;
  return std::nullopt;
}

}  // namespace

FrameMatch match_frame(std::span<const TrackedBox> gt, std::span<const TrackedBox> pred, double threshold,
                       const std::map<int, int>& previous, MatchCriterion criterion) {
  if (!(threshold > 0) || (criterion == MatchCriterion::iou && threshold > 1))
    throw ContractError("match threshold out of range");
  FrameMatch out;
  std::vector<bool> gt_used(gt.size(), false), pred_used(pred.size(), false);

  for (std::size_t g = 0; g < gt.size(); ++g) {
    const auto it = previous.find(gt[g].id);
    if (it == previous.end()) continue;
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (pred_used[p] || pred[p].id != it->second) continue;
      if (const auto s = similarity(gt[g], pred[p], threshold, criterion)) {
        out.matches.push_back({g, p, *s});
        gt_used[g] = pred_used[p] = true;
      }
      break;
    }
  }

  std::vector<std::size_t> gi, pi;
  for (std::size_t g = 0; g < gt.size(); ++g)
    if (!gt_used[g]) gi.push_back(g);
  for (std::size_t p = 0; p < pred.size(); ++p)
    if (!pred_used[p]) pi.push_back(p);
  if (!gi.empty() && !pi.empty()) {
    std::vector<std::vector<std::optional<double>>> sim(gi.size(), std::vector<std::optional<double>>(pi.size()));
    std::vector<std::vector<double>> cost(gi.size(), std::vector<double>(pi.size(), 0.0));
    for (std::size_t a = 0; a < gi.size(); ++a)
      for (std::size_t b = 0; b < pi.size(); ++b) {
        sim[a][b] = similarity(gt[gi[a]], pred[pi[b]], threshold, criterion);
        if (sim[a][b]) cost[a][b] = -*sim[a][b];
      }
    const auto assignment = solve_assignment(cost);
    for (std::size_t a = 0; a < gi.size(); ++a) {
      const int b = assignment[a];
      if (b < 0 || !sim[a][b]) continue;
      out.matches.push_back({gi[a], pi[b], *sim[a][b]});
      gt_used[gi[a]] = pred_used[pi[b]] = true;
    }
  }
  std::sort(out.matches.begin(), out.matches.end(),
            [](const PairMatch& a, const PairMatch& b) { return a.gt < b.gt; });
  for (std::size_t g = 0; g < gt.size(); ++g)
    if (!gt_used[g]) out.misses.push_back(g);
  for (std::size_t p = 0; p < pred.size(); ++p)
    if (!pred_used[p]) out.false_positives.push_back(p);
  return out;
}

MotReport compute_mot(std::span<const TrackedBox> gt, std::span<const TrackedBox> pred, double threshold,
                      MatchCriterion criterion) {
  std::map<int, std::vector<TrackedBox>> gt_frames, pred_frames;
  for (const auto& b : gt) gt_frames[b.frame].push_back(b);
  for (const auto& b : pred) pred_frames[b.frame].push_back(b);
  std::set<int> frames;
  for (const auto& [f, _] : gt_frames) frames.insert(f);
  for (const auto& [f, _] : pred_frames) frames.insert(f);

  struct History {
    long present = 0;
    long matched = 0;
    std::optional<int> last_pred;  // pred id at the last matched frame
    bool was_matched = false;      // matched at its previous presence
  };
  std::map<int, History> history;
  std::map<int, int> previous;  // gt id -> pred id, last frame only
  MotReport r;
  double similarity_sum = 0;
  const std::vector<TrackedBox> none;

  for (int f : frames) {
    const auto git = gt_frames.find(f);
    const auto pit = pred_frames.find(f);
    const auto& g = git == gt_frames.end() ? none : git->second;
    const auto& p = pit == pred_frames.end() ? none : pit->second;
    std::set<int> seen;
    for (const auto& b : g)
      if (!seen.insert(b.id).second)
        throw ValidationError("ground truth id " + std::to_string(b.id) + " appears twice in frame " +
                              std::to_string(f));

    const FrameMatch m = match_frame(g, p, threshold, previous, criterion);
    std::map<int, int> current;
    std::vector<bool> matched(g.size(), false);
    for (const auto& pm : m.matches) {
      matched[pm.gt] = true;
      const int gid = g[pm.gt].id;
      const int pid = p[pm.pred].id;
      current[gid] = pid;
      History& h = history[gid];
      if (h.last_pred && *h.last_pred != pid) ++r.id_switches;
      if (h.matched > 0 && !h.was_matched) ++r.fragmentations;
      h.last_pred = pid;
      similarity_sum += pm.similarity;
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      History& h = history[g[i].id];
      ++h.present;
      if (matched[i]) ++h.matched;
      h.was_matched = matched[i];
    }
    previous = std::move(current);
    r.false_positives += static_cast<long>(m.false_positives.size());
    r.misses += static_cast<long>(m.misses.size());
    r.matches += static_cast<long>(m.matches.size());
    r.ground_truth += static_cast<long>(g.size());
  }
  if (r.ground_truth == 0) throw ValidationError("ground truth contains no boxes");

  r.mota = 1.0 - static_cast<double>(r.false_positives + r.misses + r.id_switches) /
                     static_cast<double>(r.ground_truth);
  r.motp = r.matches > 0 ? similarity_sum / static_cast<double>(r.matches) : 0.0;
  long mt = 0, ml = 0;
  for (const auto& [id, h] : history) {
    const double ratio = static_cast<double>(h.matched) / static_cast<double>(h.present);
    if (ratio >= 0.8) ++mt;
    if (ratio <= 0.2) ++ml;
  }
  r.trajectories = static_cast<long>(history.size());
  r.mostly_tracked = static_cast<double>(mt) / static_cast<double>(r.trajectories);
  r.mostly_lost = static_cast<double>(ml) / static_cast<double>(r.trajectories);
  return r;
}

void DepthAccumulator::add(double p, double g) {
  if (!(p > 0)) throw DomainError("predicted depth must be positive where ground truth is valid");
  const double diff = p - g;
  ++count;
  abs_rel += std::abs(diff) / g;
  sq_rel += diff * diff / g;
  sq += diff * diff;
  const double dl = std::log(p) - std::log(g);
  sq_log += dl * dl;
  const double ratio = std::max(p / g, g / p);
  double bound = 1.25;
  for (int i = 0; i < 3; ++i, bound *= 1.25)
    if (ratio < bound) ++within[i];
}

DepthAccumulator& DepthAccumulator::operator+=(const DepthAccumulator& o) {
  count += o.count;
  abs_rel += o.abs_rel;
  sq_rel += o.sq_rel;
  sq += o.sq;
  sq_log += o.sq_log;
  for (int i = 0; i < 3; ++i) within[i] += o.within[i];
  return *this;
}

DepthReport DepthAccumulator::report(std::string label) const {
  DepthReport r;
  r.region_label = std::move(label);
  r.pixel_count = count;
  if (count == 0) return r;
  const double n = static_cast<double>(count);
  DepthErrors e;
  e.abs_rel = abs_rel / n;
  e.sq_rel = sq_rel / n;
  e.rmse = std::sqrt(sq / n);
  e.rmse_log = std::sqrt(sq_log / n);
  e.delta1 = static_cast<double>(within[0]) / n;
  e.delta2 = static_cast<double>(within[1]) / n;
  e.delta3 = static_cast<double>(within[2]) / n;
  r.errors = e;
  return r;
}

namespace {

void check_depth_shapes(const GridD& pred, const SparseDepthMap& gt, const Mask* region) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ContractError("predicted and ground-truth depth grids differ in shape");
  if (region && (region->rows() != gt.rows() || region->cols() != gt.cols()))
    throw ContractError("region mask differs in shape from the depth grid");
}

bool counted(const SparseDepthMap& gt, const Mask* region, double cap, int r, int c) {
  return gt.is_valid(r, c) && (!region || region->at(r, c)) && gt.depth(r, c) <= cap;
}

}  // namespace

DepthAccumulator accumulate_depth(const GridD& pred, const SparseDepthMap& gt, const Mask* region,
                                  double depth_cap) {
  check_depth_shapes(pred, gt, region);
  const int rows = gt.rows();
  std::vector<DepthAccumulator> partial(static_cast<std::size_t>(rows));
  bool bad = false;
#pragma omp parallel for schedule(static) reduction(|| : bad)
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < gt.cols(); ++c) {
      if (!counted(gt, region, depth_cap, r, c)) continue;
      if (!(pred.at(r, c) > 0)) {
        bad = true;
        continue;
      }
      partial[r].add(pred.at(r, c), gt.depth(r, c));
    }
  }
  if (bad) throw DomainError("predicted depth must be positive where ground truth is valid");
  DepthAccumulator total;
  for (const auto& p : partial) total += p;
  return total;
}

namespace reference {

DepthAccumulator accumulate_depth(const GridD& pred, const SparseDepthMap& gt, const Mask* region,
                                  double depth_cap) {
  check_depth_shapes(pred, gt, region);
  DepthAccumulator total;
  for (int r = 0; r < gt.rows(); ++r)
    for (int c = 0; c < gt.cols(); ++c)
      if (counted(gt, region, depth_cap, r, c)) total.add(pred.at(r, c), gt.depth(r, c));
  return total;
}

}  // namespace reference

DepthReport compute_depth_metrics(const GridD& pred, const SparseDepthMap& gt, const Mask* region, double depth_cap,
                                  std::string label) {
  return accumulate_depth(pred, gt, region, depth_cap).report(std::move(label));
}

std::vector<DepthRange> default_depth_ranges() { return {{0.0, 20.0}, {20.0, 50.0}, {50.0, 80.0}}; }

std::string range_label(const DepthRange& range) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "range_%g_%g", range.first, range.second);
  return buf;
}

std::vector<NamedMask> region_masks(std::span<const BoxAnnotation2D> annotations, const SparseDepthMap& gt_depth,
                                    std::span<const DepthRange> ranges) {
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (!(ranges[i].first < ranges[i].second)) throw ContractError("depth range " + range_label(ranges[i]) + " is empty");
    for (std::size_t j = 0; j < i; ++j)
      if (ranges[i].first < ranges[j].second && ranges[j].first < ranges[i].second)
        throw ContractError("depth ranges " + range_label(ranges[j]) + " and " + range_label(ranges[i]) + " overlap");
  }
  const int rows = gt_depth.rows();
  const int cols = gt_depth.cols();
  const int scale = gt_depth.scale;
  std::vector<NamedMask> out;
  out.push_back({"whole_image", Mask(1, rows, cols, 1)});
  Mask objects(1, rows, cols, 0);
  // Depth of the object that owns each cell; the nearest box wins.
  GridD owner(1, rows, cols, std::numeric_limits<double>::infinity());
  Mask owned(1, rows, cols, 0);
  auto cell = [&](double x) { return static_cast<int>(std::floor(x / scale)); };
  for (const auto& box : annotations) {
    if (box.x2 <= box.x1 || box.y2 <= box.y1) continue;
    const int r0 = std::clamp(cell(box.y1), 0, rows - 1);
    const int r1 = std::clamp(cell(std::nextafter(box.y2, box.y1)), 0, rows - 1);
    const int c0 = std::clamp(cell(box.x1), 0, cols - 1);
    const int c1 = std::clamp(cell(std::nextafter(box.x2, box.x1)), 0, cols - 1);
    const auto depth = object_depth(gt_depth, box);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        objects.at(r, c) = 1;
        if (depth && *depth < owner.at(r, c)) {
          owner.at(r, c) = *depth;
          owned.at(r, c) = 1;
        }
      }
  }
  out.push_back({"object_boxes", objects});
  for (const auto& range : ranges) {
    Mask m(1, rows, cols, 0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (owned.at(r, c) && owner.at(r, c) >= range.first && owner.at(r, c) < range.second) m.at(r, c) = 1;
    out.push_back({range_label(range), std::move(m)});
  }
  return out;
}

nlohmann::json to_json(const MotReport& r) {
  return {{"mota", r.mota},
          {"motp", r.motp},
          {"mt", r.mostly_tracked},
          {"ml", r.mostly_lost},
          {"idsw", r.id_switches},
          {"frag", r.fragmentations},
          {"fp", r.false_positives},
          {"fn", r.misses},
          {"gt", r.ground_truth},
          {"matches", r.matches},
          {"trajectories", r.trajectories}};
}

nlohmann::json to_json(const DepthReport& r) {
  nlohmann::json j = {{"region", r.region_label}, {"pixel_count", r.pixel_count}};
  if (r.errors) {
    const auto& e = *r.errors;
    j["abs_rel"] = e.abs_rel;
    j["sq_rel"] = e.sq_rel;
    j["rmse"] = e.rmse;
    j["rmse_log"] = e.rmse_log;
    j["delta1"] = e.delta1;
    j["delta2"] = e.delta2;
    j["delta3"] = e.delta3;
  }
  return j;
}

namespace {

std::string flatten(const nlohmann::json& j) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [key, value] : j.items()) {
    if (!first) os << ' ';
    first = false;
    os << key << '=';
    if (value.is_string())
      os << value.get<std::string>();
    else
      os << value.dump();
  }
  return os.str();
}

}  // namespace

std::string to_key_value(const MotReport& report) { return flatten(to_json(report)); }
std::string to_key_value(const DepthReport& report) { return flatten(to_json(report)); }

}  // namespace bevtrack
