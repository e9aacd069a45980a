#include "bevtrack/losses.hpp"

#include <cmath>
#include <vector>

#include "bevtrack/error.hpp"

namespace bevtrack {

void LossWeights::validate() const {
  if (alpha1 < 0.0 || alpha2 < 0.0 || alpha3 < 0.0) throw ConfigError("loss weights must be non-negative");
  if (alpha1 == 0.0 && alpha2 == 0.0 && alpha3 == 0.0) throw ConfigError("loss weights cannot all be zero");
}

void FocalParams::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("focal exponents must be positive");
}

double focal_loss(const GridD& pred, const GridD& gt, const FocalParams& params, GridD* grad) {
  if (!pred.same_shape(gt)) throw ContractError("focal_loss: prediction and target shapes differ");
  const auto& p = pred.data();
  const auto& y = gt.data();
  const double a = params.alpha;
  const double b = params.beta;

  std::size_t peaks = 0;
  for (double v : y) peaks += v == 1.0;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, peaks));
  if (grad) *grad = GridD(pred.channels(), pred.rows(), pred.cols(), 0.0);

  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = p[i];
    if (!(q > 0.0 && q < 1.0)) throw DomainError("focal_loss: prediction outside (0, 1)");
    if (y[i] == 1.0) {
      const double w = std::pow(1.0 - q, a);
      sum -= w * std::log(q);
      if (grad)
        grad->data()[i] = norm * (a * std::pow(1.0 - q, a - 1.0) * std::log(q) - w / q);
    } else {
      const double neg = std::pow(1.0 - y[i], b);
      const double pa = std::pow(q, a);
      const double l1q = std::log1p(-q);
      sum -= neg * pa * l1q;
      if (grad)
        grad->data()[i] = -norm * neg * (a * std::pow(q, a - 1.0) * l1q - pa / (1.0 - q));
    }
  }
  return sum * norm;
}

double masked_l1_loss(const GridD& pred, const GridD& gt, const Mask& mask, GridD* grad,
                      std::span<const double> channel_weights) {
  if (!pred.same_shape(gt) || !pred.same_plane(mask))
    throw ContractError("masked_l1_loss: shape mismatch");
  if (!channel_weights.empty() && static_cast<int>(channel_weights.size()) != pred.channels())
    throw ContractError("masked_l1_loss: one weight per channel required");
  if (grad) *grad = GridD(pred.channels(), pred.rows(), pred.cols(), 0.0);

  std::size_t count = 0;
  for (auto m : mask.data()) count += m != 0;
  if (count == 0) return 0.0;
  const double norm = 1.0 / static_cast<double>(count);

  double sum = 0.0;
  for (int c = 0; c < pred.channels(); ++c) {
    const double w = channel_weights.empty() ? 1.0 : channel_weights[c];
    for (int r = 0; r < pred.rows(); ++r)
      for (int x = 0; x < pred.cols(); ++x) {
        if (!mask.at(r, x)) continue;
        const double e = pred(c, r, x) - gt(c, r, x);
        sum += w * std::abs(e);
        if (grad) (*grad)(c, r, x) = norm * w * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0));
      }
  }
  return sum * norm;
}

double displacement_loss(const GridD& pred, const TargetMaps& gt, GridD* grad, double z_weight) {
  if (pred.channels() != 3) throw ContractError("displacement_loss: prediction needs 3 channels");
  const double weights[3] = {1.0, 1.0, z_weight};
  return masked_l1_loss(pred, gt.displacement, gt.displacement_mask, grad, weights);
}

double depth_loss(const GridD& pred, const SparseDepthMap& gt, GridD* grad) {
  if (pred.channels() != 1 || !pred.same_plane(gt.values)) throw ContractError("depth_loss: shape mismatch");
  return masked_l1_loss(pred, gt.values, gt.valid, grad);
}

LossBreakdown total_loss(double objectness, double displacement, double depth, const LossWeights& weights) {
  LossBreakdown out;
  out.objectness = objectness;
  out.displacement = displacement;
  out.depth = depth;
  out.total = weights.alpha1 * objectness + weights.alpha2 * displacement + weights.alpha3 * depth;
  return out;
}

}  // namespace bevtrack
