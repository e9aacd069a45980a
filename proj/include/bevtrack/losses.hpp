#pragma once

#include "bevtrack/geometry.hpp"
#include "bevtrack/grid.hpp"
#include "bevtrack/targets.hpp"

namespace bevtrack {

struct LossWeights {
  double alpha1 = 1.0;  // objectness
  double alpha2 = 1.0;  // displacement
  double alpha3 = 1.0;  // depth

  void validate() const;
};

// Focusing exponents of the penalty-reduced focal loss.
struct FocalParams {
  double alpha = 2.0;
  double beta = 4.0;

  void validate() const;
};

struct LossBreakdown {
  double objectness = 0.0;
  double displacement = 0.0;
  double depth = 0.0;
  double total = 0.0;
};

// Penalty-reduced focal loss normalised by the number of cells where gt == 1
// (at least 1). `pred` must lie strictly inside (0, 1). When `grad` is given
// it receives dL/dpred.
double focal_loss(const GridD& pred, const GridD& gt, const FocalParams& params, GridD* grad = nullptr);

// Mean over masked cells of the channel-summed absolute error. `channel_weights`
// scales each channel's term (empty = all ones). Zero when nothing is masked.
double masked_l1_loss(const GridD& pred, const GridD& gt, const Mask& mask, GridD* grad = nullptr,
                      std::span<const double> channel_weights = {});

// L1 over the 3-vector (du, dv, dz) at supervised cells; `z_weight` balances
// meters against output cells.
double displacement_loss(const GridD& pred, const TargetMaps& gt, GridD* grad = nullptr,
                         double z_weight = 1.0);

// Mean absolute error over valid depth cells; zero when none are valid.
double depth_loss(const GridD& pred, const SparseDepthMap& gt, GridD* grad = nullptr);

LossBreakdown total_loss(double objectness, double displacement, double depth, const LossWeights& weights);

}  // namespace bevtrack
