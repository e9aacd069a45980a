#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bevtrack/grid.hpp"
#include "bevtrack/image.hpp"
#include "bevtrack/nn/kernels.hpp"
#include "bevtrack/targets.hpp"

namespace bevtrack::nn {

struct ModelConfig {
  int input_width = 1280;
  int input_height = 384;
  int scale = 4;  // R
  int num_classes = 2;
  std::vector<int> channels{8, 16, 32};
  int context_layers = 1;  // extra dilated 3x3 layers after the encoder
  int head_width = 16;
  bool use_prior_channels = true;   // tracklet heatmap channel
  bool prior_track_depth = true;    // per-track depth channel of the prior
  bool prior_depth_input = false;   // previous frame's predicted depth map
  bool use_subpixel_offset = true;
  double init_depth = 20.0;       // meters, depth head bias
  double init_half_extent = 8.0;  // pixels, size head bias

  void validate() const;
  int input_channels() const;
  int output_rows() const { return input_height / scale; }
  int output_cols() const { return input_width / scale; }
  int detection_channels() const { return num_classes + 7; }

  bool operator==(const ModelConfig&) const = default;
};

// Heatmap is clamped this far inside (0, 1).
inline constexpr double kHeatmapClamp = 1e-4;

struct NetworkOutputs {
  GridD heatmap;       // K, (0, 1)
  GridD size;          // 2, half extents in input pixels
  GridD offset;        // 2, output cells
  GridD displacement;  // 3, (du, dv) cells, dz meters
  GridD depth;         // 1, meters, > 0
};

// Gradients of a scalar loss w.r.t. each NetworkOutputs field. Empty grids
// contribute nothing.
using OutputGradients = NetworkOutputs;

struct LayerSpec {
  int in_channels;
  int out_channels;
  int kernel;
  int stride;
  int dilation;
  bool relu;
  std::size_t weight_offset;
  std::size_t bias_offset;

  ConvShape shape(int rows, int cols) const {
    return {in_channels, out_channels, kernel, stride, dilation * (kernel - 1) / 2, dilation, rows, cols};
  }
};

// Cached activations of one forward pass. Index 0 of each branch is that
// branch's input.
struct ForwardTrace {
  std::vector<GridD> trunk;
  std::vector<GridD> detection;
  std::vector<GridD> depth;
  NetworkOutputs outputs;
};

// Stride-R encoder with a dilated context block feeding two heads: a
// detection head (heatmap, size, offset, displacement) and a depth head.
class Network {
 public:
  explicit Network(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::size_t parameter_count() const { return parameter_count_; }
  std::vector<double> initial_parameters(std::uint64_t seed) const;
  const std::vector<LayerSpec>& trunk_layers() const { return trunk_; }

  NetworkOutputs forward(std::span<const double> params, const GridD& input) const;
  ForwardTrace forward_trace(std::span<const double> params, const GridD& input) const;
  // Accumulates dLoss/dparams into `grad_params`.
  void backward(std::span<const double> params, const ForwardTrace& trace, const OutputGradients& grads,
                std::span<double> grad_params) const;

 private:
  void run_branch(std::span<const double> params, const std::vector<LayerSpec>& layers,
                  std::vector<GridD>& acts) const;
  GridD backprop_branch(std::span<const double> params, const std::vector<LayerSpec>& layers,
                        const std::vector<GridD>& acts, GridD grad, std::span<double> grad_params,
                        bool need_input_grad) const;
  NetworkOutputs finish(const GridD& det_raw, const GridD& depth_raw) const;

  ModelConfig config_;
  std::vector<LayerSpec> trunk_;
  std::vector<LayerSpec> detection_;
  std::vector<LayerSpec> depth_;
  std::size_t parameter_count_ = 0;
};

// Pads (bottom/right, zero) an image to the given size.
Image pad_image(const Image& image, int width, int height);

// Stacks the network input: current image, previous image (both shifted to
// [-0.5, 0.5]) and the enabled prior channels, nearest-upsampled by R.
GridD build_input(const ModelConfig& config, const Image& current, const Image& previous,
                  const PriorMaps& priors, const GridD* previous_depth = nullptr);

// Parameters bound to an architecture, for inference.
class Model {
 public:
  Model(ModelConfig config, std::vector<double> params);
  static Model build_toy_backbone(const ModelConfig& config, std::uint64_t seed);

  const Network& network() const { return network_; }
  const ModelConfig& config() const { return network_.config(); }
  std::span<const double> parameters() const { return params_; }

  NetworkOutputs forward(const Image& current, const Image& previous, const PriorMaps& priors,
                         const GridD* previous_depth = nullptr) const;

 private:
  Network network_;
  std::vector<double> params_;
};

}  // namespace bevtrack::nn
