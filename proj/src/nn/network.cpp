#include "bevtrack/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "bevtrack/error.hpp"

namespace bevtrack::nn {

namespace {

int log2_exact(int v) {
  int n = 0;
  while ((1 << n) < v) ++n;
  return (1 << n) == v ? n : -1;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kExpLimit = 30.0;
constexpr double kPriorDepthNorm = 50.0;

std::string dims(int w, int h) { return std::to_string(w) + "x" + std::to_string(h); }

}  // namespace

void ModelConfig::validate() const {
  if (scale < 1 || log2_exact(scale) < 0) throw ConfigError("scale must be a power of two");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (channels.empty()) throw ConfigError("channels list must not be empty");
  if (static_cast<int>(channels.size()) < log2_exact(scale))
    throw ConfigError("channels list needs one layer per stride-2 step of scale " + std::to_string(scale));
  for (int c : channels)
    if (c < 1) throw ConfigError("channel widths must be positive");
  if (head_width < 1 || context_layers < 0) throw ConfigError("invalid head_width or context_layers");
  if (input_width <= 0 || input_height <= 0 || input_width % scale != 0 || input_height % scale != 0)
    throw ConfigError("input size " + dims(input_width, input_height) + " is not divisible by total stride " +
                      std::to_string(scale));
  if (!(init_depth > 0.0) || !(init_half_extent > 0.0)) throw ConfigError("initial head values must be positive");
}

int ModelConfig::input_channels() const {
  return 6 + (use_prior_channels ? 1 : 0) + (prior_track_depth ? 1 : 0) + (prior_depth_input ? 1 : 0);
}

Network::Network(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::size_t offset = 0;
  auto add = [&offset](std::vector<LayerSpec>& layers, int in, int out, int kernel, int stride, int dilation,
                       bool relu) {
    LayerSpec spec{in, out, kernel, stride, dilation, relu, offset, 0};
    offset += static_cast<std::size_t>(out) * in * kernel * kernel;
    spec.bias_offset = offset;
    offset += out;
    layers.push_back(spec);
  };

  const int downsamples = log2_exact(config_.scale);
  int in = config_.input_channels();
  int dilation = 1;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const bool down = static_cast<int>(i) < downsamples;
    if (!down) dilation *= 2;
    add(trunk_, in, config_.channels[i], 3, down ? 2 : 1, down ? 1 : dilation, true);
    in = config_.channels[i];
  }
  for (int i = 0; i < config_.context_layers; ++i) {
    dilation *= 2;
    add(trunk_, in, in, 3, 1, dilation, true);
  }
  add(detection_, in, config_.head_width, 3, 1, 1, true);
  add(detection_, config_.head_width, config_.detection_channels(), 1, 1, 1, false);
  add(depth_, in, config_.head_width, 3, 1, 1, true);
  add(depth_, config_.head_width, 1, 1, 1, 1, false);
  parameter_count_ = offset;
}

std::vector<double> Network::initial_parameters(std::uint64_t seed) const {
  std::vector<double> params(parameter_count_, 0.0);
  std::mt19937_64 rng(seed);
  auto init = [&](const LayerSpec& l, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    const std::size_t n = static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
    for (std::size_t i = 0; i < n; ++i) params[l.weight_offset + i] = dist(rng);
  };
  auto he = [](const LayerSpec& l) { return std::sqrt(2.0 / (l.in_channels * l.kernel * l.kernel)); };
  for (const auto& l : trunk_) init(l, he(l));
  init(detection_[0], he(detection_[0]));
  init(detection_[1], 0.01);
  init(depth_[0], he(depth_[0]));
  init(depth_[1], 0.01);

  const int k = config_.num_classes;
  const std::size_t det_bias = detection_[1].bias_offset;
  for (int c = 0; c < k; ++c) params[det_bias + c] = -std::log((1.0 - 0.1) / 0.1);
  params[det_bias + k] = params[det_bias + k + 1] = std::log(config_.init_half_extent);
  params[det_bias + k + 2] = params[det_bias + k + 3] = 0.5;
  params[depth_[1].bias_offset] = std::log(config_.init_depth);
  return params;
}

void Network::run_branch(std::span<const double> params, const std::vector<LayerSpec>& layers,
                         std::vector<GridD>& acts) const {
  for (const auto& l : layers) {
    const GridD& x = acts.back();
    const ConvShape shape = l.shape(x.rows(), x.cols());
    GridD y(l.out_channels, shape.out_rows(), shape.out_cols());
    kernels::conv2d_forward(shape, x.data(), params.subspan(l.weight_offset, shape.weight_size()),
                            params.subspan(l.bias_offset, l.out_channels), y.data());
    if (l.relu) kernels::relu_forward(y.data());
    acts.push_back(std::move(y));
  }
}

NetworkOutputs Network::finish(const GridD& det_raw, const GridD& depth_raw) const {
  const int k = config_.num_classes;
  const int rows = det_raw.rows();
  const int cols = det_raw.cols();
  NetworkOutputs out{GridD(k, rows, cols), GridD(2, rows, cols), GridD(2, rows, cols), GridD(3, rows, cols),
                     GridD(1, rows, cols)};
  for (int c = 0; c < k; ++c)
    for (std::size_t i = 0; i < out.heatmap.plane_size(); ++i)
      out.heatmap.plane(c)[i] = std::clamp(sigmoid(det_raw.plane(c)[i]), kHeatmapClamp, 1.0 - kHeatmapClamp);
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < out.size.plane_size(); ++i) {
      out.size.plane(c)[i] = std::exp(std::clamp(det_raw.plane(k + c)[i], -kExpLimit, kExpLimit));
      out.offset.plane(c)[i] = config_.use_subpixel_offset ? det_raw.plane(k + 2 + c)[i] : 0.5;
    }
  for (int c = 0; c < 3; ++c)
    std::copy_n(det_raw.plane(k + 4 + c).begin(), out.displacement.plane_size(), out.displacement.plane(c).begin());
  for (std::size_t i = 0; i < out.depth.size(); ++i)
    out.depth.data()[i] = std::exp(std::clamp(depth_raw.data()[i], -kExpLimit, kExpLimit));
  return out;
}

ForwardTrace Network::forward_trace(std::span<const double> params, const GridD& input) const {
  if (params.size() != parameter_count_) throw ContractError("parameter vector has the wrong length");
  if (input.channels() != config_.input_channels())
    throw ContractError("input tensor: expected " + std::to_string(config_.input_channels()) + " channels, got " +
                        std::to_string(input.channels()));
  if (input.rows() % config_.scale != 0 || input.cols() % config_.scale != 0)
    throw ContractError("input tensor: size " + dims(input.cols(), input.rows()) + " not divisible by " +
                        std::to_string(config_.scale));
  ForwardTrace trace;
  trace.trunk.push_back(input);
  run_branch(params, trunk_, trace.trunk);
  trace.detection.push_back(trace.trunk.back());
  run_branch(params, detection_, trace.detection);
  trace.depth.push_back(trace.trunk.back());
  run_branch(params, depth_, trace.depth);
  trace.outputs = finish(trace.detection.back(), trace.depth.back());
  return trace;
}

NetworkOutputs Network::forward(std::span<const double> params, const GridD& input) const {
  return forward_trace(params, input).outputs;
}

GridD Network::backprop_branch(std::span<const double> params, const std::vector<LayerSpec>& layers,
                               const std::vector<GridD>& acts, GridD grad, std::span<double> grad_params,
                               bool need_input_grad) const {
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = layers[i];
    const GridD& x = acts[i];
    if (l.relu) kernels::relu_backward(acts[i + 1].data(), grad.data());
    const ConvShape shape = l.shape(x.rows(), x.cols());
    kernels::conv2d_backward_params(shape, x.data(), grad.data(),
                                    grad_params.subspan(l.weight_offset, shape.weight_size()),
                                    grad_params.subspan(l.bias_offset, l.out_channels));
    if (i == 0 && !need_input_grad) return {};
    GridD grad_in(x.channels(), x.rows(), x.cols());
    kernels::conv2d_backward_input(shape, grad.data(), params.subspan(l.weight_offset, shape.weight_size()),
                                   grad_in.data());
    grad = std::move(grad_in);
  }
  return grad;
}

void Network::backward(std::span<const double> params, const ForwardTrace& trace, const OutputGradients& grads,
                       std::span<double> grad_params) const {
  if (grad_params.size() != parameter_count_) throw ContractError("gradient vector has the wrong length");
  const int k = config_.num_classes;
  const GridD& det_raw = trace.detection.back();
  const GridD& depth_raw = trace.depth.back();
  const auto& out = trace.outputs;

  GridD g_det(det_raw.channels(), det_raw.rows(), det_raw.cols(), 0.0);
  if (!grads.heatmap.empty())
    for (int c = 0; c < k; ++c)
      for (std::size_t i = 0; i < g_det.plane_size(); ++i) {
        const double p = sigmoid(det_raw.plane(c)[i]);
        if (p > kHeatmapClamp && p < 1.0 - kHeatmapClamp)
          g_det.plane(c)[i] = grads.heatmap.plane(c)[i] * p * (1.0 - p);
      }
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < g_det.plane_size(); ++i) {
      if (!grads.size.empty() && std::abs(det_raw.plane(k + c)[i]) < kExpLimit)
        g_det.plane(k + c)[i] = grads.size.plane(c)[i] * out.size.plane(c)[i];
      if (!grads.offset.empty() && config_.use_subpixel_offset)
        g_det.plane(k + 2 + c)[i] = grads.offset.plane(c)[i];
    }
  if (!grads.displacement.empty())
    for (int c = 0; c < 3; ++c)
      std::copy_n(grads.displacement.plane(c).begin(), g_det.plane_size(), g_det.plane(k + 4 + c).begin());

  GridD g_depth(1, depth_raw.rows(), depth_raw.cols(), 0.0);
  if (!grads.depth.empty())
    for (std::size_t i = 0; i < g_depth.size(); ++i)
      if (std::abs(depth_raw.data()[i]) < kExpLimit) g_depth.data()[i] = grads.depth.data()[i] * out.depth.data()[i];

  GridD g_feat = backprop_branch(params, detection_, trace.detection, std::move(g_det), grad_params, true);
  const GridD g_feat_depth = backprop_branch(params, depth_, trace.depth, std::move(g_depth), grad_params, true);
  for (std::size_t i = 0; i < g_feat.size(); ++i) g_feat.data()[i] += g_feat_depth.data()[i];
  backprop_branch(params, trunk_, trace.trunk, std::move(g_feat), grad_params, false);
}

Image pad_image(const Image& image, int width, int height) {
  if (image.width() == width && image.height() == height) return image;
  if (image.width() > width || image.height() > height)
    throw ContractError("cannot pad " + dims(image.width(), image.height()) + " image to " + dims(width, height));
  Image out(width, height, 0.0f);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < image.height(); ++r)
      for (int x = 0; x < image.width(); ++x) out(c, r, x) = image(c, r, x);
  return out;
}

GridD build_input(const ModelConfig& config, const Image& current, const Image& previous, const PriorMaps& priors,
                  const GridD* previous_depth) {
  const int w = config.input_width;
  const int h = config.input_height;
  if (current.width() != w || current.height() != h)
    throw ContractError("image_t: expected " + dims(w, h) + ", got " + dims(current.width(), current.height()));
  if (previous.width() != w || previous.height() != h)
    throw ContractError("image_prev: expected " + dims(w, h) + ", got " + dims(previous.width(), previous.height()));
  const int rows = config.output_rows();
  const int cols = config.output_cols();
  auto check = [&](const GridD& g, const char* role) {
    if (!g.empty() && (g.rows() != rows || g.cols() != cols))
      throw ContractError(std::string(role) + ": expected " + dims(cols, rows) + ", got " + dims(g.cols(), g.rows()));
  };
  check(priors.heatmap, "prior_maps.heatmap");
  check(priors.depth, "prior_maps.depth");
  if (previous_depth) check(*previous_depth, "previous_depth");

  GridD input(config.input_channels(), h, w, 0.0);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r)
      for (int x = 0; x < w; ++x) {
        input(c, r, x) = current(c, r, x) - 0.5;
        input(3 + c, r, x) = previous(c, r, x) - 0.5;
      }
  int channel = 6;
  auto upsample = [&](const GridD* g, double factor) {
    if (g && !g->empty())
      for (int r = 0; r < h; ++r)
        for (int x = 0; x < w; ++x) input(channel, r, x) = factor * g->at(r / config.scale, x / config.scale);
    ++channel;
  };
  if (config.use_prior_channels) upsample(&priors.heatmap, 1.0);
  if (config.prior_track_depth) upsample(&priors.depth, 1.0 / kPriorDepthNorm);
  if (config.prior_depth_input) upsample(previous_depth, 1.0 / kPriorDepthNorm);
  return input;
}

Model::Model(ModelConfig config, std::vector<double> params) : network_(std::move(config)), params_(std::move(params)) {
  if (params_.size() != network_.parameter_count())
    throw ContractError("parameter vector does not match the architecture");
}

Model Model::build_toy_backbone(const ModelConfig& config, std::uint64_t seed) {
  Network net(config);
  auto params = net.initial_parameters(seed);
  return Model(config, std::move(params));
}

NetworkOutputs Model::forward(const Image& current, const Image& previous, const PriorMaps& priors,
                              const GridD* previous_depth) const {
  return network_.forward(params_, build_input(config(), current, previous, priors, previous_depth));
}

}  // namespace bevtrack::nn
