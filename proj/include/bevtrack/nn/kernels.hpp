#pragma once

#include <cstddef>
#include <span>

namespace bevtrack::nn {

// 2D convolution geometry over channel-major (C, H, W) buffers with
// symmetric zero padding.
struct ConvShape {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int dilation = 1;
  int in_rows = 1;
  int in_cols = 1;

  int out_rows() const { return (in_rows + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
  int out_cols() const { return (in_cols + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
  std::size_t input_size() const { return static_cast<std::size_t>(in_channels) * in_rows * in_cols; }
  std::size_t output_size() const { return static_cast<std::size_t>(out_channels) * out_rows() * out_cols(); }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

// OpenMP kernels. Every output element is owned by one thread and summed in
// a fixed order, so results do not depend on the thread count.
namespace kernels {

void conv2d_forward(const ConvShape& shape, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);

// Overwrites grad_input.
void conv2d_backward_input(const ConvShape& shape, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);

// Accumulates into grad_weight and grad_bias.
void conv2d_backward_params(const ConvShape& shape, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);

void relu_forward(std::span<double> values);
// grad *= (activation > 0)
void relu_backward(std::span<const double> activation, std::span<double> grad);

}  // namespace kernels

// Serial textbook loops, kept as the test oracle for `kernels`.
namespace reference {

void conv2d_forward(const ConvShape& shape, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const ConvShape& shape, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
void conv2d_backward_params(const ConvShape& shape, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);

}  // namespace reference

}  // namespace bevtrack::nn
