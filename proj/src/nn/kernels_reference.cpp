#include "bevtrack/nn/kernels.hpp"

namespace bevtrack::nn::reference {

namespace {

struct Index {
  const ConvShape& s;
  std::size_t in(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * s.in_rows + y) * s.in_cols + x;
  }
  std::size_t out(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * s.out_rows() + y) * s.out_cols() + x;
  }
  std::size_t w(int oc, int ic, int ky, int kx) const {
    return ((static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel + ky) * s.kernel + kx;
  }
};

}  // namespace

void conv2d_forward(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const Index idx{s};
  for (int oc = 0; oc < s.out_channels; ++oc)
    for (int oy = 0; oy < s.out_rows(); ++oy)
      for (int ox = 0; ox < s.out_cols(); ++ox) {
        double sum = bias.empty() ? 0.0 : bias[oc];
        for (int ic = 0; ic < s.in_channels; ++ic)
          for (int ky = 0; ky < s.kernel; ++ky)
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int iy = oy * s.stride - s.pad + ky * s.dilation;
              const int ix = ox * s.stride - s.pad + kx * s.dilation;
              if (iy < 0 || iy >= s.in_rows || ix < 0 || ix >= s.in_cols) continue;
              sum += weight[idx.w(oc, ic, ky, kx)] * input[idx.in(ic, iy, ix)];
            }
        output[idx.out(oc, oy, ox)] = sum;
      }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const Index idx{s};
  for (auto& g : grad_input) g = 0.0;
  for (int oc = 0; oc < s.out_channels; ++oc)
    for (int oy = 0; oy < s.out_rows(); ++oy)
      for (int ox = 0; ox < s.out_cols(); ++ox)
        for (int ic = 0; ic < s.in_channels; ++ic)
          for (int ky = 0; ky < s.kernel; ++ky)
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int iy = oy * s.stride - s.pad + ky * s.dilation;
              const int ix = ox * s.stride - s.pad + kx * s.dilation;
              if (iy < 0 || iy >= s.in_rows || ix < 0 || ix >= s.in_cols) continue;
              grad_input[idx.in(ic, iy, ix)] += weight[idx.w(oc, ic, ky, kx)] * grad_output[idx.out(oc, oy, ox)];
            }
}

void conv2d_backward_params(const ConvShape& s, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const Index idx{s};
  for (int oc = 0; oc < s.out_channels; ++oc)
    for (int oy = 0; oy < s.out_rows(); ++oy)
      for (int ox = 0; ox < s.out_cols(); ++ox) {
        const double g = grad_output[idx.out(oc, oy, ox)];
        if (!grad_bias.empty()) grad_bias[oc] += g;
        for (int ic = 0; ic < s.in_channels; ++ic)
          for (int ky = 0; ky < s.kernel; ++ky)
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int iy = oy * s.stride - s.pad + ky * s.dilation;
              const int ix = ox * s.stride - s.pad + kx * s.dilation;
              if (iy < 0 || iy >= s.in_rows || ix < 0 || ix >= s.in_cols) continue;
              grad_weight[idx.w(oc, ic, ky, kx)] += g * input[idx.in(ic, iy, ix)];
            }
      }
}

}  // namespace bevtrack::nn::reference
