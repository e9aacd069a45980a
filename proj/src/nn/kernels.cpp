#include "bevtrack/nn/kernels.hpp"

#include <algorithm>

namespace bevtrack::nn::kernels {

namespace {

// Output columns [lo, hi] whose input column ox*stride + offset is in range.
inline void valid_cols(int offset, int stride, int in_cols, int out_cols, int& lo, int& hi) {
  // ox*stride + offset >= 0
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  // ox*stride + offset <= in_cols - 1
  const int top = in_cols - 1 - offset;
  hi = top < 0 ? -1 : std::min(out_cols - 1, top / stride);
}

}  // namespace

void conv2d_forward(const ConvShape& s, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const int out_rows = s.out_rows();
  const int out_cols = s.out_cols();
  const int k = s.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(s.in_rows) * s.in_cols;
  const std::size_t out_plane = static_cast<std::size_t>(out_rows) * out_cols;
  const double* in = input.data();
  const double* w = weight.data();
  double* out = output.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < s.out_channels; ++oc) {
    for (int oy = 0; oy < out_rows; ++oy) {
      double* row = out + oc * out_plane + static_cast<std::size_t>(oy) * out_cols;
      const double b = bias.empty() ? 0.0 : bias[oc];
      for (int ox = 0; ox < out_cols; ++ox) row[ox] = b;
      for (int ic = 0; ic < s.in_channels; ++ic) {
        const double* w_oc = w + (static_cast<std::size_t>(oc) * s.in_channels + ic) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= s.in_rows) continue;
          const double* in_row = in + ic * in_plane + static_cast<std::size_t>(iy) * s.in_cols;
          for (int kx = 0; kx < k; ++kx) {
            const double wv = w_oc[ky * k + kx];
            const int offset = kx * s.dilation - s.pad;
            int lo, hi;
            valid_cols(offset, s.stride, s.in_cols, out_cols, lo, hi);
            if (s.stride == 1) {
              const double* src = in_row + offset;
              for (int ox = lo; ox <= hi; ++ox) row[ox] += wv * src[ox];
            } else {
              for (int ox = lo; ox <= hi; ++ox) row[ox] += wv * in_row[ox * s.stride + offset];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const int out_rows = s.out_rows();
  const int out_cols = s.out_cols();
  const int k = s.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(s.in_rows) * s.in_cols;
  const std::size_t out_plane = static_cast<std::size_t>(out_rows) * out_cols;
  const double* g = grad_output.data();
  const double* w = weight.data();
  double* gin = grad_input.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int ic = 0; ic < s.in_channels; ++ic) {
    for (int iy = 0; iy < s.in_rows; ++iy) {
      double* row = gin + ic * in_plane + static_cast<std::size_t>(iy) * s.in_cols;
      std::fill(row, row + s.in_cols, 0.0);
      for (int oc = 0; oc < s.out_channels; ++oc) {
        const double* w_oc = w + (static_cast<std::size_t>(oc) * s.in_channels + ic) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int num = iy + s.pad - ky * s.dilation;
          if (num < 0 || num % s.stride != 0) continue;
          const int oy = num / s.stride;
          if (oy >= out_rows) continue;
          const double* g_row = g + oc * out_plane + static_cast<std::size_t>(oy) * out_cols;
          for (int kx = 0; kx < k; ++kx) {
            const double wv = w_oc[ky * k + kx];
            const int offset = kx * s.dilation - s.pad;
            int lo, hi;
            valid_cols(offset, s.stride, s.in_cols, out_cols, lo, hi);
            if (s.stride == 1) {
              double* dst = row + offset;
              for (int ox = lo; ox <= hi; ++ox) dst[ox] += wv * g_row[ox];
            } else {
              for (int ox = lo; ox <= hi; ++ox) row[ox * s.stride + offset] += wv * g_row[ox];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvShape& s, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const int out_rows = s.out_rows();
  const int out_cols = s.out_cols();
  const int k = s.kernel;
  const std::size_t in_plane = static_cast<std::size_t>(s.in_rows) * s.in_cols;
  const std::size_t out_plane = static_cast<std::size_t>(out_rows) * out_cols;
  const double* in = input.data();
  const double* g = grad_output.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < s.out_channels; ++oc) {
    for (int ic = 0; ic < s.in_channels; ++ic) {
      const double* g_oc = g + oc * out_plane;
      double* gw = grad_weight.data() + (static_cast<std::size_t>(oc) * s.in_channels + ic) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const int offset = kx * s.dilation - s.pad;
          int lo, hi;
          valid_cols(offset, s.stride, s.in_cols, out_cols, lo, hi);
          double acc = 0.0;
          for (int oy = 0; oy < out_rows; ++oy) {
            const int iy = oy * s.stride - s.pad + ky * s.dilation;
            if (iy < 0 || iy >= s.in_rows) continue;
            const double* in_row = in + ic * in_plane + static_cast<std::size_t>(iy) * s.in_cols;
            const double* g_row = g_oc + static_cast<std::size_t>(oy) * out_cols;
            if (s.stride == 1) {
              const double* src = in_row + offset;
              for (int ox = lo; ox <= hi; ++ox) acc += g_row[ox] * src[ox];
            } else {
              for (int ox = lo; ox <= hi; ++ox) acc += g_row[ox] * in_row[ox * s.stride + offset];
            }
          }
          gw[ky * k + kx] += acc;
        }
      }
      if (ic == 0 && !grad_bias.empty()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) acc += g_oc[i];
        grad_bias[oc] += acc;
      }
    }
  }
}

void relu_forward(std::span<double> values) {
  const long n = static_cast<long>(values.size());
  double* v = values.data();
#pragma omp parallel for simd schedule(static)
  for (long i = 0; i < n; ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
}

void relu_backward(std::span<const double> activation, std::span<double> grad) {
  const long n = static_cast<long>(grad.size());
  const double* a = activation.data();
  double* g = grad.data();
#pragma omp parallel for simd schedule(static)
  for (long i = 0; i < n; ++i) g[i] = a[i] > 0.0 ? g[i] : 0.0;
}

}  // namespace bevtrack::nn::kernels
