#pragma once

#include <cstddef>

#include "kronfisher/tensor.hpp"

namespace kronfisher::nn {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t k_h, k_w, stride, padding;
  std::size_t out_h, out_w;

  std::size_t spatial() const { return out_h * out_w; }
  std::size_t patch() const { return channels * k_h * k_w; }
};

inline ConvGeometry conv_geometry(const Shape& input, std::size_t k_h, std::size_t k_w,
                                  std::size_t stride, std::size_t padding) {
  if (input.size() != 4) throw DimensionError("convolution input must be batch x C x H x W");
  if (stride == 0 || k_h == 0 || k_w == 0)
    throw ValidationError("convolution stride and kernel must be positive");
  ConvGeometry g{input[0], input[1], input[2], input[3], k_h, k_w, stride, padding, 0, 0};
  const std::size_t ph = g.height + 2 * padding, pw = g.width + 2 * padding;
  if (k_h > ph || k_w > pw)
    throw DimensionError("kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) +
                         " larger than padded input " + std::to_string(ph) + "x" +
                         std::to_string(pw));
  g.out_h = (ph - k_h) / stride + 1;
  g.out_w = (pw - k_w) / stride + 1;
  return g;
}

// Expansion of receptive fields into columns.
// Result is (C*k_h*k_w) x (batch*out_h*out_w); row index c*k_h*k_w + ky*k_w + kx,
// column index b*|T| + oy*out_w + ox. Padding cells contribute zeros.
inline Tensor im2col(const Tensor& x, std::size_t k_h, std::size_t k_w, std::size_t stride,
                     std::size_t padding) {
  const ConvGeometry g = conv_geometry(x.shape(), k_h, k_w, stride, padding);
  const std::size_t cols = g.batch * g.spatial();
  Tensor out({g.patch(), cols});
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < k_h; ++ky)
      for (std::size_t kx = 0; kx < k_w; ++kx) {
        const std::size_t row = (c * k_h + ky) * k_w + kx;
        double* dst = &out.data()[row * cols];
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* plane = &x.data()[(b * g.channels + c) * g.height * g.width];
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long ix =
                  static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
              double v = 0.0;
              if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                  ix < static_cast<long>(g.width))
                v = plane[iy * g.width + ix];
              dst[b * g.spatial() + oy * g.out_w + ox] = v;
            }
          }
        }
      }
  return out;
}

// Adjoint of im2col: scatters column gradients back onto the input grid.
inline Tensor col2im(const Tensor& cols, const ConvGeometry& g) {
  Tensor x({g.batch, g.channels, g.height, g.width});
  const std::size_t ncols = g.batch * g.spatial();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.k_h; ++ky)
      for (std::size_t kx = 0; kx < g.k_w; ++kx) {
        const std::size_t row = (c * g.k_h + ky) * g.k_w + kx;
        const double* src = &cols.data()[row * ncols];
        for (std::size_t b = 0; b < g.batch; ++b) {
          double* plane = &x.data()[(b * g.channels + c) * g.height * g.width];
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy =
                static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
            if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long ix =
                  static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
              if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
              plane[iy * g.width + ix] += src[b * g.spatial() + oy * g.out_w + ox];
            }
          }
        }
      }
  return x;
}

}  // namespace kronfisher::nn
