#pragma once

#include <algorithm>
#include <stdexcept>

#include "bigcolor/tensor.hpp"

namespace bigcolor {

/// Bilinear resize (align-corners = false) of every item.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: target size must be positive");
  Tensor<T> y(x.n(), x.c(), out_h, out_w);
  const double sy = static_cast<double>(x.h()) / out_h, sx = static_cast<double>(x.w()) / out_w;
  for (int i = 0; i < out_h; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, double(x.h() - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, x.h() - 1);
    const double wy = fy - y0;
    for (int j = 0; j < out_w; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, double(x.w() - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, x.w() - 1);
      const double wx = fx - x0;
      for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
          const double v = (1 - wy) * ((1 - wx) * x.at(n, c, y0, x0) + wx * x.at(n, c, y0, x1)) +
                           wy * ((1 - wx) * x.at(n, c, y1, x0) + wx * x.at(n, c, y1, x1));
          y.at(n, c, i, j) = static_cast<T>(v);
        }
    }
  }
  return y;
}

}  // namespace bigcolor
