#pragma once

#include <algorithm>
#include <cmath>

#include "geoedit/silhouette.hpp"

namespace geoedit::detail {

// Calls fn(row, col, l0, l1, l2) for every pixel whose center lies inside
// the 2-D triangle (a, b, c), edges inclusive; l* are barycentric weights.
// Zero-area triangles cover nothing.
template <typename Fn>
void for_each_covered_pixel(const Vec2& a, const Vec2& b, const Vec2& c,
                            int height, int width, Fn&& fn) {
  const double area2 = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
  if (area2 == 0.0 || !std::isfinite(area2)) return;
  const double min_x = std::min({a.x(), b.x(), c.x()});
  const double max_x = std::max({a.x(), b.x(), c.x()});
  const double min_y = std::min({a.y(), b.y(), c.y()});
  const double max_y = std::max({a.y(), b.y(), c.y()});

  const auto clamp_idx = [](double v, int n) {
    return static_cast<int>(std::clamp(v, -1.0, static_cast<double>(n)));
  };
  const int c_lo = std::max(0, clamp_idx(std::ceil((min_x + 1.0) * width / 2.0 - 0.5), width));
  const int c_hi = std::min(width - 1, clamp_idx(std::floor((max_x + 1.0) * width / 2.0 - 0.5), width));
  const int r_lo = std::max(0, clamp_idx(std::ceil((1.0 - max_y) * height / 2.0 - 0.5), height));
  const int r_hi = std::min(height - 1, clamp_idx(std::floor((1.0 - min_y) * height / 2.0 - 0.5), height));
  const double sign = area2 > 0.0 ? 1.0 : -1.0;
  const double inv = 1.0 / area2;

  for (int r = r_lo; r <= r_hi; ++r) {
    const double py = pixel_center_ndc_y(r, height);
    for (int col = c_lo; col <= c_hi; ++col) {
      const double px = pixel_center_ndc_x(col, width);
      const double e0 = (c.x() - b.x()) * (py - b.y()) - (c.y() - b.y()) * (px - b.x());
      const double e1 = (a.x() - c.x()) * (py - c.y()) - (a.y() - c.y()) * (px - c.x());
      const double e2 = (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
      if (sign * e0 >= 0.0 && sign * e1 >= 0.0 && sign * e2 >= 0.0)
        fn(r, col, e0 * inv, e1 * inv, e2 * inv);
    }
  }
}

}  // namespace geoedit::detail
