#ifndef SOFTPL_GEOMETRY_HPP
#define SOFTPL_GEOMETRY_HPP

#include <algorithm>
#include <array>
#include <cmath>

namespace softpl {

/// Axis-aligned box in corner form, continuous pixel coordinates.
/// Zero-area boxes are allowed.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }

  bool valid() const noexcept {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// COCO [x, y, w, h] to corner form.
inline BBox from_xywh(double x, double y, double w, double h) noexcept {
  return BBox{x, y, x + w, y + h};
}

inline std::array<double, 4> to_xywh(const BBox& b) noexcept {
  return {b.x_min, b.y_min, b.width(), b.height()};
}

inline double area(const BBox& b) noexcept { return b.width() * b.height(); }

inline double intersection_area(const BBox& a, const BBox& b) noexcept {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union; 0 when the union is empty.
inline double iou(const BBox& a, const BBox& b) noexcept {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Clamps every coordinate into [0, width] x [0, height].
inline BBox clip(const BBox& b, double width, double height) noexcept {
  return BBox{std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height),
              std::clamp(b.x_max, 0.0, width), std::clamp(b.y_max, 0.0, height)};
}

inline bool inside(const BBox& b, double width, double height) noexcept {
  return b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= width && b.y_max <= height;
}

} // namespace softpl

#endif // SOFTPL_GEOMETRY_HPP
