// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "nff/error.hpp"
#include "nff/geometry.hpp"
#include "nff/scene/objects.hpp"

namespace nff {

/// Pinhole camera looking down +z of its own frame; +u right, +v down.
/// `rotation` and `position` map camera coordinates to world coordinates.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 2, height = 2;
  Quat rotation = Quat::Identity();
  Vec3 position = Vec3::Zero();

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw DataError("focal lengths must be positive");
    if (width < 2 || height < 2 || width % 2 || height % 2) throw DataError("image size must be even and at least 2");
    if (std::abs(rotation.norm() - 1.0) > 1e-6) throw DataError("camera quaternion is not unit length");
  }

  Mat3 R() const { return rotation.toRotationMatrix(); }

  /// Unit world-space direction through the center of pixel (u, v).
  Vec3 pixel_dir(int u, int v) const {
    const Vec3 d((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0);
    return (R() * d).normalized();
  }

  /// Same pose at half resolution (the feature-map camera).
  Camera half() const {
    Camera c = *this;
    c.fx = fx / 2;
    c.fy = fy / 2;
    c.cx = cx / 2;
    c.cy = cy / 2;
    c.width = width / 2;
    c.height = height / 2;
    return c;
  }

  /// Same pose and field of view at a different (even) resolution.
  Camera resized(int w, int h) const {
    Camera c = *this;
    const double sx = static_cast<double>(w) / width, sy = static_cast<double>(h) / height;
    c.fx = fx * sx;
    c.fy = fy * sy;
    c.cx = cx * sx;
    c.cy = cy * sy;
    c.width = w;
    c.height = h;
    c.validate();
    return c;
  }

  Vec3 to_camera(const Vec3& x_world) const { return R().transpose() * (x_world - position); }
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return empty() ? 0 : static_cast<long>(width()) * height(); }
  PixelRect dilated(int r, int w, int h) const {
    return {std::max(0, x0 - r), std::max(0, y0 - r), std::min(w, x1 + r), std::min(h, y1 + r)};
  }
  bool operator==(const PixelRect&) const = default;
};

/// Pixels whose centers fall inside the projected bounding rectangle of the box,
/// clipped to the image; nullopt when nothing projects into the image.
///
/// Corners in front of the camera are projected directly. When the box crosses
/// the plane z = near, the points where its edges cross that plane are added so
/// the rectangle still covers the visible part of the box.
inline std::optional<PixelRect> project_box(const Camera& cam, const ObjectBox& box, double near = 1e-3) {
  const auto corners = box_corners(box);
  std::array<Vec3, 8> cc;
  for (int i = 0; i < 8; ++i) cc[static_cast<std::size_t>(i)] = cam.to_camera(corners[static_cast<std::size_t>(i)]);
  std::vector<Vec3> pts;
  for (const auto& p : cc)
    if (p.z() > near) pts.push_back(p);
  if (pts.empty()) return std::nullopt;
  if (pts.size() < 8) {
    for (int i = 0; i < 8; ++i)
      for (int a = 0; a < 3; ++a) {
        const int j = i | (1 << a);
        if (j == i) continue;
        const Vec3 &p = cc[static_cast<std::size_t>(i)], &q = cc[static_cast<std::size_t>(j)];
        if ((p.z() > near) == (q.z() > near)) continue;
        const double s = (near - p.z()) / (q.z() - p.z());
        Vec3 m = p + s * (q - p);
        m.z() = near;
        pts.push_back(m);
      }
  }
  double umin = HUGE_VAL, umax = -HUGE_VAL, vmin = HUGE_VAL, vmax = -HUGE_VAL;
  for (const auto& p : pts) {
    const double u = cam.cx + cam.fx * p.x() / p.z();
    const double v = cam.cy + cam.fy * p.y() / p.z();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  auto lo = [](double s, int n) { return static_cast<int>(std::clamp(std::ceil(s - 0.5), 0.0, static_cast<double>(n))); };
  auto hi = [](double s, int n) {
    return static_cast<int>(std::clamp(std::floor(s - 0.5) + 1.0, 0.0, static_cast<double>(n)));
  };
  PixelRect r{lo(umin, cam.width), lo(vmin, cam.height), hi(umax, cam.width), hi(vmax, cam.height)};
  if (r.empty()) return std::nullopt;
  return r;
}

}  // namespace nff
