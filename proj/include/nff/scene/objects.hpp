// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nff/error.hpp"
#include "nff/geometry.hpp"

namespace nff {

/// Oriented box placing an object's canonical cube [-0.5, 0.5]^3 in the world:
/// x_world = R (s * x_obj) + t, so `size` is the full edge length in meters.
struct ObjectBox {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  std::uint64_t latent_seed = 0;

  Mat3 R() const { return rotation.toRotationMatrix(); }

  void validate() const {
    if (std::abs(rotation.norm() - 1.0) > 1e-6) throw DataError("object quaternion is not unit length");
    for (int a = 0; a < 3; ++a) {
      if (!(size[a] > 0) || !std::isfinite(size[a])) throw DataError("object size components must be positive");
      if (!std::isfinite(translation[a])) throw DataError("object position must be finite");
    }
  }

  bool operator==(const ObjectBox& o) const {
    return rotation.coeffs() == o.rotation.coeffs() && translation == o.translation && size == o.size &&
           latent_seed == o.latent_seed;
  }
};

inline Vec3 world_from_object(const Vec3& x_obj, const ObjectBox& b) {
  return b.R() * b.size.cwiseProduct(x_obj) + b.translation;
}

inline Vec3 object_from_world(const Vec3& x_wld, const ObjectBox& b) {
  return (b.R().transpose() * (x_wld - b.translation)).cwiseQuotient(b.size);
}

/// The 8 corners of the box in world space.
inline std::array<Vec3, 8> box_corners(const ObjectBox& b) {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i)
    out[static_cast<std::size_t>(i)] =
        world_from_object(Vec3((i & 1) ? 0.5 : -0.5, (i & 2) ? 0.5 : -0.5, (i & 4) ? 0.5 : -0.5), b);
  return out;
}

/// Ordered object boxes. Removal leaves a tombstone so indices stay stable.
class ObjectLayout {
 public:
  std::size_t insert(ObjectBox b) {
    b.validate();
    slots_.emplace_back(std::move(b));
    return slots_.size() - 1;
  }

  void remove(std::size_t k) {
    check(k);
    slots_[k].reset();
  }

  /// Replaces any of R / t / s of box k.
  void transform(std::size_t k, std::optional<Quat> R, std::optional<Vec3> t, std::optional<Vec3> s) {
    check(k);
    ObjectBox b = *slots_[k];
    if (R) b.rotation = R->normalized();
    if (t) b.translation = *t;
    if (s) b.size = *s;
    b.validate();
    slots_[k] = b;
  }

  void set_seed(std::size_t k, std::uint64_t seed) {
    check(k);
    slots_[k]->latent_seed = seed;
  }

  const ObjectBox& at(std::size_t k) const {
    check(k);
    return *slots_[k];
  }
  bool live(std::size_t k) const { return k < slots_.size() && slots_[k].has_value(); }
  std::size_t slots() const { return slots_.size(); }
  std::size_t live_count() const {
    std::size_t n = 0;
    for (const auto& s : slots_) n += s.has_value();
    return n;
  }

  std::vector<std::pair<std::size_t, ObjectBox>> live_boxes() const {
    std::vector<std::pair<std::size_t, ObjectBox>> out;
    for (std::size_t k = 0; k < slots_.size(); ++k)
      if (slots_[k]) out.emplace_back(k, *slots_[k]);
    return out;
  }

  bool operator==(const ObjectLayout& o) const { return live_boxes() == o.live_boxes(); }

 private:
  void check(std::size_t k) const {
    if (!live(k)) throw DataError("invalid object index " + std::to_string(k));
  }

  std::vector<std::optional<ObjectBox>> slots_;
};

}  // namespace nff
