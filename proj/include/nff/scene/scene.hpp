// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nff/generators/arch.hpp"
#include "nff/rng.hpp"
#include "nff/scene/camera.hpp"
#include "nff/scene/objects.hpp"
#include "nff/scene/voxel_grid.hpp"

namespace nff {

/// Stuff prior, object prior, camera and latent seeds. Generator parameters
/// live in a separate ParamStore.
struct Scene {
  SemanticVoxelGrid grid;
  ObjectLayout layout;
  Camera camera;
  std::uint64_t world_seed = 0;
  ArchConfig arch;
  std::string grid_path;  // as referenced by the scene file
};

inline std::vector<double> world_latent(std::uint64_t world_seed, int dim) {
  return latent_code(derive_seed(world_seed, 0x776c64), dim);
}

inline std::vector<double> object_latent(std::uint64_t object_seed, int dim) {
  return latent_code(derive_seed(object_seed, 0x6f626a), dim);
}

/// Seed of the per-ray sample jitter used for ordinary renders of a scene.
inline std::uint64_t render_jitter_seed(std::uint64_t world_seed) { return derive_seed(world_seed, 0x6a6974); }

}  // namespace nff
