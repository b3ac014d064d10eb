// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "nff/error.hpp"

namespace nff {

/// Network and sampling hyperparameters. MLP depths count hidden ReLU layers;
/// every MLP ends with one linear output layer.
struct ArchConfig {
  int z_dim = 256;
  int feat_dim = 32;      // M_f
  int grid_channels = 16; // M_v
  int vol_width = 32;     // conv channels inside the feature-grid generator
  int spade_hidden = 32;  // channels of the shared modulation conv
  int z_proj = 16;        // channels of the broadcast z projection
  int pe_bands = 10;
  int sky_bands = 4;
  int stf_depth = 4;
  int stf_hidden = 256;
  int obj_depth = 8;
  int obj_hidden = 128;
  int obj_skip = 4;       // hidden layer that re-reads the input; <= 0 disables
  int sky_depth = 5;
  int sky_hidden = 256;
  int render_width = 64;  // neural renderer channels
  int points_per_voxel = 6;
  int points_per_object = 12;
  int max_voxels = 4;
  double density_shift = 1.0;

  void validate() const {
    auto pos = [](int v, const char* what) {
      if (v <= 0) throw DataError(std::string("arch.") + what + " must be positive");
    };
    pos(z_dim, "z_dim");
    pos(feat_dim, "feat_dim");
    pos(grid_channels, "grid_channels");
    pos(vol_width, "vol_width");
    pos(spade_hidden, "spade_hidden");
    pos(z_proj, "z_proj");
    pos(pe_bands, "pe_bands");
    pos(sky_bands, "sky_bands");
    pos(stf_depth, "stf_depth");
    pos(stf_hidden, "stf_hidden");
    pos(obj_depth, "obj_depth");
    pos(obj_hidden, "obj_hidden");
    pos(sky_depth, "sky_depth");
    pos(sky_hidden, "sky_hidden");
    pos(render_width, "render_width");
    pos(points_per_voxel, "points_per_voxel");
    pos(points_per_object, "points_per_object");
    pos(max_voxels, "max_voxels");
  }

  bool operator==(const ArchConfig&) const = default;
};

}  // namespace nff
