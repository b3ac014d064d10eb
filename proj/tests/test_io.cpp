// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "nff/io/images.hpp"
#include "nff/io/scene_json.hpp"
#include "nff/io/uvgx.hpp"

using namespace nff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nff_io_" + std::to_string(::getpid())) / name;
  fs::create_directories(p.parent_path());
  return p;
}

}  // namespace

TEST(Uvgx, RoundTrip) {
  std::mt19937_64 rng(1);
  SemanticVoxelGrid g({5, 3, 7}, 4, Vec3(-1.5, 0.25, 2), Vec3(0.5, 1, 0.25));
  for (auto& l : g.labels) l = static_cast<std::uint8_t>(rng() % 4);
  std::stringstream ss;
  write_uvgx(ss, g);
  EXPECT_EQ(read_uvgx(ss), g);
}

TEST(Uvgx, RejectsCorruptInput) {
  SemanticVoxelGrid g({4, 4, 4}, 3, Vec3::Zero(), Vec3::Ones());
  std::stringstream ss;
  write_uvgx(ss, g);
  const std::string bytes = ss.str();
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    std::stringstream t(bytes.substr(0, cut));
    EXPECT_THROW(read_uvgx(t), DataError) << cut;
  }
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream b(bad);
  EXPECT_THROW(read_uvgx(b), DataError);
  EXPECT_THROW(load_uvgx("/nonexistent/grid.uvgx"), DataError);
}

TEST(SceneJson, RoundTripWithTombstones) {
  auto s = test::tiny_scene(4);
  ObjectBox extra;
  extra.translation = Vec3(2, 2, 1);
  extra.latent_seed = 77;
  const auto k = s.layout.insert(extra);
  s.layout.insert(ObjectBox{});
  s.layout.remove(k);
  s.grid_path = "grid.uvgx";
  const auto dir = scratch("scene");
  save_uvgx((dir.parent_path() / "grid.uvgx").string(), s.grid);
  save_scene_json(dir.string() + ".json", s);
  auto r = load_scene(dir.string() + ".json");
  EXPECT_EQ(r.grid, s.grid);
  EXPECT_EQ(r.layout, s.layout);
  EXPECT_EQ(r.world_seed, s.world_seed);
  EXPECT_EQ(dump_json(scene_to_json(r)), dump_json(scene_to_json(s)));
}

TEST(SceneJson, RejectsBadFields) {
  auto j = scene_to_json(test::tiny_scene());
  auto missing = j;
  missing.erase("camera");
  EXPECT_THROW(scene_from_json(missing), std::exception);
  auto extra = j;
  extra["arch"]["bogus"] = 1;
  EXPECT_THROW(scene_from_json(extra), DataError);
  auto bad_size = j;
  bad_size["objects"][0]["size"] = json::array({1, -1, 1});
  EXPECT_THROW(scene_from_json(bad_size), DataError);
}

TEST(Ppm, RoundTripAndRounding) {
  EXPECT_EQ(to_byte(0.0), 0);
  EXPECT_EQ(to_byte(1.0), 255);
  EXPECT_EQ(to_byte(-3.0), 0);
  EXPECT_EQ(to_byte(0.5), 128);
  Tensor<double> img({3, 2, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i * 13 % 256) / 255.0;
  std::stringstream ss;
  write_ppm(ss, img);
  EXPECT_EQ(ss.str().substr(0, 11), "P6\n3 2\n255\n");
  auto back = read_ppm(ss);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 1e-12);
  std::stringstream trunc(ss.str().substr(0, 14));
  EXPECT_THROW(read_ppm(trunc), DataError);
}

TEST(Nfim, RoundTrip) {
  Tensor<double> rows({6, 2});
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = 0.125 * static_cast<double>(i);
  const auto p = scratch("feat.nfim").string();
  save_nfim(p, rows, 2, 3);
  auto t = load_nfim(p);
  EXPECT_EQ(t.shape, (Shape{2, 3, 2}));
  EXPECT_EQ(t.data, rows.data);
  {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write("NFIM\2\0\0\0", 8);
  }
  EXPECT_THROW(load_nfim(p), DataError);
}
