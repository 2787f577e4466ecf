#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "halo/core_data.hpp"
#include "halo/error.hpp"
#include "test_util.hpp"

using namespace halo;
using halo::testing::TempDir;

namespace {

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

void touch_image(const std::filesystem::path& root, const std::string& name) {
  std::filesystem::create_directories(root / "images");
  save_png(RgbImage(4, 3), root / "images" / name);
}

std::string record(const std::string& filename) {
  return R"({"filename":")" + filename + R"(","width":4,"height":3,"caption":"c","wiki_categories":["a","b"]})";
}

}  // namespace

TEST(LoadScene, ReadsValidRecords) {
  TempDir dir;
  for (auto n : {"a.png", "b.png", "c.png"}) touch_image(dir.path(), n);
  write_lines(dir.path() / "manifest.jsonl", {record("a.png"), record("b.png"), record("c.png")});
  const auto scene = load_scene(dir.path());
  ASSERT_EQ(scene.images.size(), 3u);
  EXPECT_EQ(scene.images[1].id, "b.png");
  EXPECT_EQ(scene.images[1].metadata.wiki_categories, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(scene.building_kind, BuildingKind::kOther);
  EXPECT_EQ(scene, load_scene(dir.path()));
}

TEST(LoadScene, DuplicateFilenameKeepsFirst) {
  TempDir dir;
  touch_image(dir.path(), "a.jpg");
  write_lines(dir.path() / "manifest.jsonl",
              {R"({"filename":"a.jpg","image":"images/a.jpg","width":4,"height":3,"caption":"first"})",
               R"({"filename":"a.jpg","image":"images/a.jpg","width":4,"height":3,"caption":"second"})"});
  const auto scene = load_scene(dir.path());
  ASSERT_EQ(scene.images.size(), 1u);
  EXPECT_EQ(scene.images[0].metadata.caption, "first");
  EXPECT_EQ(scene.duplicates_dropped, 1u);
}

TEST(LoadScene, MissingImageNamesFile) {
  TempDir dir;
  write_lines(dir.path() / "manifest.jsonl", {record("x.jpg")});
  try {
    load_scene(dir.path());
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("x.jpg"), std::string::npos);
  }
}

TEST(LoadScene, MalformedLineReportsLineNumber) {
  TempDir dir;
  touch_image(dir.path(), "a.png");
  write_lines(dir.path() / "manifest.jsonl", {record("a.png"), "{not json"});
  try {
    load_scene(dir.path());
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(LoadScene, MissingManifest) {
  TempDir dir;
  EXPECT_THROW(load_scene(dir.path()), IoError);
}

TEST(LoadScene, RoundTripWithCameraAndSceneJson) {
  TempDir dir;
  touch_image(dir.path(), "a.png");
  SceneManifest m;
  m.root = dir.path();
  m.landmark_name = "toy";
  m.building_kind = BuildingKind::kMosque;
  ImageRecord r;
  r.id = r.metadata.filename = "a.png";
  r.width = 4;
  r.height = 3;
  r.pixel_ref = "images/a.png";
  Camera cam;
  cam.intrinsics << 10, 0, 2, 0, 10, 1.5, 0, 0, 1;
  cam.pose.leftCols<3>().setIdentity();
  cam.pose.col(3) << 0.5, -1, 2;
  r.camera = cam;
  m.images.push_back(r);
  write_scene(m, dir.path());
  const auto back = load_scene(dir.path());
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.building_prompt(), "mosque");
}

TEST(ProbMapCodec, ZeroMapRoundTrips) {
  ProbMap m(5, 4);
  EXPECT_EQ(decode_probmap(encode_probmap(m)), m);
}

TEST(ProbMapCodec, HalfQuantizesTo128) {
  ProbMap m(1, 1, 0.5);
  const auto back = decode_probmap(encode_probmap(m));
  EXPECT_DOUBLE_EQ(back.at(0, 0), 128.0 / 255.0);
}

TEST(ProbMapCodec, RoundTripErrorBound) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = halo::testing::random_map(16, 16, rng);
    const auto back = decode_probmap(encode_probmap(m));
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_LE(std::abs(back.values()[i] - m.values()[i]), 1.0 / 510 + 1e-15);
  }
}

TEST(ProbMapCodec, RejectsRgbPng) {
  const auto bytes = encode_png_rgb(RgbImage(3, 3));
  EXPECT_THROW(decode_probmap(bytes), IoError);
}

TEST(ProbMap, RejectsOutOfRange) {
  EXPECT_THROW(ProbMap(1, 1, std::vector<double>{1.5}), InvalidArgument);
}

TEST(Binarize, ThresholdBoundary) {
  ProbMap m(3, 1, std::vector<double>{0.19, 0.20, 0.0});
  const auto b = binarize(m, 0.2);
  EXPECT_FALSE(b.at(0, 0));
  EXPECT_TRUE(b.at(1, 0));
  EXPECT_FALSE(b.at(2, 0));
  EXPECT_DOUBLE_EQ(b.threshold(), 0.2);
}

TEST(Binarize, RejectsThresholdOutsideOpenInterval) {
  ProbMap m(1, 1);
  EXPECT_THROW(binarize(m, 0.0), InvalidArgument);
  EXPECT_THROW(binarize(m, 1.0), InvalidArgument);
}

TEST(Binarize, MonotoneInThreshold) {
  std::mt19937_64 rng(11);
  const auto m = halo::testing::random_map(20, 20, rng);
  for (double t1 = 0.05; t1 < 0.95; t1 += 0.1) {
    const auto lo = binarize(m, t1);
    const auto hi = binarize(m, t1 + 0.05);
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_TRUE(!hi[i] || lo[i]);
  }
}

TEST(Mask, SaveLoadRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(5);
  const auto b = binarize(halo::testing::random_map(7, 9, rng), 0.5);
  save_mask(b, dir.path() / "m.png");
  const auto back = load_mask(dir.path() / "m.png");
  EXPECT_EQ(iou(back, b), 1.0);
}

TEST(Camera, ProjectInvertsRay) {
  Camera cam;
  cam.intrinsics << 50, 0, 32, 0, 50, 32, 0, 0, 1;
  cam.pose.leftCols<3>().setIdentity();
  cam.pose.col(3) << 0, 0, -3;
  const Eigen::Vector3d d = cam.ray_direction(10.5, 40.5);
  const Eigen::Vector3d p = cam.center() + 2.7 * d;
  const auto px = cam.project(p);
  ASSERT_TRUE(px);
  EXPECT_NEAR(px->x(), 10.5, 1e-9);
  EXPECT_NEAR(px->y(), 40.5, 1e-9);
  EXPECT_NEAR(d.norm(), 1.0, 1e-12);
  EXPECT_FALSE(cam.project(cam.center() - d));
}
