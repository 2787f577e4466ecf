#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "halo/error.hpp"
#include "halo/mining.hpp"
#include "test_util.hpp"

using namespace halo;

namespace {

constexpr int kSize = 100;

// I1 is a zoom into I2: H maps I1's frame onto [0.3,0.7]^2 of I2.
Eigen::Matrix3d zoom_h(double scale = 0.4, double offset = 0.3) {
  Eigen::Matrix3d h;
  h << scale, 0, offset, 0, scale, offset, 0, 0, 1;
  return h;
}

MatchResult planted_match(const Eigen::Matrix3d& h, int inliers, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  MatchResult m;
  m.first_id = "in";
  m.second_id = "out";
  for (int i = 0; i < inliers; ++i) {
    const Point2 p(u(rng), u(rng));
    m.keypoints.push_back({p, apply_homography(h, p)});
    m.inlier_flags.push_back(true);
  }
  m.inlier_count = inliers;
  m.homography = h;
  return m;
}

struct Fixture {
  RgbImage in_img{kSize, kSize};
  RgbImage out_img{kSize, kSize};
  ImageRegion in = ImageRegion::whole("in", in_img);
  ImageRegion out = ImageRegion::whole("out", out_img);
  std::map<std::string, double> sims{{"in", 0.25}, {"out", 0.2}};
  ProbMap window = ProbMap(kSize, kSize, 1.0);
  ProbMap facade = ProbMap(kSize, kSize, 1.0);

  FunctionSimOracle sim{[this](const ImageRegion& r, std::string_view) { return sims.at(r.image_id); }};
  FunctionSegOracle seg{[this](const ImageRegion& r, std::string_view text) {
    if (text == "cathedral") return facade;
    return r.image_id == "in" ? window : ProbMap(kSize, kSize);
  }};

  std::optional<ZoomPairSample> run(const MatchResult& m, ZoomCounters* c = nullptr) {
    return accept_zoom_pair(in, out, "window", "cathedral", m, seg, sim, {}, c);
  }
};

}  // namespace

TEST(AcceptZoomPair, PassingPairEmitsSample) {
  Fixture f;
  ZoomCounters c;
  const auto s = f.run(planted_match(zoom_h(), 60), &c);
  ASSERT_TRUE(s);
  EXPECT_EQ(c.accepted, 1u);
  const Quad expected{Point2(0.3, 0.3), Point2(0.7, 0.3), Point2(0.7, 0.7), Point2(0.3, 0.7)};
  for (int k = 0; k < 4; ++k) EXPECT_LE((s->quad[k] - expected[k]).norm() * kSize, 1.0);
  // Target is defined exactly on the projected window.
  EXPECT_TRUE(s->valid.at(50, 50));
  EXPECT_FALSE(s->valid.at(10, 10));
  EXPECT_NEAR(s->target.at(50, 50), 1.0, 1e-12);
  EXPECT_EQ(s->target.at(10, 10), 0.0);
  const auto report = evaluate_zoom_filters(f.in, f.out, "window", "cathedral", planted_match(zoom_h(), 60), f.seg, f.sim);
  EXPECT_TRUE(report.all());
}

TEST(AcceptZoomPair, FortyNineInliersRejected) {
  Fixture f;
  ZoomCounters c;
  EXPECT_FALSE(f.run(planted_match(zoom_h(), 49), &c));
  EXPECT_EQ(c.rejected[0], 1u);
  EXPECT_TRUE(f.run(planted_match(zoom_h(), 50), &c));
}

TEST(AcceptZoomPair, DispersionBoundary) {
  Fixture f;
  ZoomCounters c;
  // Pure scaling s about a point gives log-ratio ln(1/s^2).
  EXPECT_FALSE(f.run(planted_match(zoom_h(std::exp(-0.045), 0.0), 60), &c));
  EXPECT_EQ(c.rejected[1], 1u);
  // Near-full-frame quads need facade mass outside them to pass filter 5.
  f.facade = ProbMap(kSize, kSize);
  for (int y = 0; y < kSize; ++y) f.facade.at(kSize - 1, y) = 1.0;
  EXPECT_TRUE(f.run(planted_match(zoom_h(std::exp(-0.0505), 0.0), 60)));
}

TEST(AcceptZoomPair, SimilarityBoundaries) {
  Fixture f;
  ZoomCounters c;
  f.sims = {{"in", 0.19}, {"out", 0.2}};
  EXPECT_FALSE(f.run(planted_match(zoom_h(), 60), &c));
  f.sims = {{"in", 0.25}, {"out", 0.31}};
  EXPECT_FALSE(f.run(planted_match(zoom_h(), 60), &c));
  f.sims = {{"in", 0.25}, {"out", 0.35}};
  EXPECT_FALSE(f.run(planted_match(zoom_h(), 60), &c));
  EXPECT_EQ(c.rejected[2], 3u);
  f.sims = {{"in", 0.2}, {"out", 0.3}};
  EXPECT_TRUE(f.run(planted_match(zoom_h(), 60), &c));
}

TEST(AcceptZoomPair, RegionInliersBoundary) {
  Fixture f;
  auto m = planted_match(zoom_h(), 60);
  // Window only in a small patch that holds exactly two (then three) inliers.
  auto make_window = [&](int n) {
    f.window = ProbMap(kSize, kSize);
    int placed = 0;
    for (const auto& kp : m.keypoints) {
      if (placed == n) break;
      f.window.at(static_cast<int>(kp.first.x() * kSize), static_cast<int>(kp.first.y() * kSize)) = 0.3;
      ++placed;
    }
  };
  ZoomCounters c;
  make_window(2);
  EXPECT_FALSE(f.run(m, &c));
  EXPECT_EQ(c.rejected[3], 1u);
  make_window(3);
  EXPECT_TRUE(f.run(m));
}

TEST(AcceptZoomPair, FacadeRatioBoundary) {
  Fixture f;
  ZoomCounters c;
  f.facade = ProbMap(kSize, kSize);
  for (int y = 30; y < 70; ++y) {
    for (int x = 0; x < 80; ++x) f.facade.at(x, y) = 1.0;
  }
  // Columns 30..69 are inside the quad: 40 of 80 columns.
  EXPECT_DOUBLE_EQ(facade_area_ratio(f.facade, project_frame(zoom_h())), 0.5);
  EXPECT_FALSE(f.run(planted_match(zoom_h(), 60), &c));
  EXPECT_EQ(c.rejected[4], 1u);
  f.facade = ProbMap(kSize, kSize);
  EXPECT_FALSE(f.run(planted_match(zoom_h(), 60), &c));
  EXPECT_EQ(c.rejected[4], 2u);
}

TEST(FacadeAreaRatio, Examples) {
  const ProbMap ones(10, 10, 1.0);
  const Quad left{Point2(0, 0), Point2(0.5, 0), Point2(0.5, 1), Point2(0, 1)};
  EXPECT_DOUBLE_EQ(facade_area_ratio(ones, left), 0.5);
  ProbMap inside(10, 10);
  inside.at(2, 2) = 0.7;
  inside.at(1, 8) = 0.2;
  EXPECT_DOUBLE_EQ(facade_area_ratio(inside, left), 1.0);
  EXPECT_THROW(facade_area_ratio(ProbMap(10, 10), left), DomainError);
}

TEST(AcceptZoomPair, EmittedSamplesPassRecheck) {
  Fixture f;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> s(0.3, 1.0), o(0.0, 0.5), sim(0.0, 0.5);
  int accepted = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const double scale = s(rng);
    const auto m = planted_match(zoom_h(scale, o(rng) * (1 - scale)), 40 + trial, trial);
    f.sims = {{"in", sim(rng)}, {"out", sim(rng)}};
    const bool got = f.run(m).has_value();
    const auto report = evaluate_zoom_filters(f.in, f.out, "window", "cathedral", m, f.seg, f.sim);
    EXPECT_EQ(got, report.all());
    accepted += got ? 1 : 0;
  }
  EXPECT_GT(accepted, 0);
}

namespace {

struct CropFixture {
  RgbImage img{200, 160};
  ImageRegion region = ImageRegion::whole("img", img);
  double crop_sim = 0.25;
  double image_sim = 0.10;
  double common_sim = 0.2;
  double center = 0.15;
  FunctionSimOracle sim{[this](const ImageRegion& r, std::string_view text) {
    if (r.full_frame()) return image_sim;
    return text == "window" ? crop_sim : common_sim;
  }};
  FunctionSegOracle seg{[this](const ImageRegion& r, std::string_view) {
    ProbMap m(r.rect.width(), r.rect.height(), 0.0);
    m.at(r.rect.width() / 2, r.rect.height() / 2) = center;
    return m;
  }};
  std::vector<std::string> common{"facade", "window", "tower"};

  std::optional<CropSample> run(CropCounters* c = nullptr) {
    std::mt19937_64 rng(1);
    return mine_crop_sample(region, "window", seg, sim, common, rng, {}, c);
  }
};

}  // namespace

TEST(MineCrop, AcceptsWhenAllConditionsHold) {
  CropFixture f;
  const auto s = f.run();
  ASSERT_TRUE(s);
  EXPECT_TRUE(f.img.bounds().contains(s->crop));
  EXPECT_EQ(s->target.width(), s->crop.width());
}

TEST(MineCrop, Rejections) {
  CropFixture f;
  CropCounters c;
  f.crop_sim = 0.19;
  EXPECT_FALSE(f.run(&c));
  f.crop_sim = 0.25;
  f.image_sim = 0.25;
  EXPECT_FALSE(f.run(&c));
  f.image_sim = 0.1;
  f.common_sim = 0.25;
  EXPECT_FALSE(f.run(&c));
  f.common_sim = 0.2;
  f.center = 0.05;
  EXPECT_FALSE(f.run(&c));
  for (std::size_t i = 0; i < kCropConditionCount; ++i) EXPECT_EQ(c.rejected[i], 1u) << i;
}

TEST(SampleCrop, SideAndContainment) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 500; ++i) {
    const auto r = sample_crop(200, 100, rng);
    EXPECT_EQ(r.width(), r.height());
    EXPECT_GE(r.width(), 20);
    EXPECT_LE(r.width(), 60);
    EXPECT_TRUE(Rect(0, 0, 200, 100).contains(r));
  }
}

TEST(TwoCropPick, ArgmaxAndTies) {
  RgbImage img(100, 100);
  const auto region = ImageRegion::whole("a", img);
  int call = 0;
  FunctionSimOracle first_high([&](const ImageRegion&, std::string_view) { return (call++ % 2 == 0) ? 0.3 : 0.1; });
  std::mt19937_64 rng(1), replay(1);
  const auto picked = two_crop_pick(region, "p", first_high, rng);
  EXPECT_EQ(picked, sample_crop(100, 100, replay));

  FunctionSimOracle tie([](const ImageRegion&, std::string_view) { return 0.2; });
  std::mt19937_64 a(5), b(5);
  EXPECT_EQ(two_crop_pick(region, "p", tie, a), sample_crop(100, 100, b));

  std::mt19937_64 r1(77), r2(77);
  EXPECT_EQ(two_crop_pick(region, "p", tie, r1), two_crop_pick(region, "p", tie, r2));
}

TEST(RefineLabel, Rules) {
  EXPECT_EQ(refine_label("windows"), "window");
  EXPECT_EQ(refine_label("2 towers"), "tower");
  EXPECT_EQ(refine_label("north portal"), "portal");
  EXPECT_FALSE(refine_label("mosque"));
  EXPECT_FALSE(refine_label("side view"));
  EXPECT_FALSE(refine_label("Gothic Cathedrals"));
  EXPECT_EQ(refine_label("gothic window"), "gothic window");
  EXPECT_FALSE(refine_label("view"));
  EXPECT_FALSE(refine_label("west"));
  EXPECT_FALSE(refine_label("123"));
}

TEST(MostCommonLabels, FrequencyThenLexicographic) {
  const std::vector<std::string> labels{"b", "a", "c", "b", "a", "d"};
  EXPECT_EQ(most_common_labels(labels, 3), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(CenterMax, CentralWindowOnly) {
  ProbMap m(352, 352);
  m.at(10, 10) = 0.9;
  EXPECT_EQ(center_max(m, 280.0 / 352.0), 0.0);
  m.at(36, 36) = 0.4;
  EXPECT_EQ(center_max(m, 280.0 / 352.0), 0.4);
  m.at(35, 200) = 0.6;
  EXPECT_EQ(center_max(m, 280.0 / 352.0), 0.4);
}
