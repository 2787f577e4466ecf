#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "halo/error.hpp"
#include "halo/geometry.hpp"
#include "test_util.hpp"

using namespace halo;

namespace {

Eigen::Matrix3d planted_homography(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> small(-0.08, 0.08);
  Eigen::Matrix3d h;
  h << 0.8 + small(rng), small(rng), 0.1 + small(rng),  //
      small(rng), 0.8 + small(rng), 0.1 + small(rng),    //
      small(rng), small(rng), 1.0;
  return h;
}

std::vector<KeypointPair> planted_pairs(const Eigen::Matrix3d& h, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<KeypointPair> pairs;
  for (int i = 0; i < n; ++i) {
    const Point2 p(u(rng), u(rng));
    pairs.push_back({p, apply_homography(h, p)});
  }
  return pairs;
}

// Union of a few random ellipses, soft-edged.
ProbMap smooth_mask(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(0.25, 0.75), r(0.08, 0.2);
  ProbMap m(w, h);
  for (int k = 0; k < 3; ++k) {
    const double cx = c(rng), cy = c(rng), rx = r(rng), ry = r(rng);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dx = ((x + 0.5) / w - cx) / rx;
        const double dy = ((y + 0.5) / h - cy) / ry;
        const double v = 1.0 / (1.0 + std::exp(20.0 * (dx * dx + dy * dy - 1.0)));
        m.at(x, y) = std::max(m.at(x, y), v);
      }
    }
  }
  return m;
}

}  // namespace

TEST(Dispersion, Examples) {
  const std::vector<Point2> same(5, Point2(0.3, 0.3));
  EXPECT_EQ(dispersion(same), 0.0);
  const std::vector<Point2> corners{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  EXPECT_DOUBLE_EQ(dispersion(corners), 0.5);
  EXPECT_THROW(dispersion(std::vector<Point2>{}), InvalidArgument);
}

TEST(Dispersion, ScalesQuadratically) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Point2> pts(2 + trial % 30);
    for (auto& p : pts) p = Point2(u(rng), u(rng));
    Point2 centroid = Point2::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    const double s = 0.25 + 2.0 * u(rng);
    std::vector<Point2> scaled;
    for (const auto& p : pts) scaled.push_back(centroid + s * (p - centroid));
    const double d = dispersion(pts);
    EXPECT_NEAR(dispersion(scaled), s * s * d, 1e-12);
    EXPECT_GE(d, 0.0);
  }
}

TEST(RobustMatch, RecoversPlantedHomographyNoiseFree) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const auto h = planted_homography(rng);
    const auto result = estimate_match(planted_pairs(h, 200, rng));
    ASSERT_TRUE(result);
    EXPECT_EQ(result->inlier_count, 200);
    const Eigen::Matrix3d got = normalize_homography(result->homography);
    EXPECT_LE((got - h).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(got(2, 2), 1.0);
  }
}

TEST(RobustMatch, SevenPairsRejected) {
  std::mt19937_64 rng(3);
  EXPECT_FALSE(estimate_match(planted_pairs(planted_homography(rng), 7, rng)));
}

TEST(RobustMatch, OutliersMostlyRejected) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto h = planted_homography(rng);
    auto pairs = planted_pairs(h, 100, rng);
    for (int i = 0; i < 50; ++i) pairs.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const auto result = estimate_match(pairs);
    ASSERT_TRUE(result);
    EXPECT_GE(result->inlier_count, 95);
    EXPECT_LE(result->inlier_count, 105);
    EXPECT_LE((normalize_homography(result->homography) - h).cwiseAbs().maxCoeff(), 1e-3);
    int flagged = 0;
    for (bool f : result->inlier_flags) flagged += f ? 1 : 0;
    EXPECT_EQ(flagged, result->inlier_count);
  }
}

TEST(RobustMatch, CollinearRejected) {
  std::vector<KeypointPair> pairs;
  for (int i = 0; i < 20; ++i) {
    const double t = i / 20.0;
    pairs.push_back({{t, 0.5 * t}, {t + 0.1, 0.5 * t}});
  }
  EXPECT_FALSE(estimate_match(pairs));
}

TEST(WarpMask, IdentityKeepsMap) {
  std::mt19937_64 rng(2);
  const auto m = halo::testing::random_map(23, 17, rng);
  const auto w = warp_mask(m, Eigen::Matrix3d::Identity(), 23, 17);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_NEAR(w.values.values()[i], m.values()[i], 1e-12);
    EXPECT_TRUE(w.valid[i]);
  }
  EXPECT_NEAR(w.quad[2].x(), 1.0, 1e-15);
  EXPECT_NEAR(w.quad[0].y(), 0.0, 1e-15);
}

TEST(WarpMask, TranslationShiftsMap) {
  std::mt19937_64 rng(4);
  const auto m = halo::testing::random_map(50, 10, rng);
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h(0, 2) = 0.1;
  const auto w = warp_mask(m, h, 50, 10);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 5; ++x) {
      EXPECT_FALSE(w.valid.at(x, y));
      EXPECT_EQ(w.values.at(x, y), 0.0);
    }
    for (int x = 5; x < 50; ++x) {
      EXPECT_TRUE(w.valid.at(x, y));
      EXPECT_NEAR(w.values.at(x, y), m.at(x - 5, y), 1e-9);
    }
  }
}

TEST(WarpMask, RoundTripIoU) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = smooth_mask(128, 128, rng);
    const auto h = planted_homography(rng);
    const auto fwd = warp_mask(m, h, 128, 128);
    const auto back = warp_mask(fwd.values, h.inverse(), 128, 128);
    BinaryMask a(128, 128), b(128, 128);
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 128; ++x) {
        if (!back.valid.at(x, y)) continue;
        a.set(x, y, m.at(x, y) >= 0.5);
        b.set(x, y, back.values.at(x, y) >= 0.5);
      }
    }
    EXPECT_GE(iou(a, b), 0.99);
  }
}

TEST(WarpMask, NeverDefinesPixelsOutsideQuadAndKeepsRange) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = halo::testing::random_map(20, 20, rng);
    const auto h = planted_homography(rng);
    const auto w = warp_mask(m, h, 40, 30);
    for (int y = 0; y < 30; ++y) {
      for (int x = 0; x < 40; ++x) {
        const double v = w.values.at(x, y);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        if (w.valid.at(x, y)) {
          const Point2 c((x + 0.5) / 40, (y + 0.5) / 30);
          EXPECT_TRUE(point_in_polygon(c, w.quad));
        }
      }
    }
  }
}

TEST(WarpMask, NonInvertibleThrows) {
  ProbMap m(4, 4);
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  h(0, 0) = 1;
  EXPECT_THROW(warp_mask(m, h, 4, 4), InvalidArgument);
}

TEST(ConditionNumber, Examples) {
  EXPECT_NEAR(*column_condition_number(Eigen::Matrix3d::Identity()), 1.0, 1e-12);
  Eigen::Matrix3d d = Eigen::Vector3d(10, 1, 1).asDiagonal();
  EXPECT_NEAR(*column_condition_number(d), 10.0, 1e-9);
  Eigen::Matrix3d dep;
  dep << 1, 2, 0, 2, 4, 0, 0, 0, 1;
  EXPECT_FALSE(column_condition_number(dep));
}

TEST(PointInPolygon, Square) {
  const Quad q{Point2(0, 0), Point2(0.5, 0), Point2(0.5, 1), Point2(0, 1)};
  EXPECT_TRUE(point_in_polygon({0.25, 0.5}, q));
  EXPECT_FALSE(point_in_polygon({0.75, 0.5}, q));
}
