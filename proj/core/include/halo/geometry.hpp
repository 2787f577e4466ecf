#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "halo/core_data.hpp"

namespace halo {

/// Point in relative image coordinates, (0,0) top-left and (1,1) bottom-right.
using Point2 = Eigen::Vector2d;
/// Corners in order top-left, top-right, bottom-right, bottom-left.
using Quad = std::array<Point2, 4>;

struct KeypointPair {
  Point2 first;
  Point2 second;
};

Point2 apply_homography(const Eigen::Matrix3d& h, const Point2& p);
/// Scales so h(2,2) == 1 when that entry is nonzero.
Eigen::Matrix3d normalize_homography(const Eigen::Matrix3d& h);
/// Image of the unit square's corners.
Quad project_frame(const Eigen::Matrix3d& h);

/// Least-squares homography (normalized DLT) mapping first -> second; needs >= 4 pairs.
Eigen::Matrix3d fit_homography(std::span<const KeypointPair> pairs);
/// Normalized 8-point fundamental matrix with rank-2 enforcement; needs >= 8 pairs.
Eigen::Matrix3d fit_fundamental(std::span<const KeypointPair> pairs);
/// First-order geometric error of a correspondence under F (squared, relative units).
double sampson_error(const Eigen::Matrix3d& f, const KeypointPair& pair);

bool points_collinear(std::span<const Point2> points, double tolerance = 1e-9);

/// Mean squared distance from the centroid.
double dispersion(std::span<const Point2> points);

bool point_in_polygon(const Point2& p, std::span<const Point2> polygon);

/// 2-norm condition number of the 3x2 block of H's first two columns, or
/// nullopt when those columns are (numerically) linearly dependent.
std::optional<double> column_condition_number(const Eigen::Matrix3d& h);

struct MatchOptions {
  double inlier_threshold = 1e-3;  // Sampson distance, relative units
  int max_iterations = 2000;
  double confidence = 0.999;
  std::uint64_t seed = 7;
  /// Transfer-error tolerance (multiple of the inlier threshold) for the
  /// plane-consensus step that picks which F-inliers feed the final
  /// least-squares homography (0 fits on all F-inliers).
  double refit_factor = 3.0;
};

struct MatchResult {
  std::string first_id;
  std::string second_id;
  std::vector<KeypointPair> keypoints;
  std::vector<bool> inlier_flags;
  Eigen::Matrix3d homography = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d fundamental = Eigen::Matrix3d::Zero();
  int inlier_count = 0;

  std::vector<KeypointPair> inliers() const;
};

/// Robust fundamental-matrix fit over putative pairs to flag inliers, then a
/// least-squares homography on the inliers. Rejects (nullopt) with fewer than
/// 8 putative pairs, fewer than 8 inliers, or collinear inliers.
std::optional<MatchResult> estimate_match(std::vector<KeypointPair> putative, const MatchOptions& options = {});

struct WarpResult {
  ProbMap values;    // 0 outside `valid`
  BinaryMask valid;  // destination pixels whose preimage lies inside the source frame
  Quad quad;         // forward projection of the source corners
};

/// Inverse warp with bilinear sampling; `h` maps source relative coordinates
/// to destination relative coordinates.
WarpResult warp_mask(const ProbMap& source, const Eigen::Matrix3d& h, int out_width, int out_height);

/// Homography between two relative frames induced by scaling a pixel
/// homography; helper for scenes given in pixel units.
Eigen::Matrix3d relative_from_pixel_homography(const Eigen::Matrix3d& h_pixels, int w1, int h1, int w2, int h2);

}  // namespace halo
