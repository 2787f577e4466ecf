#include "halo/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "halo/error.hpp"

namespace halo {

Point2 apply_homography(const Eigen::Matrix3d& h, const Point2& p) {
  const Eigen::Vector3d q = h * Eigen::Vector3d(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

Eigen::Matrix3d normalize_homography(const Eigen::Matrix3d& h) {
  if (std::abs(h(2, 2)) < 1e-15) return h;
  return h / h(2, 2);
}

Quad project_frame(const Eigen::Matrix3d& h) {
  return {apply_homography(h, {0, 0}), apply_homography(h, {1, 0}), apply_homography(h, {1, 1}),
          apply_homography(h, {0, 1})};
}

namespace {

// Hartley normalization: centroid to origin, mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(std::span<const KeypointPair> pairs, bool first) {
  Point2 mean = Point2::Zero();
  for (const auto& p : pairs) mean += first ? p.first : p.second;
  mean /= static_cast<double>(pairs.size());
  double dist = 0;
  for (const auto& p : pairs) dist += ((first ? p.first : p.second) - mean).norm();
  dist /= static_cast<double>(pairs.size());
  const double s = dist > 1e-15 ? std::sqrt(2.0) / dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

Point2 transform(const Eigen::Matrix3d& t, const Point2& p) { return apply_homography(t, p); }

}  // namespace

Eigen::Matrix3d fit_homography(std::span<const KeypointPair> pairs) {
  if (pairs.size() < 4) throw InvalidArgument("homography needs at least 4 correspondences");
  const Eigen::Matrix3d t1 = normalizing_transform(pairs, true);
  const Eigen::Matrix3d t2 = normalizing_transform(pairs, false);
  Eigen::MatrixXd a(2 * pairs.size(), 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Point2 p = transform(t1, pairs[i].first);
    const Point2 q = transform(t2, pairs[i].second);
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -p.x(), -p.y(), -1, 0, 0, 0, q.x() * p.x(), q.x() * p.y(), q.x();
    a.row(r + 1) << 0, 0, 0, -p.x(), -p.y(), -1, q.y() * p.x(), q.y() * p.y(), q.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return normalize_homography(t2.inverse() * hn * t1);
}

Eigen::Matrix3d fit_fundamental(std::span<const KeypointPair> pairs) {
  if (pairs.size() < 8) throw InvalidArgument("fundamental matrix needs at least 8 correspondences");
  const Eigen::Matrix3d t1 = normalizing_transform(pairs, true);
  const Eigen::Matrix3d t2 = normalizing_transform(pairs, false);
  Eigen::MatrixXd a(std::max<std::size_t>(pairs.size(), 9), 9);
  a.setZero();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Point2 p = transform(t1, pairs[i].first);
    const Point2 q = transform(t2, pairs[i].second);
    a.row(static_cast<Eigen::Index>(i)) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(),
        q.y(), p.x(), p.y(), 1;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Eigen::Matrix3d f;
  f << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = fsvd.singularValues();
  s(2) = 0;
  f = fsvd.matrixU() * s.asDiagonal() * fsvd.matrixV().transpose();
  f = t2.transpose() * f * t1;
  return f / f.norm();
}

double sampson_error(const Eigen::Matrix3d& f, const KeypointPair& pair) {
  const Eigen::Vector3d x1(pair.first.x(), pair.first.y(), 1.0);
  const Eigen::Vector3d x2(pair.second.x(), pair.second.y(), 1.0);
  const Eigen::Vector3d fx1 = f * x1;
  const Eigen::Vector3d ftx2 = f.transpose() * x2;
  const double num = x2.dot(fx1);
  const double den = fx1.x() * fx1.x() + fx1.y() * fx1.y() + ftx2.x() * ftx2.x() + ftx2.y() * ftx2.y();
  return den > 0 ? num * num / den : std::numeric_limits<double>::infinity();
}

bool points_collinear(std::span<const Point2> points, double tolerance) {
  if (points.size() < 3) return true;
  Point2 mean = Point2::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : points) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(points.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const double big = es.eigenvalues()(1);
  return big <= 0 || es.eigenvalues()(0) <= tolerance * big;
}

double dispersion(std::span<const Point2> points) {
  if (points.empty()) throw InvalidArgument("dispersion of an empty point set");
  Point2 mean = Point2::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  double sum = 0;
  for (const auto& p : points) sum += (p - mean).squaredNorm();
  return sum / static_cast<double>(points.size());
}

bool point_in_polygon(const Point2& p, std::span<const Point2> polygon) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = polygon[i];
    const auto& b = polygon[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_cross = (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x();
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

std::optional<double> column_condition_number(const Eigen::Matrix3d& h) {
  const Eigen::Matrix<double, 3, 2> cols = h.leftCols<2>();
  Eigen::JacobiSVD<Eigen::Matrix<double, 3, 2>> svd(cols);
  const auto s = svd.singularValues();
  if (s(0) <= 0 || s(1) <= 1e-12 * s(0)) return std::nullopt;
  return s(0) / s(1);
}

std::vector<KeypointPair> MatchResult::inliers() const {
  std::vector<KeypointPair> out;
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    if (inlier_flags[i]) out.push_back(keypoints[i]);
  }
  return out;
}

std::optional<MatchResult> estimate_match(std::vector<KeypointPair> putative, const MatchOptions& options) {
  if (putative.size() < 8) return std::nullopt;
  const double thr2 = options.inlier_threshold * options.inlier_threshold;
  std::mt19937_64 rng(options.seed);
  const std::size_t n = putative.size();

  std::vector<bool> best_flags;
  std::size_t best_count = 0;
  Eigen::Matrix3d best_f = Eigen::Matrix3d::Zero();
  int iterations = options.max_iterations;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<KeypointPair> sample(8);
  std::vector<bool> flags(n);
  for (int it = 0; it < iterations; ++it) {
    // Partial Fisher-Yates for an 8-element sample without replacement.
    for (std::size_t k = 0; k < 8; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(idx[k], idx[pick(rng)]);
      sample[k] = putative[idx[k]];
    }
    Eigen::Matrix3d f;
    try {
      f = fit_fundamental(sample);
    } catch (const Error&) {
      continue;
    }
    if (!f.allFinite()) continue;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      flags[i] = sampson_error(f, putative[i]) <= thr2;
      count += flags[i] ? 1 : 0;
    }
    if (count > best_count) {
      best_count = count;
      best_flags = flags;
      best_f = f;
      const double ratio = static_cast<double>(count) / static_cast<double>(n);
      const double p_good = std::pow(ratio, 8.0);
      if (p_good >= 1.0 - 1e-12) {
        iterations = std::min(iterations, it + 1);
      } else if (p_good > 0) {
        const double needed = std::log(1.0 - options.confidence) / std::log1p(-p_good);
        if (std::isfinite(needed) && needed >= 0 && needed < iterations) iterations = static_cast<int>(std::ceil(needed)) + 1;
      }
    }
  }
  if (best_count < 8) return std::nullopt;

  MatchResult result;
  result.keypoints = std::move(putative);
  result.inlier_flags = best_flags;
  result.inlier_count = static_cast<int>(best_count);
  result.fundamental = best_f;
  const auto inliers = result.inliers();
  std::vector<Point2> p1;
  std::vector<Point2> p2;
  for (const auto& p : inliers) {
    p1.push_back(p.first);
    p2.push_back(p.second);
  }
  if (points_collinear(p1) || points_collinear(p2)) return std::nullopt;
  Eigen::Matrix3d h = fit_homography(inliers);
  if (options.refit_factor > 0 && inliers.size() > 4) {
    // Planar correspondences satisfy a whole family of F, so a few outliers
    // can survive the F test. Keep the dominant plane before the final fit.
    const double limit = options.refit_factor * options.inlier_threshold;
    auto consensus = [&](const Eigen::Matrix3d& cand, double tol) {
      std::vector<KeypointPair> planar;
      for (const auto& p : inliers) {
        if ((apply_homography(cand, p.first) - p.second).norm() <= tol) planar.push_back(p);
      }
      return planar;
    };
    std::vector<KeypointPair> best = consensus(h, limit);
    std::vector<std::size_t> order(inliers.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<KeypointPair> quad(4);
    int h_iterations = options.max_iterations;
    for (int it = 0; it < h_iterations && best.size() < inliers.size(); ++it) {
      for (std::size_t k = 0; k < 4; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
        std::swap(order[k], order[pick(rng)]);
        quad[k] = inliers[order[k]];
      }
      Eigen::Matrix3d cand;
      try {
        cand = fit_homography(quad);
      } catch (const Error&) {
        continue;
      }
      if (!cand.allFinite()) continue;
      auto planar = consensus(cand, limit);
      if (planar.size() > best.size()) {
        best = std::move(planar);
        const double p_good = std::pow(static_cast<double>(best.size()) / inliers.size(), 4.0);
        if (p_good > 0 && p_good < 1) {
          const double needed = std::log(1.0 - options.confidence) / std::log1p(-p_good);
          if (std::isfinite(needed) && needed >= 0 && needed < h_iterations) h_iterations = static_cast<int>(std::ceil(needed)) + 1;
        }
      }
    }
    if (best.size() >= 4) {
      h = fit_homography(best);
      if (auto refined = consensus(h, options.inlier_threshold); refined.size() >= 4) h = fit_homography(refined);
    }
  }
  if (!h.allFinite()) return std::nullopt;
  result.homography = h;
  return result;
}

WarpResult warp_mask(const ProbMap& source, const Eigen::Matrix3d& h, int out_width, int out_height) {
  if (std::abs(h.determinant()) < 1e-14 || !h.allFinite()) {
    throw InvalidArgument("warp homography is not invertible");
  }
  const Eigen::Matrix3d inv = h.inverse();
  WarpResult out{ProbMap(out_width, out_height), BinaryMask(out_width, out_height), project_frame(h)};
  // Points of the source frame map with a consistent homogeneous sign; a
  // preimage with the opposite sign lies beyond the line at infinity.
  const double frame_sign = (h * Eigen::Vector3d(0.5, 0.5, 1.0)).z() > 0 ? 1.0 : -1.0;
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Eigen::Vector3d s = inv * Eigen::Vector3d((x + 0.5) / out_width, (y + 0.5) / out_height, 1.0);
      if (s.z() * frame_sign <= 0) continue;
      const double u = s.x() / s.z();
      const double v = s.y() / s.z();
      if (u < 0 || u > 1 || v < 0 || v > 1) continue;
      out.valid.set(x, y, true);
      out.values.at(x, y) = std::clamp(source.sample_relative(u, v), 0.0, 1.0);
    }
  }
  return out;
}

Eigen::Matrix3d relative_from_pixel_homography(const Eigen::Matrix3d& h_pixels, int w1, int h1, int w2, int h2) {
  const Eigen::Matrix3d s1 = Eigen::Vector3d(w1, h1, 1).asDiagonal();
  const Eigen::Matrix3d s2inv = Eigen::Vector3d(1.0 / w2, 1.0 / h2, 1).asDiagonal();
  return normalize_homography(s2inv * h_pixels * s1);
}

}  // namespace halo
