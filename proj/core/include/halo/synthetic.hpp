#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "halo/core_data.hpp"
#include "halo/oracles.hpp"
#include "halo/semantic_field.hpp"

namespace halo::synthetic {

enum Face { kSouth = 0, kNorth, kEast, kWest, kTop, kBottom };
inline constexpr int kFaceCount = 6;

/// Labelled rectangle in face coordinates: u runs left to right as seen from
/// outside, v runs top to bottom (on the roof, v runs south to north).
struct FacadeRegion {
  std::string category;
  int face = kSouth;
  double u0 = 0, v0 = 0, u1 = 1, v1 = 1;
};

struct Palette {
  Eigen::Vector3d wall{0.85, 0.75, 0.55};
  Eigen::Vector3d window{0.15, 0.25, 0.55};
  Eigen::Vector3d portal{0.45, 0.25, 0.12};
  Eigen::Vector3d dome{0.25, 0.55, 0.45};
  Eigen::Vector3d sky{0.7, 0.82, 0.95};
};

struct SceneSpec {
  std::string landmark_name = "toy basilica";
  BuildingKind kind = BuildingKind::kCathedral;
  Eigen::Vector3d center{0.0, 0.0, 0.5};
  Eigen::Vector3d half_extents{0.6, 0.4, 0.5};
  std::vector<FacadeRegion> regions = default_regions();
  Palette palette;
  int ring_views = 16;
  bool closeups = true;  // one per region on a side face
  int width = 64;
  int height = 64;
  double focal = 70.0;
  double ring_radius = 2.6;
  double ring_height_low = 0.9;
  double ring_height_high = 1.4;
  double closeup_distance = 0.38;
  double illumination_jitter = 0.1;  // per-view gain in [1-j, 1+j]
  double texture_contrast = 0.15;
  double texture_cell = 0.05;  // side of the square texture cells, scene units
  double mask_noise = 0.2;  // salt-and-pepper fraction of the mock masks
  int matches_per_pair = 150;
  double match_outliers = 0.1;
  std::uint64_t seed = 7;

  static std::vector<FacadeRegion> default_regions();
  std::vector<std::string> categories() const;
};

struct SurfaceHit {
  double t = 0.0;
  int face = kSouth;
  double u = 0.0;
  double v = 0.0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

struct SyntheticView {
  std::string id;
  Camera camera;
  double gain = 1.0;
  std::string caption;
  std::string target_category;  // close-ups only
};

/// Analytic box landmark with labelled facade rectangles.
class Scene {
 public:
  explicit Scene(SceneSpec spec);

  const SceneSpec& spec() const { return spec_; }
  const std::vector<SyntheticView>& views() const { return views_; }

  std::optional<SurfaceHit> intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) const;
  /// Category name at a surface location; empty for plain wall.
  std::string category_at(int face, double u, double v) const;
  Eigen::Vector3d surface_color(const SurfaceHit& hit) const;
  RgbImage render(const Camera& camera, double gain = 1.0) const;
  /// Pixel-center ray casts; an empty category gives the building silhouette.
  BinaryMask mask(const Camera& camera, const std::string& category) const;
  /// Continuous pixel position of a world point if it is in frame and unoccluded.
  std::optional<Eigen::Vector2d> visible_pixel(const Camera& camera, const Eigen::Vector3d& point) const;
  /// World point of a face coordinate.
  Eigen::Vector3d face_point(int face, double u, double v) const;
  /// Homography between relative image coordinates of two cameras induced by a face plane.
  Eigen::Matrix3d face_homography(const Camera& from, const Camera& to, int face) const;
  /// Bounds for the radiance field: the box grown by `margin`.
  Aabb field_bounds(double margin = 0.15) const;
  Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) const;

 private:
  SceneSpec spec_;
  std::vector<SyntheticView> views_;
};

/// Writes images/, manifest.jsonl, scene.json, gt/<category>/, masks/<category>/
/// (salt-and-pepper corrupted, plus clean building masks under the building
/// prompt) and aux/matches.jsonl. Refuses a non-empty `root`.
SceneManifest make_synthetic_scene(const SceneSpec& spec, const std::filesystem::path& root);

/// Replaces `fraction` of the pixels by a fair coin flip.
BinaryMask salt_and_pepper(const BinaryMask& mask, double fraction, std::uint64_t seed);

/// Classifies pixels by chromaticity against the palette.
class PaletteClassifier {
 public:
  explicit PaletteClassifier(Palette palette = {});
  /// "window", "portal", "dome", "wall" or "sky".
  std::string classify(const std::uint8_t* rgb) const;
  /// Fraction of the region classified as the category; "building" terms
  /// (cathedral, mosque, synagogue, building) count every non-sky pixel.
  double fraction(const ImageRegion& region, std::string_view text) const;
  ProbMap segment(const ImageRegion& region, std::string_view text) const;

 private:
  std::vector<std::pair<std::string, Eigen::Vector2d>> chroma_;
};

/// Clean chromaticity segmentation of any image, including re-renders.
class PaletteSegOracle : public SegOracle {
 public:
  explicit PaletteSegOracle(Palette palette = {}) : classifier_(palette) {}
  ProbMap segment(const ImageRegion& region, std::string_view text) const override {
    return classifier_.segment(region, text);
  }
  std::string identity() const override { return "palette-seg"; }

 private:
  PaletteClassifier classifier_;
};

/// Similarity 0.1 + 0.5 x category fraction of the region.
class PaletteSimOracle : public SimOracle {
 public:
  explicit PaletteSimOracle(Palette palette = {}) : classifier_(palette) {}
  double similarity(const ImageRegion& region, std::string_view text) const override {
    return 0.1 + 0.5 * classifier_.fraction(region, text);
  }
  std::string identity() const override { return "palette-sim"; }

 private:
  PaletteClassifier classifier_;
};

}  // namespace halo::synthetic
