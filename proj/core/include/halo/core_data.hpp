#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "halo/image.hpp"

namespace halo {

/// Four row-major indices and weights of a clamped bilinear lookup at
/// relative coordinates (u,v) on a width x height grid of pixel centers.
struct BilinearTaps {
  std::size_t index[4];
  double weight[4];
};
BilinearTaps bilinear_taps(int width, int height, double u, double v);

/// Per-pixel probabilities in [0,1], row-major.
class ProbMap {
 public:
  ProbMap() = default;
  ProbMap(int width, int height, double fill = 0.0);
  ProbMap(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }

  double& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  /// Bilinear lookup at relative coordinates (u,v) in [0,1]^2, clamped at borders.
  double sample_relative(double u, double v) const;

  bool operator==(const ProbMap&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  std::size_t count() const;
  /// Threshold that produced the mask; NaN for masks built by hand or decoded.
  double threshold() const { return threshold_; }

  /// Compares pixels only; the threshold is provenance.
  bool operator==(const BinaryMask& o) const { return width_ == o.width_ && height_ == o.height_ && bits_ == o.bits_; }

 private:
  friend BinaryMask binarize(const ProbMap&, double);
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
  double threshold_ = std::numeric_limits<double>::quiet_NaN();
};

/// bit = value >= threshold. Threshold must lie in (0,1).
BinaryMask binarize(const ProbMap& map, double threshold);

double iou(const BinaryMask& a, const BinaryMask& b);

/// Bilinear resampling at pixel centers; same-size input is returned unchanged.
ProbMap resize_probmap(const ProbMap& map, int width, int height);

/// 8-bit grayscale PNG, value stored as round(v * 255).
std::vector<std::uint8_t> encode_probmap(const ProbMap& map);
ProbMap decode_probmap(std::span<const std::uint8_t> bytes);
void save_probmap(const ProbMap& map, const std::filesystem::path& path);
ProbMap load_probmap(const std::filesystem::path& path);

/// Binary masks on disk are 0/255 grayscale PNGs.
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);
ProbMap to_probmap(const BinaryMask& mask);

/// Pinhole camera: pixel = K * R^T * (X - t), with pose = [R | t] world-from-camera.
/// Camera axes follow the x-right, y-down, z-forward convention.
struct Camera {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> pose = Eigen::Matrix<double, 3, 4>::Zero();

  Eigen::Matrix3d rotation() const { return pose.leftCols<3>(); }
  Eigen::Vector3d center() const { return pose.col(3); }
  /// Unit world-space direction through the center of pixel (x,y) scaled from `width`.
  Eigen::Vector3d ray_direction(double px, double py) const;
  /// Projects a world point; returns nullopt behind the camera.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& world) const;
  bool operator==(const Camera& o) const { return intrinsics == o.intrinsics && pose == o.pose; }
};

struct ImageMetadata {
  std::string filename;
  std::string caption;
  std::vector<std::string> wiki_categories;
  bool operator==(const ImageMetadata&) const = default;
};

struct ImageRecord {
  std::string id;
  int width = 0;
  int height = 0;
  std::filesystem::path pixel_ref;  // relative to the scene root
  ImageMetadata metadata;
  std::optional<Camera> camera;
  bool operator==(const ImageRecord&) const = default;
};

enum class BuildingKind { kCathedral, kMosque, kSynagogue, kOther };
enum class Split { kTrain, kTest };

struct SceneManifest {
  std::filesystem::path root;
  std::string landmark_name;
  BuildingKind building_kind = BuildingKind::kOther;
  std::string building_kind_label;  // free text for kOther
  Split split = Split::kTrain;
  std::vector<ImageRecord> images;
  std::size_t duplicates_dropped = 0;

  const ImageRecord* find(std::string_view id) const;
  /// Zero-shot facade prompt: "cathedral", "mosque", "synagogue" or the free label.
  std::string building_prompt() const;
  std::size_t posed_count() const;
  bool operator==(const SceneManifest&) const = default;
};

std::string to_string(BuildingKind kind);
BuildingKind parse_building_kind(std::string_view text);

/// Reads `<root>/manifest.jsonl` (+ optional `<root>/scene.json`) and checks
/// every referenced image exists. Duplicate filenames keep the first record.
SceneManifest load_scene(const std::filesystem::path& root);
void write_scene(const SceneManifest& manifest, const std::filesystem::path& root);

RgbImage load_record_image(const SceneManifest& scene, const ImageRecord& record);

}  // namespace halo
