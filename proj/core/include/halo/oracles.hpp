#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "halo/core_data.hpp"
#include "halo/geometry.hpp"
#include "halo/image.hpp"

namespace halo {

/// A rectangle of a scene image. `image` may be null for mocks that work from
/// ids alone; `rect` is always set.
struct ImageRegion {
  std::string image_id;
  const RgbImage* image = nullptr;
  Rect rect;

  static ImageRegion whole(std::string id, const RgbImage& img) { return {std::move(id), &img, img.bounds()}; }
  bool full_frame() const { return image != nullptr && rect == image->bounds(); }
  RgbImage pixels() const;
  ImageRegion sub(const Rect& r) const;
};

/// Text-conditioned segmenter (pretrained CLIPSeg role).
class SegOracle {
 public:
  virtual ~SegOracle() = default;
  virtual ProbMap segment(const ImageRegion& region, std::string_view text) const = 0;
  virtual std::string identity() const = 0;
};

/// Image-text similarity (CLIP_FT role); cosine score in [-1,1].
class SimOracle {
 public:
  virtual ~SimOracle() = default;
  virtual double similarity(const ImageRegion& region, std::string_view text) const = 0;
  virtual std::string identity() const = 0;
};

/// Putative keypoint correspondences between two images (LoFTR role).
class Matcher {
 public:
  virtual ~Matcher() = default;
  virtual std::vector<KeypointPair> match(const ImageRegion& first, const ImageRegion& second) const = 0;
  virtual std::string identity() const = 0;
};

class FunctionSegOracle : public SegOracle {
 public:
  using Fn = std::function<ProbMap(const ImageRegion&, std::string_view)>;
  explicit FunctionSegOracle(Fn fn, std::string name = "function-seg") : fn_(std::move(fn)), name_(std::move(name)) {}
  ProbMap segment(const ImageRegion& region, std::string_view text) const override { return fn_(region, text); }
  std::string identity() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

class FunctionSimOracle : public SimOracle {
 public:
  using Fn = std::function<double(const ImageRegion&, std::string_view)>;
  explicit FunctionSimOracle(Fn fn, std::string name = "function-sim") : fn_(std::move(fn)), name_(std::move(name)) {}
  double similarity(const ImageRegion& region, std::string_view text) const override { return fn_(region, text); }
  std::string identity() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

/// Exact (image_id, text) table over whole images; crops fall back to `fallback`.
class TableSimOracle : public SimOracle {
 public:
  TableSimOracle(std::map<std::pair<std::string, std::string>, double> table, double fallback = 0.0)
      : table_(std::move(table)), fallback_(fallback) {}
  double similarity(const ImageRegion& region, std::string_view text) const override;
  std::string identity() const override { return "table-sim"; }

 private:
  std::map<std::pair<std::string, std::string>, double> table_;
  double fallback_;
};

/// Reads `<root>/masks/<category>/<image_id>.png`; the text is singularized to
/// find the category. Missing masks segment to zeros.
class FileSegOracle : public SegOracle {
 public:
  explicit FileSegOracle(std::filesystem::path scene_root) : root_(std::move(scene_root)) {}
  ProbMap segment(const ImageRegion& region, std::string_view text) const override;
  std::string identity() const override { return "file-seg"; }

 private:
  std::filesystem::path root_;
};

/// Correspondences stored as JSON lines
/// {"first": id, "second": id, "pairs": [[x1,y1,x2,y2], ...]} in relative coordinates.
class PlantedMatcher : public Matcher {
 public:
  explicit PlantedMatcher(const std::filesystem::path& matches_file);
  std::vector<KeypointPair> match(const ImageRegion& first, const ImageRegion& second) const override;
  std::string identity() const override { return "planted-matcher"; }
  std::size_t pair_count() const { return table_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, std::vector<KeypointPair>> table_;
};

void write_planted_matches(const std::filesystem::path& path,
                           const std::vector<std::tuple<std::string, std::string, std::vector<KeypointPair>>>& entries);

/// Crop of `map` covering the relative window of `rect` inside a frame of the given size.
ProbMap crop_relative(const ProbMap& map, const Rect& rect, int frame_width, int frame_height);

}  // namespace halo
