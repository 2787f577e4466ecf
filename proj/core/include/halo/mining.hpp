#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "halo/core_data.hpp"
#include "halo/distill.hpp"
#include "halo/geometry.hpp"
#include "halo/oracles.hpp"

namespace halo {

struct ZoomFilterConfig {
  int min_inliers = 50;
  double min_log_dispersion_ratio = 0.1;
  double min_sim_zoomed_in = 0.2;
  double max_sim_zoomed_out = 0.3;
  int min_region_inliers = 3;
  double region_threshold = 0.3;
  double max_facade_ratio = 0.5;  // exclusive
};

enum class ZoomFilter { kInliers = 0, kDispersion, kSimilarity, kRegion, kFacade };
inline constexpr std::size_t kZoomFilterCount = 5;
std::string to_string(ZoomFilter f);

/// Every filter's measured quantity and verdict.
struct ZoomFilterReport {
  int inlier_count = 0;
  double log_dispersion_ratio = 0.0;
  double sim_zoomed_in = 0.0;
  double sim_zoomed_out = 0.0;
  int region_inliers = 0;
  std::optional<double> facade_ratio;  // nullopt when the facade map is empty
  std::array<bool, kZoomFilterCount> passed{};

  bool all() const;
  std::optional<ZoomFilter> first_failure() const;
};

struct ZoomPairSample {
  std::string zoomed_in_id;
  std::string zoomed_out_id;
  std::string label;
  Quad quad;
  Eigen::Matrix3d homography = Eigen::Matrix3d::Identity();
  ProbMap target;    // at the zoomed-out region's resolution
  BinaryMask valid;  // pixels inside the projected frame
};

struct ZoomCounters {
  std::array<std::size_t, kZoomFilterCount> rejected{};
  std::size_t no_match = 0;
  std::size_t accepted = 0;
};

/// R_P test, facade ratio and the rest, all evaluated (no short-circuit).
ZoomFilterReport evaluate_zoom_filters(const ImageRegion& zoomed_in, const ImageRegion& zoomed_out,
                                       const std::string& label, const std::string& building_prompt,
                                       const MatchResult& match, const SegOracle& seg, const SimOracle& sim,
                                       const ZoomFilterConfig& config = {});

/// Filters run in order and stop at the first failure, which is counted.
std::optional<ZoomPairSample> accept_zoom_pair(const ImageRegion& zoomed_in, const ImageRegion& zoomed_out,
                                               const std::string& label, const std::string& building_prompt,
                                               const MatchResult& match, const SegOracle& seg,
                                               const SimOracle& sim, const ZoomFilterConfig& config = {},
                                               ZoomCounters* counters = nullptr);

/// Share of the facade mass whose pixel centers fall inside `quad`.
/// Throws DomainError when the map sums to zero.
double facade_area_ratio(const ProbMap& facade, const Quad& quad);

/// Keypoints (relative coordinates) landing on a true pixel of `mask`.
int count_points_in_mask(std::span<const Point2> points, const BinaryMask& mask);

struct CropConfig {
  double min_similarity = 0.2;
  double min_center_activation = 0.1;
  double center_fraction = 280.0 / 352.0;
  double min_side_fraction = 0.2;
  double max_side_fraction = 0.6;
};

enum class CropCondition { kSimilarity = 0, kBeatsImage, kBeatsCommon, kCenterActivation };
inline constexpr std::size_t kCropConditionCount = 4;
std::string to_string(CropCondition c);

struct CropSample {
  std::string image_id;
  std::string label;
  Rect crop;
  ProbMap target;  // oracle segmentation of the crop
};

struct CropCounters {
  std::array<std::size_t, kCropConditionCount> rejected{};
  std::size_t accepted = 0;
};

/// Square crop with side U[min,max] x min(w,h), placed uniformly inside the image.
Rect sample_crop(int width, int height, std::mt19937_64& rng, const CropConfig& config = {});

/// `common_labels` are the most frequent pseudo-labels; P itself is skipped.
std::optional<CropSample> mine_crop_sample(const ImageRegion& image, const std::string& label,
                                           const SegOracle& seg, const SimOracle& sim,
                                           std::span<const std::string> common_labels, std::mt19937_64& rng,
                                           const CropConfig& config = {}, CropCounters* counters = nullptr);

/// Samples two crops and keeps the more similar one; the first wins ties.
Rect two_crop_pick(const ImageRegion& image, const std::string& label, const SimOracle& sim,
                   std::mt19937_64& rng, const CropConfig& config = {});

/// Max of the map over its central window (fraction of each side).
double center_max(const ProbMap& map, double fraction);

struct RefineConfig {
  std::vector<std::string> stop_list{"mosque", "front", "gothic", "cathedral", "side", "view"};
  std::vector<std::string> direction_words{"north",    "south",    "east",    "west",  "northern",
                                           "southern", "eastern",  "western", "left",  "right",
                                           "upper",    "lower"};
};

/// Singular form with digits and direction words removed; nullopt when
/// nothing localizable is left.
std::optional<std::string> refine_label(std::string_view label, const RefineConfig& config = {});

/// Top-k labels by frequency, ties in lexicographic order.
std::vector<std::string> most_common_labels(std::span<const std::string> labels, std::size_t k);

struct MiningOptions {
  std::size_t pair_budget = 50;  // images used as the zoomed-in side
  std::size_t crop_attempts_per_image = 8;
  std::size_t crop_budget = 256;
  std::size_t common_label_count = 20;
  std::uint64_t seed = 0;
  int workers = 1;
  ZoomFilterConfig zoom;
  CropConfig crop;
  RefineConfig refine;
  MatchOptions match;
};

struct MiningResult {
  std::vector<ZoomPairSample> zoom_pairs;
  std::vector<CropSample> crops;
  ZoomCounters zoom_counters;
  CropCounters crop_counters;
  std::size_t pairs_considered = 0;
};

MiningResult mine_scene(const SceneManifest& scene, std::span<const distill::PseudoLabel> labels, const Matcher& matcher,
                        const SegOracle& seg, const SimOracle& sim, const MiningOptions& options = {});

/// zoom_pairs.jsonl, crops.jsonl and targets/ under `dir`.
void write_mining(const MiningResult& result, const std::filesystem::path& dir);
std::vector<ZoomPairSample> read_zoom_pairs(const std::filesystem::path& dir);
std::vector<CropSample> read_crops(const std::filesystem::path& dir);

}  // namespace halo
