#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "halo/core_data.hpp"
#include "halo/geometry.hpp"

namespace halo {

enum class AnnotationOrigin { kManualSeed, kPropagated };

struct SeedAnnotation {
  std::string image_id;
  std::string category;
  BinaryMask mask;
  AnnotationOrigin origin = AnnotationOrigin::kManualSeed;
  std::vector<std::string> sources;  // seed ids behind a propagated mask
};

/// cond2 of H's first two columns <= kappa_max; rank-deficient columns fail.
bool homography_skew_filter(const Eigen::Matrix3d& h, double kappa_max = 10.0);

struct PropagationOptions {
  int min_inliers = 100;
  double kappa_max = 10.0;
  double warp_threshold = 0.5;  // warped seed value counted as a positive vote
};

struct RejectedWarp {
  std::string seed_id;
  std::string reason;
};

/// One line of the human review manifest.
struct ReviewEntry {
  std::string image_id;
  std::string category;
  std::vector<std::string> sources;
  std::vector<RejectedWarp> rejected;
  std::size_t positive_pixels = 0;
  std::size_t tie_pixels = 0;  // even vote splits resolved positive
};

struct PropagationResult {
  std::vector<SeedAnnotation> masks;
  std::vector<ReviewEntry> review;   // one per propagated mask
  std::vector<ReviewEntry> skipped;  // targets with no accepted warp
};

/// For each target image seen in `matches` (and not itself a seed of that
/// category): warps every seed whose match has >= min_inliers inliers and a
/// homography passing the skew filter, then takes a per-pixel majority over
/// the warps whose footprint covers the pixel (ties positive). Matches may
/// list the seed first or second. `sizes` gives target dimensions.
PropagationResult propagate_masks(const std::vector<SeedAnnotation>& seeds, const std::vector<MatchResult>& matches,
                                  const std::map<std::string, std::pair<int, int>>& sizes,
                                  const PropagationOptions& options = {});

void write_review(const std::filesystem::path& path, const std::vector<ReviewEntry>& entries);

/// Step AP over descending scores, ties by index order. DomainError without positives.
double average_precision(std::span<const double> scores, std::span<const bool> labels);
double average_precision(const ProbMap& scores, const BinaryMask& gt);

struct EvalCell {
  std::string landmark;
  std::string category;
  std::optional<double> ap;  // nullopt is a gap, never imputed
  std::size_t images = 0;           // images contributing to ap
  std::size_t excluded_images = 0;  // no positive GT pixel
  std::size_t missing_predictions = 0;
};

struct EvalTable {
  std::vector<EvalCell> cells;  // sorted by (landmark, category)
  std::map<std::string, double> category_means;
  std::map<std::string, std::size_t> category_landmarks;
  double map = 0.0;
};

/// Per-category mean over landmarks with an AP, then the mean over categories.
/// Throws InvalidArgument on empty input or when every cell is a gap.
EvalTable aggregate_map(std::vector<EvalCell> cells);

struct RecallAtK {
  std::map<int, double> recall;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // gold label absent from the ranking
};

RecallAtK recall_at_k(const std::vector<std::vector<std::string>>& rankings, const std::vector<std::string>& gold,
                      const std::vector<int>& ks);

/// Scores pred_dir/<category>/<id>.png against gt_dir/<category>/<id>.png for
/// every GT category. A cell's AP is the mean per-image pixel AP over images
/// with a positive GT pixel; missing predictions score as all zeros.
/// A non-empty `categories` restricts the GT categories scored.
EvalTable evaluate_predictions(const std::string& landmark, const std::filesystem::path& gt_dir,
                               const std::filesystem::path& pred_dir, const std::vector<std::string>& categories = {});

std::string eval_table_json(const EvalTable& table);
void write_eval_json(const EvalTable& table, const std::filesystem::path& path);

}  // namespace halo
