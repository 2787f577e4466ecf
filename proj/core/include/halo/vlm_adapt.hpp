#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "halo/core_data.hpp"
#include "halo/mining.hpp"
#include "halo/nn.hpp"
#include "halo/oracles.hpp"

namespace halo {

/// Text-conditioned segmenter over square inputs of a fixed size.
class SegModel {
 public:
  virtual ~SegModel() = default;
  virtual int input_size() const = 0;
  /// `image` must be input_size x input_size; output has the same shape.
  virtual ProbMap forward(const RgbImage& image, std::string_view text) const = 0;
};

struct SegModelConfig {
  int input_size = 352;
  int feature_dim = 16;
  int text_buckets = 1024;
  double color_frequency = 4.0;  // std-dev of the random color projections
  std::uint64_t seed = 1;
};

/// Per-pixel features from frozen random projections of color (pixel and 3x3
/// neighbourhood mean) and a frozen hashed-trigram text embedding. The
/// trainable decoder is affine in both:
///   logit = phi^T (W t + u) + v^T t + b,   p = sigmoid(logit).
class FeatureSegModel : public SegModel, public SegOracle {
 public:
  explicit FeatureSegModel(const SegModelConfig& config = {});

  int input_size() const override { return config_.input_size; }
  ProbMap forward(const RgbImage& image, std::string_view text) const override;

  /// Resizes the region to the input size and runs forward.
  ProbMap segment(const ImageRegion& region, std::string_view text) const override;
  std::string identity() const override;

  const SegModelConfig& config() const { return config_; }

  /// Pixel features (input_size^2 x D), row-major pixels.
  Eigen::MatrixXd image_features(const RgbImage& image) const;
  Eigen::VectorXd text_embedding(std::string_view text) const;
  ProbMap decode(const Eigen::MatrixXd& features, const Eigen::VectorXd& text) const;

  struct Decoder {
    Eigen::MatrixXd w;
    Eigen::VectorXd u;
    Eigen::VectorXd v;
    Eigen::VectorXd b;  // single entry

    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
  };
  Decoder& decoder() { return decoder_; }
  const Decoder& decoder() const { return decoder_; }

  /// Adds dL/dparams given dL/dlogit per pixel.
  void accumulate_gradient(const Eigen::MatrixXd& features, const Eigen::VectorXd& text,
                           std::span<const double> dlogit, Decoder& grad) const;
  Decoder zero_decoder() const;

  std::uint64_t encoder_checksum() const;
  std::uint64_t decoder_checksum() const;

  void save(const std::filesystem::path& path) const;
  static FeatureSegModel load(const std::filesystem::path& path);

 private:
  SegModelConfig config_;
  Eigen::MatrixXd color_proj_;   // D x 6
  Eigen::VectorXd color_phase_;  // D
  Eigen::MatrixXd trigram_table_;  // buckets x D
  Decoder decoder_;
};

struct LossReport {
  double l_corresp = 0.0;
  double l_crop = 0.0;
  double l_consistency = 0.0;
  double l_reg = 0.0;
  double total() const { return l_corresp + l_crop + l_consistency + l_reg; }
};

/// A supervised model input: `region` of `image` is resized to the model
/// input; `target`/`valid` are given over that region at any resolution.
struct SupervisedItem {
  const RgbImage* image = nullptr;
  Rect region;
  std::string text;
  ProbMap target;
  std::optional<BinaryMask> valid;
};

/// Whole-image prediction compared, inside `crop`, with a frozen oracle's
/// output for that crop.
struct ConsistencyItem {
  const RgbImage* image = nullptr;
  Rect crop;
  std::string text;
  ProbMap oracle_target;
};

struct StepBatch {
  std::vector<SupervisedItem> corresp;
  std::vector<SupervisedItem> crops;
  std::optional<ConsistencyItem> consistency;
};

/// Loss of one step; when `grad` is given, adds d(total)/d(decoder).
LossReport compute_step(const FeatureSegModel& model, const StepBatch& batch,
                        FeatureSegModel::Decoder* grad = nullptr);

/// Model prediction on the whole image, restricted to `crop` and resampled
/// onto the oracle's grid, scored by cross-entropy against the oracle.
double consistency_loss(const SegModel& model, const RgbImage& image, std::string_view text, const Rect& crop,
                        const SegOracle& frozen_oracle);

struct FinetuneSchedule {
  int epochs = 10;
  double lr = 1e-4;
  int corresp_per_step = 1;
  int crops_per_step = 4;
  double plural_p = 0.5;
  std::string optimizer = "sgd";
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  std::vector<LossReport> steps;
  std::vector<double> epoch_mean_total;
  std::size_t pluralized = 0;
  std::size_t skipped = 0;
};

using ImageLookup = std::function<const RgbImage&(const std::string& image_id)>;

/// Trains the decoder only. The consistency crop for each step comes from
/// two_crop_pick on the correspondence sample's zoomed-out image. Throws
/// Error if the total loss becomes non-finite.
FinetuneResult finetune_segmenter(FeatureSegModel& model, const std::vector<ZoomPairSample>& zoom_pairs,
                                  const std::vector<CropSample>& crops, const ImageLookup& images,
                                  const SegOracle& frozen_oracle, const SimOracle& sim,
                                  const FinetuneSchedule& schedule = {});

/// Smallest box holding pixels strictly above `threshold`, grown on every
/// side by `margin` x that side's extent and clipped; the full frame when no
/// pixel qualifies.
Rect bbox_from_map(const ProbMap& map, double threshold = 0.5, double margin = 0.1);
/// Runs `seg` on the whole image and maps the box to image pixels.
Rect building_bbox(const ImageRegion& image, const std::string& building_prompt, const SegOracle& seg);

/// Window starts covering [0,length) with the given window and stride, plus
/// a final window flush with the end.
std::vector<int> window_offsets(int length, int window, int stride);

struct TileLayout {
  int scaled_width = 0;
  int scaled_height = 0;
  int pad_left = 0;
  int pad_top = 0;
  int padded_width = 0;
  int padded_height = 0;
  std::vector<int> x_offsets;
  std::vector<int> y_offsets;
};

TileLayout plan_tiles(int width, int height, int window = 352, int max_dim = 500, int stride = 25);

/// Sliding-window inference with replication padding; output at the image's resolution.
ProbMap tiled_segment(const RgbImage& image, std::string_view text, const SegModel& model, int max_dim = 500,
                      int stride = 25);

/// Tiled inference on the building box, pasted into a zero map of the
/// image's size.
ProbMap segment_zoomed(const RgbImage& image, std::string_view text, const SegModel& model,
                       const Rect& building_box, int max_dim = 500, int stride = 25);

}  // namespace halo
