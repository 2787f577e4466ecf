#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "halo/core_data.hpp"
#include "halo/nn.hpp"

namespace halo {

struct Aabb {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1.0);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(1.0);
};

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  double near = 0.0;
  double far = 0.0;  // near == far for rays missing the scene bounds
  bool hits() const { return far > near; }
};

/// Entry and exit distances (clamped at 0) along a unit direction; nullopt on a miss.
std::optional<std::pair<double, double>> intersect_aabb(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction,
                                                        const Aabb& box);
/// Ray through continuous pixel coordinates (pixel centers at +0.5).
Ray camera_ray(const Camera& camera, double px, double py, const Aabb& bounds);

/// [x, sin(2^k pi x), cos(2^k pi x) for k < bands], per component.
Eigen::VectorXd positional_encoding(const Eigen::Vector3d& x, int bands);

struct FieldConfig {
  Aabb bounds;
  int grid_resolution = 48;
  int feature_channels = 8;
  int position_bands = 10;
  int direction_bands = 4;
  int hidden = 32;  // shared feature width, input of the semantic head
  int color_hidden = 32;
  int appearance_dim = 8;
  int samples_per_ray = 64;
  double weight_threshold = 1e-4;  // samples below this weight are skipped
  double initial_alpha = 0.01;
  std::uint64_t seed = 1;
};

/// Trilinear lookup taps into a res^3 vertex grid.
struct GridTaps {
  std::size_t index[8];
  double weight[8];
};

/// Density and feature voxel grids plus a shared MLP feature
///   h = relu(W [trilinear features, PE(x)] + b)
/// and an appearance-conditioned color MLP on [h, PE(dir), appearance].
struct RadianceBackbone {
  FieldConfig config;
  Eigen::VectorXd density;     // raw, one per vertex; sigma = softplus(raw + shift)
  Eigen::MatrixXd features;    // C x vertices
  nn::Dense shared;
  nn::Dense color_hidden;
  nn::Dense color_out;
  Eigen::MatrixXd appearance;  // A x training images
  Eigen::VectorXd background;  // rgb logits

  Eigen::VectorXd g_density;
  Eigen::MatrixXd g_features;
  Eigen::MatrixXd g_appearance;
  Eigen::VectorXd g_background;

  RadianceBackbone() = default;
  RadianceBackbone(const FieldConfig& config, std::size_t appearance_count);

  std::size_t vertex_count() const;
  std::size_t appearance_count() const { return static_cast<std::size_t>(appearance.cols()); }
  double density_shift() const;
  GridTaps taps(const Eigen::Vector3d& x) const;
  double sigma(const Eigen::Vector3d& x) const;
  Eigen::Vector3d background_color() const;
  /// Column of shared-MLP inputs for a point.
  Eigen::VectorXd shared_input(const Eigen::Vector3d& x, const GridTaps& taps) const;
  /// Shared features h (hidden x N) for N points.
  Eigen::MatrixXd shared_features(const std::vector<Eigen::Vector3d>& points) const;
  Eigen::VectorXd direction_encoding(const Eigen::Vector3d& direction) const;

  void zero_grad();
  std::vector<nn::Param> grid_params();
  std::vector<nn::Param> mlp_params();
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& path) const;
  static RadianceBackbone load(const std::filesystem::path& path);
};

/// Density-only pass over one ray.
struct RayTrace {
  std::vector<Eigen::Vector3d> points;
  std::vector<GridTaps> taps;
  std::vector<double> raw;
  std::vector<double> sigma;
  std::vector<double> alpha;
  std::vector<double> weight;
  std::vector<int> kept;       // samples with weight >= threshold
  double delta = 0.0;
  double transmittance = 1.0;  // after the last sample
};

/// Stratified samples; `jitter` in [0,1) is the position inside each stratum
/// (0.5 = midpoints).
RayTrace trace_ray(const RadianceBackbone& backbone, const Ray& ray, double jitter = 0.5);

/// Volume rendering weights: w_i = T_i (1 - exp(-sigma_i delta)).
std::vector<double> render_weights(const std::vector<double>& sigma, double delta, double* final_transmittance = nullptr);

struct TrainingRay {
  Ray ray;
  std::size_t view = 0;  // appearance index
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double target = 0.0;   // semantic target
};

/// Mean squared color error of a batch plus `opacity_weight` times the mean
/// binary entropy of the ray opacities plus `distortion_weight` times the mean
/// weight distortion sum_ij w_i w_j |s_i - s_j| + sum_i w_i^2 / (3n) over
/// normalized ray distances s, plus `sparsity_weight` times the mean sample
/// alpha; with `accumulate` set, adds the gradient into the backbone's
/// buffers. `jitters` (one per ray) default to midpoints.
double rgb_step(RadianceBackbone& backbone, const std::vector<TrainingRay>& batch, bool accumulate,
                const std::vector<double>* jitters = nullptr, double opacity_weight = 0.0,
                double distortion_weight = 0.0, double sparsity_weight = 0.0);

Eigen::Vector3d render_color(const RadianceBackbone& backbone, const Ray& ray, const Eigen::VectorXd& appearance);

struct PosedView {
  std::string id;
  Camera camera;
  const RgbImage* image = nullptr;
};

struct RgbTrainConfig {
  int iterations = 250000;
  int batch_rays = 8192;
  double lr = 5e-4;
  double grid_lr = 0.1;
  // Pushes ray opacity to 0 or 1; without it surfaces stay semi-transparent
  // because the background color can absorb the remainder.
  double opacity_weight = 3e-2;
  // Pulls each ray's weights into a compact interval so that surfaces are
  // thin and different rays to the same point render the same features.
  double distortion_weight = 0.0;
  // Removes density the images do not need, such as the wedges beyond a
  // convex object's corners that no silhouette carves away.
  double sparsity_weight = 0.0;
  std::uint64_t seed = 0;
};

struct RgbTrainResult {
  std::vector<double> losses;  // per iteration
};

RgbTrainResult train_rgb_field(RadianceBackbone& backbone, const std::vector<PosedView>& views,
                               const RgbTrainConfig& config = {});

/// Per-sample 2-way softmax classifier over the shared features.
struct SemanticHead {
  nn::Dense l1, l2, l3, out;

  SemanticHead() = default;
  SemanticHead(int input_dim, std::uint64_t seed, int w1 = 256, int w2 = 256, int w3 = 128);

  /// Class probabilities (2 x N); row 1 is the concept.
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& h) const;
  void zero_grad();
  std::vector<nn::Param> params();
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& path) const;
  static SemanticHead load(const std::filesystem::path& path);
};

/// S(r) = sum_i w_i s_i; skipped samples and empty space contribute 0.
double render_semantic(const RadianceBackbone& backbone, const SemanticHead& head, const Ray& ray);

/// Mean binary cross-entropy of rendered S against batch targets; with
/// `accumulate` set, adds the head gradient.
double semantic_step(const RadianceBackbone& backbone, SemanticHead& head, const std::vector<TrainingRay>& batch,
                     bool accumulate, const std::vector<double>* jitters = nullptr);

struct HeadTrainConfig {
  int iterations = 12500;
  int batch_rays = 8192;
  double lr = 5e-5;
  double target_threshold = 0.2;
  std::uint64_t seed = 0;
};

struct SemanticView {
  PosedView view;
  std::size_t appearance_index = 0;
  ProbMap mask;  // any resolution; sampled at pixel centers
};

struct HeadTrainResult {
  std::vector<double> losses;
};

/// Backbone is read-only; only the head changes.
HeadTrainResult train_semantic_head(const RadianceBackbone& backbone, SemanticHead& head,
                                    const std::vector<SemanticView>& views, const HeadTrainConfig& config = {});

struct RenderedView {
  RgbImage rgb;
  ProbMap semantic;  // empty without a head
};

RenderedView render_view(const RadianceBackbone& backbone, const SemanticHead* head, const Camera& camera, int width,
                         int height, const Eigen::VectorXd& appearance, int workers = 1);

/// Largest 4-connected component of map > threshold.
BinaryMask largest_component(const ProbMap& map, double threshold = 0.5);

struct ViewScore {
  std::string image_id;
  double m = 0.0;  // smallest relative margin of the component's box
  double c = 0.0;  // share of the re-render's component overlapping it
  double x = 0.0;  // 1 when coverage is under 10% or over 90%
  double s() const { return m + c - x; }
};

ViewScore score_view(const std::string& image_id, const ProbMap& facade, const ProbMap& facade_rerender);
/// Top-n by s, ties by id; all views when n exceeds the count.
std::vector<std::string> select_views(std::vector<ViewScore> scores, std::size_t n = 150);

/// Images ranked by mean rendered probability, ties by id.
std::vector<std::pair<std::string, double>> rank_by_overlap(const std::vector<std::pair<std::string, ProbMap>>& maps);

}  // namespace halo
