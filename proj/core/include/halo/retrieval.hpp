#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "halo/image.hpp"

namespace halo {

/// Image and text embeddings on the unit sphere; similarity is their dot product.
class RetrievalEncoder {
 public:
  virtual ~RetrievalEncoder() = default;
  virtual Eigen::VectorXd embed_image(const RgbImage& image) const = 0;
  virtual Eigen::VectorXd embed_text(std::string_view text) const = 0;
  double similarity(const RgbImage& image, std::string_view text) const {
    return embed_image(image).dot(embed_text(text));
  }
};

struct RetrievalConfig {
  int grid = 4;  // image descriptor: grid x grid cell mean colors
  int text_buckets = 512;
  int embed_dim = 32;
  std::uint64_t seed = 1;
};

/// Linear maps from fixed image and text descriptors, L2-normalized.
class ToyRetrievalEncoder : public RetrievalEncoder {
 public:
  explicit ToyRetrievalEncoder(const RetrievalConfig& config = {});

  Eigen::VectorXd embed_image(const RgbImage& image) const override;
  Eigen::VectorXd embed_text(std::string_view text) const override;

  const RetrievalConfig& config() const { return config_; }
  Eigen::VectorXd image_descriptor(const RgbImage& image) const;
  Eigen::VectorXd text_descriptor(std::string_view text) const;

  struct Weights {
    Eigen::MatrixXd image_w;
    Eigen::VectorXd image_b;
    Eigen::MatrixXd text_w;
    Eigen::VectorXd text_b;
  };
  Weights& weights() { return weights_; }
  const Weights& weights() const { return weights_; }
  Weights zero_weights() const;
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& path) const;
  static ToyRetrievalEncoder load(const std::filesystem::path& path);

 private:
  RetrievalConfig config_;
  Weights weights_;
};

/// Multiple-negatives ranking loss over a batch of aligned (image, text)
/// embeddings: mean cross-entropy of each image against all texts in the batch,
/// scores = scale x cosine. Throws InvalidArgument for batches below 2.
double mnrl_loss(const std::vector<Eigen::VectorXd>& images, const std::vector<Eigen::VectorXd>& texts,
                 double scale = 20.0);

/// Loss of one batch; when `grad` is given, adds the gradient w.r.t. the weights.
double retrieval_step(const ToyRetrievalEncoder& encoder, const std::vector<const RgbImage*>& images,
                      const std::vector<std::string>& labels, double scale, ToyRetrievalEncoder::Weights* grad);

struct RetrievalPair {
  const RgbImage* image = nullptr;
  std::string label;
};

/// Drops labels starting with "un" ("unknown", "undetermined") and strips
/// leading compass words ("north eastern portal" -> "portal"); labels left
/// empty are dropped.
std::vector<RetrievalPair> filter_retrieval_pairs(const std::vector<RetrievalPair>& pairs);

struct RetrievalSchedule {
  int epochs = 5;
  double lr = 1e-6;
  int batch_size = 128;
  double scale = 20.0;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
};

struct RetrievalTrainResult {
  std::vector<double> epoch_mean_loss;
  std::size_t steps = 0;
};

RetrievalTrainResult train_retrieval(ToyRetrievalEncoder& encoder, const std::vector<RetrievalPair>& pairs,
                                     const RetrievalSchedule& schedule = {});

struct RetrievedTerms {
  std::vector<std::pair<std::string, double>> ranked;
  bool truncated = false;  // k exceeded the vocabulary size
};

/// Top-k vocabulary terms by similarity; ties in lexicographic order.
RetrievedTerms retrieve_terms(const RgbImage& image, const std::vector<std::string>& vocab, int k,
                              const RetrievalEncoder& encoder);

}  // namespace halo
