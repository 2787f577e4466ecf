#include "halo/retrieval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "halo/checkpoint.hpp"
#include "halo/error.hpp"
#include "halo/nn.hpp"
#include "halo/text.hpp"

namespace halo {

namespace {

constexpr std::string_view kRetrievalKind = "toy-retrieval-encoder";

Eigen::VectorXd normalized(const Eigen::VectorXd& z) {
  const double n = z.norm();
  if (!(n > 0)) throw DomainError("cannot normalize a zero embedding");
  return z / n;
}

// d(z/|z|)/dz applied to an upstream gradient.
Eigen::VectorXd normalize_backward(const Eigen::VectorXd& z, const Eigen::VectorXd& e, const Eigen::VectorXd& de) {
  return (de - e * e.dot(de)) / z.norm();
}

void init_gaussian(Eigen::MatrixXd& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
}

bool is_compass_word(const std::string& w) {
  static const std::vector<std::string> words{"north",    "south",    "east",    "west",    "northern",
                                              "southern", "eastern",  "western", "northeast", "northwest",
                                              "southeast", "southwest"};
  return std::find(words.begin(), words.end(), w) != words.end();
}

}  // namespace

ToyRetrievalEncoder::ToyRetrievalEncoder(const RetrievalConfig& config) : config_(config) {
  if (config.grid < 1 || config.text_buckets < 1 || config.embed_dim < 1) {
    throw InvalidArgument("retrieval config: sizes must be positive");
  }
  std::mt19937_64 rng(config.seed);
  const int image_in = 3 * config.grid * config.grid;
  weights_.image_w.resize(config.embed_dim, image_in);
  weights_.text_w.resize(config.embed_dim, config.text_buckets);
  init_gaussian(weights_.image_w, 1.0 / std::sqrt(image_in), rng);
  init_gaussian(weights_.text_w, 1.0, rng);
  weights_.image_b = Eigen::VectorXd::Zero(config.embed_dim);
  weights_.text_b = Eigen::VectorXd::Zero(config.embed_dim);
}

Eigen::VectorXd ToyRetrievalEncoder::image_descriptor(const RgbImage& image) const {
  if (image.empty()) throw InvalidArgument("retrieval: empty image");
  const int g = config_.grid;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(3 * g * g);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(g * g);
  for (int y = 0; y < image.height(); ++y) {
    const int cy = std::min(g - 1, y * g / image.height());
    for (int x = 0; x < image.width(); ++x) {
      const int cx = std::min(g - 1, x * g / image.width());
      const int cell = cy * g + cx;
      for (int c = 0; c < 3; ++c) f(3 * cell + c) += image.at(x, y, c);
      count(cell) += 1.0;
    }
  }
  for (int cell = 0; cell < g * g; ++cell) {
    const double n = std::max(1.0, count(cell));
    for (int c = 0; c < 3; ++c) f(3 * cell + c) = f(3 * cell + c) / n - 0.5;
  }
  return f;
}

Eigen::VectorXd ToyRetrievalEncoder::text_descriptor(std::string_view phrase) const {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(config_.text_buckets);
  for (const auto& tri : text::char_trigrams(text::to_lower(phrase))) {
    f(static_cast<Eigen::Index>(text::fnv1a(tri) % config_.text_buckets)) += 1.0;
  }
  const double n = f.norm();
  return n > 0 ? Eigen::VectorXd(f / n) : f;
}

Eigen::VectorXd ToyRetrievalEncoder::embed_image(const RgbImage& image) const {
  return normalized(weights_.image_w * image_descriptor(image) + weights_.image_b);
}

Eigen::VectorXd ToyRetrievalEncoder::embed_text(std::string_view text) const {
  return normalized(weights_.text_w * text_descriptor(text) + weights_.text_b);
}

ToyRetrievalEncoder::Weights ToyRetrievalEncoder::zero_weights() const {
  return {Eigen::MatrixXd::Zero(weights_.image_w.rows(), weights_.image_w.cols()),
          Eigen::VectorXd::Zero(weights_.image_b.size()),
          Eigen::MatrixXd::Zero(weights_.text_w.rows(), weights_.text_w.cols()),
          Eigen::VectorXd::Zero(weights_.text_b.size())};
}

std::uint64_t ToyRetrievalEncoder::checksum() const {
  auto h = nn::checksum({weights_.image_w.data(), static_cast<std::size_t>(weights_.image_w.size())});
  h = nn::checksum({weights_.image_b.data(), static_cast<std::size_t>(weights_.image_b.size())}, h);
  h = nn::checksum({weights_.text_w.data(), static_cast<std::size_t>(weights_.text_w.size())}, h);
  return nn::checksum({weights_.text_b.data(), static_cast<std::size_t>(weights_.text_b.size())}, h);
}

void ToyRetrievalEncoder::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = kRetrievalKind;
  ckpt.settings = {{"grid", std::to_string(config_.grid)},
                   {"text_buckets", std::to_string(config_.text_buckets)},
                   {"embed_dim", std::to_string(config_.embed_dim)},
                   {"seed", std::to_string(config_.seed)}};
  ckpt.put("image.w", weights_.image_w);
  ckpt.put("image.b", weights_.image_b);
  ckpt.put("text.w", weights_.text_w);
  ckpt.put("text.b", weights_.text_b);
  save_checkpoint(ckpt, path);
}

ToyRetrievalEncoder ToyRetrievalEncoder::load(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path, kRetrievalKind);
  RetrievalConfig cfg;
  try {
    cfg.grid = std::stoi(ckpt.setting("grid"));
    cfg.text_buckets = std::stoi(ckpt.setting("text_buckets"));
    cfg.embed_dim = std::stoi(ckpt.setting("embed_dim"));
    cfg.seed = std::stoull(ckpt.setting("seed"));
  } catch (const std::logic_error& e) {
    throw IoError(path.string() + ": bad retrieval settings: " + e.what());
  }
  ToyRetrievalEncoder enc(cfg);
  const int image_in = 3 * cfg.grid * cfg.grid;
  enc.weights_.image_w = ckpt.matrix("image.w", cfg.embed_dim, image_in);
  enc.weights_.image_b = ckpt.vector("image.b", cfg.embed_dim);
  enc.weights_.text_w = ckpt.matrix("text.w", cfg.embed_dim, cfg.text_buckets);
  enc.weights_.text_b = ckpt.vector("text.b", cfg.embed_dim);
  return enc;
}

namespace {

// Loss and dL/dscore for image-to-text in-batch ranking.
double mnrl_scores(const std::vector<Eigen::VectorXd>& images, const std::vector<Eigen::VectorXd>& texts, double scale,
                   Eigen::MatrixXd* dscore) {
  const auto n = images.size();
  if (n < 2) throw InvalidArgument("contrastive loss needs a batch of at least 2 (in-batch negatives)");
  if (texts.size() != n) throw InvalidArgument("contrastive loss: image and text batch sizes differ");
  const auto b = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd s(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < b; ++j) s(i, j) = scale * images[i].dot(texts[j]);
  }
  double loss = 0.0;
  if (dscore) dscore->setZero(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const double m = s.row(i).maxCoeff();
    const Eigen::RowVectorXd ex = (s.row(i).array() - m).exp();
    const double z = ex.sum();
    loss += m + std::log(z) - s(i, i);
    if (dscore) {
      dscore->row(i) = ex / z / static_cast<double>(b);
      (*dscore)(i, i) -= 1.0 / static_cast<double>(b);
    }
  }
  return loss / static_cast<double>(b);
}

}  // namespace

double mnrl_loss(const std::vector<Eigen::VectorXd>& images, const std::vector<Eigen::VectorXd>& texts, double scale) {
  return mnrl_scores(images, texts, scale, nullptr);
}

double retrieval_step(const ToyRetrievalEncoder& encoder, const std::vector<const RgbImage*>& images,
                      const std::vector<std::string>& labels, double scale, ToyRetrievalEncoder::Weights* grad) {
  if (images.size() != labels.size()) throw InvalidArgument("retrieval batch: images and labels differ in count");
  const auto& w = encoder.weights();
  const auto n = images.size();
  std::vector<Eigen::VectorXd> fi(n), ft(n), zi(n), zt(n), ei(n), et(n);
  for (std::size_t k = 0; k < n; ++k) {
    fi[k] = encoder.image_descriptor(*images[k]);
    ft[k] = encoder.text_descriptor(labels[k]);
    zi[k] = w.image_w * fi[k] + w.image_b;
    zt[k] = w.text_w * ft[k] + w.text_b;
    ei[k] = normalized(zi[k]);
    et[k] = normalized(zt[k]);
  }
  Eigen::MatrixXd ds;
  const double loss = mnrl_scores(ei, et, scale, grad ? &ds : nullptr);
  if (grad) {
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd dei = Eigen::VectorXd::Zero(ei[i].size());
      Eigen::VectorXd det = Eigen::VectorXd::Zero(et[i].size());
      for (std::size_t j = 0; j < n; ++j) {
        dei += scale * ds(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * et[j];
        det += scale * ds(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) * ei[j];
      }
      const Eigen::VectorXd dzi = normalize_backward(zi[i], ei[i], dei);
      const Eigen::VectorXd dzt = normalize_backward(zt[i], et[i], det);
      grad->image_w.noalias() += dzi * fi[i].transpose();
      grad->image_b += dzi;
      grad->text_w.noalias() += dzt * ft[i].transpose();
      grad->text_b += dzt;
    }
  }
  return loss;
}

std::vector<RetrievalPair> filter_retrieval_pairs(const std::vector<RetrievalPair>& pairs) {
  std::vector<RetrievalPair> out;
  for (const auto& p : pairs) {
    auto words = text::split_words(text::to_lower(p.label));
    if (words.empty() || words.front().starts_with("un")) continue;
    std::size_t first = 0;
    while (first < words.size() && is_compass_word(words[first])) ++first;
    if (first == words.size()) continue;
    out.push_back({p.image, text::join({words.begin() + static_cast<std::ptrdiff_t>(first), words.end()}, " ")});
  }
  return out;
}

RetrievalTrainResult train_retrieval(ToyRetrievalEncoder& encoder, const std::vector<RetrievalPair>& pairs,
                                     const RetrievalSchedule& schedule) {
  if (schedule.batch_size < 2) throw InvalidArgument("train_retrieval: batch size must be at least 2");
  if (pairs.size() < 2) throw InvalidArgument("train_retrieval: need at least 2 pairs");
  if (schedule.epochs < 1) throw InvalidArgument("train_retrieval: epochs must be positive");
  std::mt19937_64 rng(schedule.seed);
  auto optimizer = nn::make_optimizer(schedule.optimizer, schedule.lr);
  RetrievalTrainResult result;
  std::vector<std::size_t> order(pairs.size());
  const auto batch = static_cast<std::size_t>(schedule.batch_size);
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      // A trailing singleton has no negatives.
      if (end - start < 2) continue;
      std::vector<const RgbImage*> imgs;
      std::vector<std::string> labels;
      for (std::size_t k = start; k < end; ++k) {
        imgs.push_back(pairs[order[k]].image);
        labels.push_back(pairs[order[k]].label);
      }
      auto grad = encoder.zero_weights();
      const double loss = retrieval_step(encoder, imgs, labels, schedule.scale, &grad);
      if (!std::isfinite(loss)) throw Error("train_retrieval diverged: non-finite loss");
      auto& w = encoder.weights();
      const std::vector<nn::Param> params{nn::param_of(w.image_w, grad.image_w), nn::param_of(w.image_b, grad.image_b),
                                          nn::param_of(w.text_w, grad.text_w), nn::param_of(w.text_b, grad.text_b)};
      optimizer->step(params);
      total += loss;
      ++steps;
    }
    result.steps += steps;
    result.epoch_mean_loss.push_back(steps ? total / static_cast<double>(steps) : 0.0);
    spdlog::debug("finetune-clip epoch {}: mean loss {:.5f}", epoch, result.epoch_mean_loss.back());
  }
  return result;
}

RetrievedTerms retrieve_terms(const RgbImage& image, const std::vector<std::string>& vocab, int k,
                              const RetrievalEncoder& encoder) {
  if (vocab.empty()) throw InvalidArgument("retrieve_terms: empty vocabulary");
  if (k < 1) throw InvalidArgument("retrieve_terms: k must be at least 1");
  const Eigen::VectorXd e = encoder.embed_image(image);
  RetrievedTerms out;
  out.ranked.reserve(vocab.size());
  for (const auto& term : vocab) out.ranked.emplace_back(term, e.dot(encoder.embed_text(term)));
  std::sort(out.ranked.begin(), out.ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<std::size_t>(k) > vocab.size()) {
    out.truncated = true;
  } else {
    out.ranked.resize(static_cast<std::size_t>(k));
  }
  return out;
}

}  // namespace halo
