#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "halo/error.hpp"
#include "halo/retrieval.hpp"
#include "halo/toy_sets.hpp"
#include "test_util.hpp"

namespace halo {
namespace {

// Image embedding depends only on the mean red level; text embeddings are fixed.
class TableEncoder : public RetrievalEncoder {
 public:
  Eigen::VectorXd embed_image(const RgbImage&) const override { return Eigen::Vector2d(1.0, 0.0); }
  Eigen::VectorXd embed_text(std::string_view text) const override {
    const double s = text == "dome" ? 0.9 : 0.1;
    return Eigen::Vector2d(s, std::sqrt(1.0 - s * s));
  }
};

TEST(RetrieveTerms, RanksAndBreaksTies) {
  const RgbImage img(4, 4);
  TableEncoder enc;
  const std::vector<std::string> vocab{"window", "arch", "dome", "portal"};
  const auto top1 = retrieve_terms(img, vocab, 1, enc);
  ASSERT_EQ(top1.ranked.size(), 1u);
  EXPECT_EQ(top1.ranked[0].first, "dome");
  EXPECT_NEAR(top1.ranked[0].second, 0.9, 1e-12);
  EXPECT_FALSE(top1.truncated);

  const auto all = retrieve_terms(img, vocab, 4, enc);
  ASSERT_EQ(all.ranked.size(), 4u);
  EXPECT_EQ(all.ranked[1].first, "arch");
  EXPECT_EQ(all.ranked[2].first, "portal");
  EXPECT_EQ(all.ranked[3].first, "window");
  EXPECT_FALSE(all.truncated);

  const auto over = retrieve_terms(img, vocab, 9, enc);
  EXPECT_EQ(over.ranked.size(), 4u);
  EXPECT_TRUE(over.truncated);
  EXPECT_THROW(retrieve_terms(img, {}, 1, enc), InvalidArgument);
  EXPECT_THROW(retrieve_terms(img, vocab, 0, enc), InvalidArgument);
}

TEST(Mnrl, MatchedBatchBeatsShuffled) {
  std::vector<Eigen::VectorXd> e;
  for (int i = 0; i < 4; ++i) e.push_back(Eigen::Vector4d::Unit(i));
  std::vector<Eigen::VectorXd> shuffled{e[1], e[2], e[3], e[0]};
  EXPECT_LT(mnrl_loss(e, e), mnrl_loss(e, shuffled));
  // Orthonormal, scale 20: each row is -20 + log(e^20 + 3).
  EXPECT_NEAR(mnrl_loss(e, e), std::log1p(3.0 * std::exp(-20.0)), 1e-12);
  EXPECT_THROW(mnrl_loss({e[0]}, {e[0]}), InvalidArgument);
}

TEST(Retrieval, EmbeddingsAreUnitNorm) {
  ToyRetrievalEncoder enc;
  const auto set = make_toy_retrieval_set(1, 3);
  for (const auto& img : set.images) EXPECT_NEAR(enc.embed_image(img).norm(), 1.0, 1e-12);
  for (const auto& t : set.vocab) EXPECT_NEAR(enc.embed_text(t).norm(), 1.0, 1e-12);
}

TEST(Retrieval, GradientMatchesFiniteDifferences) {
  RetrievalConfig cfg;
  cfg.grid = 2;
  cfg.text_buckets = 16;
  cfg.embed_dim = 3;
  ToyRetrievalEncoder enc(cfg);
  const auto set = make_toy_retrieval_set(1, 4, 8, 3);
  std::vector<const RgbImage*> imgs;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    imgs.push_back(&set.images[i]);
    labels.push_back(set.vocab[set.labels[i]]);
  }
  auto grad = enc.zero_weights();
  retrieval_step(enc, imgs, labels, 5.0, &grad);

  auto& w = enc.weights();
  std::vector<std::pair<Eigen::MatrixXd*, Eigen::MatrixXd*>> mats{{&w.image_w, &grad.image_w}, {&w.text_w, &grad.text_w}};
  const double h = 1e-6;
  double worst = 0.0;
  for (auto [param, g] : mats) {
    for (Eigen::Index i = 0; i < param->size(); ++i) {
      const double keep = param->data()[i];
      param->data()[i] = keep + h;
      const double up = retrieval_step(enc, imgs, labels, 5.0, nullptr);
      param->data()[i] = keep - h;
      const double down = retrieval_step(enc, imgs, labels, 5.0, nullptr);
      param->data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double a = g->data()[i];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Retrieval, ToyTrainingImprovesHeldOutRecall) {
  ToyRetrievalEncoder enc;
  const auto train = make_toy_retrieval_set(12, 100);
  const auto held_out = make_toy_retrieval_set(6, 200);
  const double before = toy_recall_at_k(held_out, enc, 1);
  RetrievalSchedule schedule;
  schedule.epochs = 40;
  schedule.lr = 0.01;
  schedule.batch_size = 16;
  schedule.seed = 5;
  const auto result = train_retrieval(enc, train.pairs(), schedule);
  EXPECT_LT(result.epoch_mean_loss.back(), result.epoch_mean_loss.front());
  const double after = toy_recall_at_k(held_out, enc, 1);
  EXPECT_GE(after - before, 0.25) << "before " << before << " after " << after;
  EXPECT_GE(toy_recall_at_k(held_out, enc, 5), 0.8);

  // Own label beats every other label for each held-out image.
  std::size_t own_best = 0;
  for (std::size_t i = 0; i < held_out.images.size(); ++i) {
    const auto e = enc.embed_image(held_out.images[i]);
    const double own = e.dot(enc.embed_text(held_out.vocab[held_out.labels[i]]));
    bool best = true;
    for (std::size_t j = 0; j < held_out.vocab.size(); ++j) {
      if (j != held_out.labels[i] && e.dot(enc.embed_text(held_out.vocab[j])) >= own) best = false;
    }
    own_best += best ? 1 : 0;
  }
  EXPECT_EQ(own_best, held_out.images.size());
}

TEST(Retrieval, BatchOfOneIsAnError) {
  ToyRetrievalEncoder enc;
  const auto set = make_toy_retrieval_set(1, 1, 8, 2);
  RetrievalSchedule schedule;
  schedule.batch_size = 1;
  EXPECT_THROW(train_retrieval(enc, set.pairs(), schedule), InvalidArgument);
  EXPECT_THROW(retrieval_step(enc, {&set.images[0]}, {"dome"}, 20.0, nullptr), InvalidArgument);
}

TEST(Retrieval, Defaults) {
  const RetrievalSchedule s;
  EXPECT_DOUBLE_EQ(s.lr, 1e-6);
  EXPECT_EQ(s.batch_size, 128);
  EXPECT_EQ(s.epochs, 5);
}

TEST(Retrieval, PairFiltering) {
  const RgbImage img(2, 2);
  const std::vector<RetrievalPair> in{{&img, "unknown"},      {&img, "Undetermined part"}, {&img, "north eastern portal"},
                                      {&img, "southern"},     {&img, "rose window"},       {&img, "window north"}};
  const auto out = filter_retrieval_pairs(in);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].label, "portal");
  EXPECT_EQ(out[1].label, "rose window");
  EXPECT_EQ(out[2].label, "window north");
}

TEST(Retrieval, CheckpointRoundTrip) {
  testing::TempDir dir;
  ToyRetrievalEncoder enc;
  enc.weights().text_b(0) = 0.5;
  enc.save(dir.path() / "clip.ckpt");
  const auto back = ToyRetrievalEncoder::load(dir.path() / "clip.ckpt");
  EXPECT_EQ(back.checksum(), enc.checksum());
}

}  // namespace
}  // namespace halo
