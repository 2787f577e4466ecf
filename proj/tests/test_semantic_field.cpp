#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "halo/error.hpp"
#include "halo/semantic_field.hpp"
#include "halo/synthetic.hpp"
#include "test_util.hpp"

namespace halo {
namespace {

FieldConfig tiny_config() {
  FieldConfig c;
  c.bounds = {Eigen::Vector3d(-1, -1, -1), Eigen::Vector3d(1, 1, 1)};
  c.grid_resolution = 4;
  c.feature_channels = 3;
  c.position_bands = 2;
  c.direction_bands = 1;
  c.hidden = 6;
  c.color_hidden = 5;
  c.appearance_dim = 2;
  c.samples_per_ray = 8;
  c.weight_threshold = 0.0;  // keep every sample so finite differences see one branch
  c.initial_alpha = 0.2;
  c.seed = 11;
  return c;
}

Ray ray_between(const Eigen::Vector3d& from, const Eigen::Vector3d& to, const Aabb& box) {
  const Eigen::Vector3d d = (to - from).normalized();
  Ray r;
  r.origin = from;
  r.direction = d;
  const auto hit = intersect_aabb(from, d, box);
  if (hit) {
    r.near = hit->first;
    r.far = hit->second;
  }
  return r;
}

std::vector<TrainingRay> four_rays(const Aabb& box) {
  std::vector<TrainingRay> b(4);
  b[0].ray = ray_between({-3, 0.1, 0.2}, {1, -0.2, 0.1}, box);
  b[1].ray = ray_between({0.3, -3, 0.0}, {0.1, 1, 0.4}, box);
  b[2].ray = ray_between({0.2, 0.4, 3}, {-0.3, 0.0, -1}, box);
  b[3].ray = ray_between({2.5, 2.5, 0.5}, {-1, -1, -0.2}, box);
  for (std::size_t i = 0; i < b.size(); ++i) {
    b[i].view = i % 2;
    b[i].color = Eigen::Vector3d(0.2 + 0.1 * i, 0.7 - 0.1 * i, 0.5);
    b[i].target = i % 2 == 0 ? 1.0 : 0.0;
  }
  return b;
}

// Relative error between analytic and central-difference gradients over a
// subset of coordinates of every parameter tensor.
template <typename LossFn>
double fd_relative_error(std::vector<nn::Param> params, LossFn&& loss, std::size_t per_tensor, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double diff = 0.0, scale = 0.0;
  for (const auto& p : params) {
    std::uniform_int_distribution<std::size_t> pick(0, p.value.size() - 1);
    for (std::size_t n = 0; n < std::min(per_tensor, p.value.size()); ++n) {
      const std::size_t i = per_tensor >= p.value.size() ? n : pick(rng);
      const double h = 1e-6;
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = loss();
      p.value[i] = saved - h;
      const double down = loss();
      p.value[i] = saved;
      const double fd = (up - down) / (2 * h);
      diff += (fd - p.grad[i]) * (fd - p.grad[i]);
      scale += std::max(fd * fd, p.grad[i] * p.grad[i]);
    }
  }
  return scale > 0 ? std::sqrt(diff / scale) : 0.0;
}

void randomize_density(RadianceBackbone& bb, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < bb.density.size(); ++i) bb.density(i) = n(rng);
}

TEST(Field, PositionalEncoding) {
  const auto pe = positional_encoding({0.5, -0.25, 0.0}, 2);
  ASSERT_EQ(pe.size(), 15);
  EXPECT_DOUBLE_EQ(pe(0), 0.5);
  EXPECT_NEAR(pe(3), std::sin(M_PI * 0.5), 1e-15);
  EXPECT_NEAR(pe(6), std::cos(M_PI * 0.5), 1e-15);
  EXPECT_NEAR(pe(10), std::sin(2 * M_PI * -0.25), 1e-15);
}

TEST(Field, RaysAndBounds) {
  const Aabb box{Eigen::Vector3d(-1, -1, -1), Eigen::Vector3d(1, 1, 1)};
  const auto hit = intersect_aabb({-3, 0, 0}, {1, 0, 0}, box);
  ASSERT_TRUE(hit);
  EXPECT_DOUBLE_EQ(hit->first, 2.0);
  EXPECT_DOUBLE_EQ(hit->second, 4.0);
  EXPECT_FALSE(intersect_aabb({-3, 2, 0}, {1, 0, 0}, box));
  const auto inside = intersect_aabb({0, 0, 0}, {0, 0, 1}, box);
  EXPECT_DOUBLE_EQ(inside->first, 0.0);
  const synthetic::Scene scene(synthetic::SceneSpec{});
  const auto& cam = scene.views()[0].camera;
  const auto r = camera_ray(cam, 31.5, 17.25, box);
  EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
  EXPECT_LT(r.near, r.far);
}

TEST(Field, RenderWeightsAreTransmittanceWeighted) {
  double t = 0;
  const auto w = render_weights({1.0, 2.0, 0.0, 3.0}, 0.5, &t);
  double sum = 0;
  double trans = 1.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double a = 1.0 - std::exp(-std::vector<double>{1.0, 2.0, 0.0, 3.0}[i] * 0.5);
    EXPECT_NEAR(w[i], trans * a, 1e-15);
    trans *= 1.0 - a;
    sum += w[i];
  }
  EXPECT_NEAR(t, trans, 1e-15);
  EXPECT_NEAR(sum + t, 1.0, 1e-15);
}

TEST(Field, DensityIsNonNegativeAndStartsNearInitialAlpha) {
  FieldConfig c = tiny_config();
  const RadianceBackbone bb(c, 2);
  const Ray r = ray_between({-3, 0, 0}, {1, 0, 0}, c.bounds);
  const auto tr = trace_ray(bb, r);
  for (std::size_t i = 0; i < tr.alpha.size(); ++i) {
    EXPECT_GE(tr.sigma[i], 0.0);
    // The shift is tuned for the bounds diagonal; an axis ray takes longer steps.
    EXPECT_GT(tr.alpha[i], 0.2);
    EXPECT_LT(tr.alpha[i], 0.3);
  }
}

TEST(Field, RgbStepGradientMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  RadianceBackbone bb(cfg, 2);
  randomize_density(bb, 5);
  const auto batch = four_rays(cfg.bounds);
  const std::vector<double> jit{0.3, 0.7, 0.5, 0.1};
  bb.zero_grad();
  rgb_step(bb, batch, true, &jit, 0.1, 0.5, 0.3);
  auto params = bb.grid_params();
  for (auto& p : bb.mlp_params()) params.push_back(p);
  const double err = fd_relative_error(params, [&] { return rgb_step(bb, batch, false, &jit, 0.1, 0.5, 0.3); }, 40, 3);
  EXPECT_LE(err, 1e-4);
}

// Independent evaluation of the distortion term by the double sum.
TEST(Field, DistortionTermMatchesDoubleSum) {
  const auto cfg = tiny_config();
  RadianceBackbone bb(cfg, 2);
  randomize_density(bb, 8);
  const auto batch = four_rays(cfg.bounds);
  const std::vector<double> jit{0.3, 0.7, 0.5, 0.1};
  const double lambda = 0.7;
  double expected = 0.0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto tr = trace_ray(bb, batch[r].ray, jit[r]);
    const auto n = static_cast<double>(tr.weight.size());
    for (std::size_t i = 0; i < tr.weight.size(); ++i) {
      for (std::size_t j = 0; j < tr.weight.size(); ++j) {
        const double si = (static_cast<double>(i) + jit[r]) / n, sj = (static_cast<double>(j) + jit[r]) / n;
        expected += tr.weight[i] * tr.weight[j] * std::abs(si - sj);
      }
      expected += tr.weight[i] * tr.weight[i] / (3.0 * n);
    }
  }
  expected *= lambda / static_cast<double>(batch.size());
  const double with = rgb_step(bb, batch, false, &jit, 0.0, lambda);
  const double without = rgb_step(bb, batch, false, &jit, 0.0, 0.0);
  EXPECT_NEAR(with - without, expected, 1e-12);
}

TEST(Field, SemanticStepGradientMatchesFiniteDifferencesOnFourRays) {
  const auto cfg = tiny_config();
  RadianceBackbone bb(cfg, 2);
  randomize_density(bb, 6);
  SemanticHead head(cfg.hidden, 9);
  // Zero biases put dead-feature columns exactly on the ReLU kink.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto* d : {&head.l1, &head.l2, &head.l3, &head.out}) {
    for (Eigen::Index i = 0; i < d->b.size(); ++i) d->b(i) = u(rng);
  }
  const auto batch = four_rays(cfg.bounds);
  head.zero_grad();
  semantic_step(bb, head, batch, true);
  const double err = fd_relative_error(head.params(), [&] { return semantic_step(bb, head, batch, false); }, 60, 4);
  EXPECT_LE(err, 1e-4);
}

// Head whose positive probability is `p` everywhere.
SemanticHead constant_head(int input, double p) {
  SemanticHead head(input, 1, 8, 8, 4);
  head.out.w.setZero();
  head.out.b << 0.0, std::log(p / (1.0 - p));
  return head;
}

TEST(Field, SingleOpaqueSampleRendersHeadProbability) {
  auto cfg = tiny_config();
  cfg.samples_per_ray = 1;
  cfg.weight_threshold = 1e-4;
  RadianceBackbone bb(cfg, 1);
  bb.density.setConstant(200.0);
  const auto head = constant_head(cfg.hidden, 0.8);
  const Ray r = ray_between({-3, 0.1, 0.2}, {1, 0, 0}, cfg.bounds);
  const auto tr = trace_ray(bb, r);
  ASSERT_EQ(tr.weight.size(), 1u);
  EXPECT_EQ(tr.weight[0], 1.0);
  EXPECT_NEAR(render_semantic(bb, head, r), 0.8, 1e-12);
}

TEST(Field, EmptySpaceRendersZero) {
  auto cfg = tiny_config();
  cfg.weight_threshold = 1e-4;
  RadianceBackbone bb(cfg, 1);
  bb.density.setConstant(-1000.0);
  const auto head = constant_head(cfg.hidden, 0.9);
  EXPECT_EQ(render_semantic(bb, head, ray_between({-3, 0, 0}, {1, 0, 0}, cfg.bounds)), 0.0);
  Ray miss;
  miss.origin = {5, 5, 5};
  miss.direction = {1, 0, 0};
  EXPECT_FALSE(miss.hits());
  EXPECT_EQ(render_semantic(bb, head, miss), 0.0);
}

TEST(Field, RenderedSemanticsStayInUnitInterval) {
  auto cfg = tiny_config();
  cfg.weight_threshold = 1e-4;
  RadianceBackbone bb(cfg, 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 4.0);
  for (Eigen::Index i = 0; i < bb.density.size(); ++i) bb.density(i) = n(rng);
  const SemanticHead head(cfg.hidden, 3, 16, 16, 8);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 200; ++k) {
    const Eigen::Vector3d from(3 * u(rng), 3 * u(rng), 3);
    const Eigen::Vector3d to(u(rng), u(rng), -1);
    const double s = render_semantic(bb, head, ray_between(from, to, cfg.bounds));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Field, HeadPairSumsToOne) {
  const SemanticHead head(6, 4);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  Eigen::MatrixXd h(6, 50);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = n(rng);
  const auto p = head.probabilities(h);
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    EXPECT_NEAR(p(0, k) + p(1, k), 1.0, 1e-6);
    EXPECT_GE(p(1, k), 0.0);
    EXPECT_LE(p(1, k), 1.0);
  }
  EXPECT_EQ(head.l1.out(), 256);
  EXPECT_EQ(head.l2.out(), 256);
  EXPECT_EQ(head.l3.out(), 128);
  EXPECT_EQ(head.out.out(), 2);
}

TEST(Field, CheckpointsRoundTrip) {
  testing::TempDir dir;
  const auto cfg = tiny_config();
  RadianceBackbone bb(cfg, 3);
  randomize_density(bb, 1);
  bb.save(dir.path() / "bb.ckpt");
  const auto back = RadianceBackbone::load(dir.path() / "bb.ckpt");
  EXPECT_EQ(back.checksum(), bb.checksum());
  EXPECT_EQ(back.config.samples_per_ray, cfg.samples_per_ray);
  EXPECT_EQ(back.appearance_count(), 3u);
  const SemanticHead head(cfg.hidden, 5, 16, 8, 4);
  head.save(dir.path() / "head.ckpt");
  EXPECT_EQ(SemanticHead::load(dir.path() / "head.ckpt").checksum(), head.checksum());
  EXPECT_THROW(SemanticHead::load(dir.path() / "bb.ckpt"), Error);
}

TEST(Field, Errors) {
  auto cfg = tiny_config();
  EXPECT_THROW(RadianceBackbone(cfg, 0), InvalidArgument);
  cfg.bounds.hi = cfg.bounds.lo;
  EXPECT_THROW(RadianceBackbone(cfg, 1), InvalidArgument);
  RadianceBackbone bb(tiny_config(), 1);
  EXPECT_THROW(train_rgb_field(bb, {}), InvalidArgument);
  SemanticHead head(tiny_config().hidden, 1, 8, 8, 4);
  EXPECT_THROW(train_semantic_head(bb, head, {}), InvalidArgument);
  SemanticHead wrong(3, 1, 8, 8, 4);
  RgbImage img(4, 4);
  const SemanticView sv{{"a", Camera{}, &img}, 0, ProbMap(4, 4)};
  EXPECT_THROW(train_semantic_head(bb, wrong, {sv}), InvalidArgument);
}

TEST(ViewScoring, FormulaExamples) {
  ViewScore s;
  s.m = 0.2;
  s.c = 0.9;
  s.x = 0.0;
  EXPECT_DOUBLE_EQ(s.s(), 1.1);
  // 95% coverage trips the penalty.
  ProbMap big(20, 20, 1.0);
  for (int x = 0; x < 20; ++x) big.at(x, 0) = 0.0;
  const auto scored = score_view("a", big, big);
  EXPECT_EQ(scored.x, 1.0);
  EXPECT_DOUBLE_EQ(scored.s(), scored.m + scored.c - 1.0);
  EXPECT_DOUBLE_EQ(scored.c, 1.0);
  EXPECT_DOUBLE_EQ(scored.m, 0.0);
}

TEST(ViewScoring, MarginAndOverlap) {
  ProbMap facade(10, 10);
  for (int y = 2; y < 6; ++y) {
    for (int x = 3; x < 8; ++x) facade.at(x, y) = 1.0;
  }
  facade.at(0, 9) = 1.0;  // stray pixel, not the largest component
  ProbMap rerender(10, 10);
  for (int y = 2; y < 6; ++y) {
    for (int x = 5; x < 10; ++x) rerender.at(x, y) = 1.0;
  }
  const auto s = score_view("v", facade, rerender);
  EXPECT_EQ(s.x, 0.0);
  EXPECT_DOUBLE_EQ(s.m, 0.2);  // left margin 3/10, right 2/10, top 2/10, bottom 4/10
  EXPECT_DOUBLE_EQ(s.c, 12.0 / 20.0);
}

TEST(ViewScoring, SelectViews) {
  std::vector<ViewScore> scores(3);
  scores[0] = {"b", 0.1, 0.5, 0};
  scores[1] = {"a", 0.1, 0.5, 0};
  scores[2] = {"c", 0.3, 0.9, 0};
  EXPECT_EQ(select_views(scores, 2), (std::vector<std::string>{"c", "a"}));
  EXPECT_EQ(select_views(scores, 150).size(), 3u);
  EXPECT_EQ(rank_by_overlap({{"x", ProbMap(2, 2, 0.5)}, {"y", ProbMap(2, 2, 0.5)}, {"z", ProbMap(2, 2, 0.9)}})[0].first,
            "z");
}

TEST(ViewScoring, LargestComponentIsFourConnected) {
  ProbMap m(4, 4);
  m.at(0, 0) = m.at(1, 1) = m.at(2, 1) = m.at(2, 2) = 1.0;
  const auto c = largest_component(m);
  EXPECT_EQ(c.count(), 3u);
  EXPECT_FALSE(c.at(0, 0));
}

// Trained once and shared by the slower tests below.
struct TrainedScene {
  synthetic::SceneSpec spec;
  std::unique_ptr<synthetic::Scene> scene;
  std::vector<RgbImage> images;
  std::vector<PosedView> views;
  RadianceBackbone backbone;
  Camera held_out;
  double seconds = 0.0;

  static const TrainedScene& get() {
    static const TrainedScene t = [] {
      TrainedScene s;
      s.spec.regions = {{"window", synthetic::kSouth, 0.0, 0.0, 0.5, 1.0},
                        {"window", synthetic::kNorth, 0.0, 0.0, 0.5, 1.0},
                        {"window", synthetic::kEast, 0.0, 0.0, 0.5, 1.0},
                        {"window", synthetic::kWest, 0.0, 0.0, 0.5, 1.0}};
      s.spec.ring_views = 20;
      s.spec.closeups = false;
      s.spec.width = s.spec.height = 32;
      s.spec.focal = 35;
      s.spec.illumination_jitter = 0.0;
      s.spec.texture_contrast = 0.0;
      s.scene = std::make_unique<synthetic::Scene>(s.spec);
      for (const auto& v : s.scene->views()) s.images.push_back(s.scene->render(v.camera, v.gain));
      for (std::size_t i = 0; i < s.images.size(); ++i) {
        s.views.push_back({s.scene->views()[i].id, s.scene->views()[i].camera, &s.images[i]});
      }
      FieldConfig cfg;
      cfg.bounds = s.scene->field_bounds();
      cfg.grid_resolution = 32;
      cfg.samples_per_ray = 48;
      cfg.seed = 3;
      s.backbone = RadianceBackbone(cfg, s.views.size());
      RgbTrainConfig train;
      train.iterations = 1000;
      train.batch_rays = 256;
      train.lr = 5e-3;
      train.grid_lr = 0.1;
      train.seed = 1;
      const auto t0 = std::chrono::steady_clock::now();
      train_rgb_field(s.backbone, s.views, train);
      s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      s.held_out = s.scene->look_at({2.4 * std::cos(1.0), 2.4 * std::sin(1.0), 1.1}, s.spec.center);
      return s;
    }();
    return t;
  }

  Eigen::VectorXd mean_appearance() const { return backbone.appearance.rowwise().mean(); }
};

double psnr(const RgbImage& a, const RgbImage& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.bytes().size(); ++i) {
    const double d = (a.bytes()[i] - b.bytes()[i]) / 255.0;
    se += d * d;
  }
  return 10.0 * std::log10(1.0 / (se / static_cast<double>(a.bytes().size())));
}

void check_HeldOutViewPsnrAbove20() {
  const auto& t = TrainedScene::get();
  const auto truth = t.scene->render(t.held_out);
  const auto rendered = render_view(t.backbone, nullptr, t.held_out, 32, 32, t.mean_appearance());
  EXPECT_GT(psnr(rendered.rgb, truth), 20.0) << "rgb training took " << t.seconds << " s";
}

TEST(FieldTraining, SingleColorSceneLossVanishes) {
  RgbImage img(8, 8);
  for (auto& b : img.bytes()) b = 128;
  synthetic::Scene scene(synthetic::SceneSpec{});
  std::vector<PosedView> views;
  for (int i = 0; i < 2; ++i) views.push_back({"v", scene.views()[static_cast<std::size_t>(i)].camera, &img});
  FieldConfig cfg;
  cfg.bounds = scene.field_bounds();
  cfg.grid_resolution = 8;
  cfg.samples_per_ray = 16;
  RadianceBackbone bb(cfg, 2);
  RgbTrainConfig train;
  train.iterations = 150;
  train.batch_rays = 64;
  train.lr = 1e-2;
  const auto r = train_rgb_field(bb, views, train);
  EXPECT_LT(r.losses.back(), 1e-3);
  EXPECT_LT(r.losses.back(), r.losses.front());
}

void check_HeadTrainingFreezesBackbone() {
  const auto& t = TrainedScene::get();
  RadianceBackbone bb = t.backbone;
  const auto before = bb.checksum();
  const auto rgb_before = render_view(bb, nullptr, t.held_out, 16, 16, t.mean_appearance()).rgb;
  SemanticHead head(bb.config.hidden, 2);
  std::vector<SemanticView> sv;
  for (std::size_t i = 0; i < 4; ++i) sv.push_back({t.views[i], i, ProbMap(32, 32, 1.0)});
  HeadTrainConfig cfg;
  cfg.iterations = 5;
  cfg.batch_rays = 64;
  cfg.lr = 1e-3;
  const auto head_before = head.checksum();
  train_semantic_head(bb, head, sv, cfg);
  EXPECT_NE(head.checksum(), head_before);
  EXPECT_EQ(bb.checksum(), before);
  EXPECT_EQ(render_view(bb, nullptr, t.held_out, 16, 16, t.mean_appearance()).rgb, rgb_before);
}

void check_AllOnesTargetsSaturateForeground() {
  const auto& t = TrainedScene::get();
  SemanticHead head(t.backbone.config.hidden, 4);
  std::vector<SemanticView> sv;
  for (std::size_t i = 0; i < t.views.size(); ++i) sv.push_back({t.views[i], i, ProbMap(32, 32, 1.0)});
  HeadTrainConfig cfg;
  cfg.iterations = 100;
  cfg.batch_rays = 128;
  cfg.lr = 1e-2;
  train_semantic_head(t.backbone, head, sv, cfg);
  const auto rendered = render_view(t.backbone, &head, t.held_out, 32, 32, t.mean_appearance());
  const auto fg = t.scene->mask(t.held_out, "");
  std::size_t n = 0, ok = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      if (!fg.at(x, y)) continue;
      ++n;
      ok += rendered.semantic.at(x, y) >= 0.95 ? 1 : 0;
    }
  }
  ASSERT_GT(n, 50u);
  EXPECT_GE(static_cast<double>(ok) / static_cast<double>(n), 0.95);
}

void check_ZeroMasksRenderNearZero() {
  const auto& t = TrainedScene::get();
  SemanticHead head(t.backbone.config.hidden, 4);
  std::vector<SemanticView> sv;
  for (std::size_t i = 0; i < t.views.size(); ++i) sv.push_back({t.views[i], i, ProbMap(32, 32, 0.0)});
  HeadTrainConfig cfg;
  cfg.iterations = 60;
  cfg.batch_rays = 128;
  cfg.lr = 1e-3;
  train_semantic_head(t.backbone, head, sv, cfg);
  const auto rendered = render_view(t.backbone, &head, t.held_out, 32, 32, t.mean_appearance());
  for (double v : rendered.semantic.values()) EXPECT_LT(v, 0.05);
}

void check_HeadTrainingIsDeterministic() {
  const auto& t = TrainedScene::get();
  std::vector<SemanticView> sv;
  for (std::size_t i = 0; i < 3; ++i) sv.push_back({t.views[i], i, to_probmap(t.scene->mask(t.views[i].camera, "window"))});
  HeadTrainConfig cfg;
  cfg.iterations = 5;
  cfg.batch_rays = 64;
  cfg.lr = 1e-3;
  SemanticHead a(t.backbone.config.hidden, 4), b(t.backbone.config.hidden, 4);
  train_semantic_head(t.backbone, a, sv, cfg);
  train_semantic_head(t.backbone, b, sv, cfg);
  EXPECT_EQ(a.checksum(), b.checksum());
}

// One process trains the shared field once; the checks run in sequence.
TEST(FieldTraining, TrainedFieldProperties) {
  {
    SCOPED_TRACE("HeldOutViewPsnrAbove20");
    check_HeldOutViewPsnrAbove20();
  }
  {
    SCOPED_TRACE("HeadTrainingFreezesBackbone");
    check_HeadTrainingFreezesBackbone();
  }
  {
    SCOPED_TRACE("AllOnesTargetsSaturateForeground");
    check_AllOnesTargetsSaturateForeground();
  }
  {
    SCOPED_TRACE("ZeroMasksRenderNearZero");
    check_ZeroMasksRenderNearZero();
  }
  {
    SCOPED_TRACE("HeadTrainingIsDeterministic");
    check_HeadTrainingIsDeterministic();
  }
}

}  // namespace
}  // namespace halo
