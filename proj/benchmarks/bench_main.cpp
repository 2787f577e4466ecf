#include <benchmark/benchmark.h>

#include <memory>
#include <random>
#include <vector>

#include "halo/bench_eval.hpp"
#include "halo/geometry.hpp"
#include "halo/semantic_field.hpp"
#include "halo/synthetic.hpp"
#include "halo/vlm_adapt.hpp"

using namespace halo;

namespace {

void BM_AveragePrecision(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(n);
  std::unique_ptr<bool[]> labels(new bool[n]);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = u(rng);
    labels[i] = u(rng) < 0.2;
  }
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(scores, std::span<const bool>(labels.get(), n)));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}
BENCHMARK(BM_AveragePrecision)->Arg(1 << 12)->Arg(1 << 16)->Arg(1 << 18);

void BM_EstimateMatch(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Eigen::Matrix3d h;
  h << 1.1, 0.05, 0.02, -0.03, 0.95, 0.04, 0.02, -0.01, 1.0;
  std::vector<KeypointPair> pairs;
  for (int i = 0; i < state.range(0); ++i) {
    const Point2 p(u(rng), u(rng));
    // a quarter of the putative matches are outliers
    pairs.push_back({p, i % 4 == 0 ? Point2(u(rng), u(rng)) : apply_homography(h, p)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(estimate_match(pairs));
}
BENCHMARK(BM_EstimateMatch)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_WarpMask(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  ProbMap src(size, size);
  for (int y = size / 4; y < 3 * size / 4; ++y) {
    for (int x = size / 4; x < 3 * size / 4; ++x) src.at(x, y) = 1.0;
  }
  Eigen::Matrix3d h;
  h << 0.9, 0.08, 0.04, -0.05, 0.85, 0.07, 0.05, -0.04, 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(warp_mask(src, h, size, size));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_WarpMask)->Arg(256)->Arg(512);

void BM_SegmenterForward(benchmark::State& state) {
  SegModelConfig cfg;
  cfg.input_size = static_cast<int>(state.range(0));
  const FeatureSegModel model(cfg);
  std::mt19937_64 rng(3);
  RgbImage img(cfg.input_size, cfg.input_size);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng());
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(img, "window"));
}
BENCHMARK(BM_SegmenterForward)->Arg(64)->Arg(352)->Unit(benchmark::kMillisecond);

void BM_RenderSemantic(benchmark::State& state) {
  const synthetic::SceneSpec spec;
  const synthetic::Scene scene(spec);
  FieldConfig fc;
  fc.bounds = scene.field_bounds();
  const RadianceBackbone backbone(fc, 1);
  const SemanticHead head(fc.hidden, 3);
  const auto& cam = scene.views().front().camera;
  int px = 0;
  for (auto _ : state) {
    const Ray ray = camera_ray(cam, px % spec.width + 0.5, spec.height / 2 + 0.5, fc.bounds);
    benchmark::DoNotOptimize(render_semantic(backbone, head, ray));
    ++px;
  }
}
BENCHMARK(BM_RenderSemantic)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
