#include "halo/mining.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>

#include "halo/error.hpp"
#include "halo/parallel.hpp"
#include "halo/text.hpp"

namespace halo {

using nlohmann::json;

std::string to_string(ZoomFilter f) {
  switch (f) {
    case ZoomFilter::kInliers: return "inliers";
    case ZoomFilter::kDispersion: return "dispersion";
    case ZoomFilter::kSimilarity: return "similarity";
    case ZoomFilter::kRegion: return "region";
    case ZoomFilter::kFacade: return "facade";
  }
  return "?";
}

std::string to_string(CropCondition c) {
  switch (c) {
    case CropCondition::kSimilarity: return "similarity";
    case CropCondition::kBeatsImage: return "beats_image";
    case CropCondition::kBeatsCommon: return "beats_common";
    case CropCondition::kCenterActivation: return "center_activation";
  }
  return "?";
}

bool ZoomFilterReport::all() const {
  return std::all_of(passed.begin(), passed.end(), [](bool b) { return b; });
}

std::optional<ZoomFilter> ZoomFilterReport::first_failure() const {
  for (std::size_t i = 0; i < kZoomFilterCount; ++i) {
    if (!passed[i]) return static_cast<ZoomFilter>(i);
  }
  return std::nullopt;
}

double facade_area_ratio(const ProbMap& facade, const Quad& quad) {
  double total = 0.0;
  double inside = 0.0;
  for (int y = 0; y < facade.height(); ++y) {
    for (int x = 0; x < facade.width(); ++x) {
      const double v = facade.at(x, y);
      total += v;
      const Point2 center((x + 0.5) / facade.width(), (y + 0.5) / facade.height());
      if (v != 0.0 && point_in_polygon(center, quad)) inside += v;
    }
  }
  if (total <= 0.0) throw DomainError("facade not found: building segmentation sums to zero");
  return std::clamp(inside / total, 0.0, 1.0);
}

int count_points_in_mask(std::span<const Point2> points, const BinaryMask& mask) {
  int n = 0;
  for (const auto& p : points) {
    if (!(p.x() >= 0.0 && p.x() <= 1.0 && p.y() >= 0.0 && p.y() <= 1.0)) continue;
    const int x = std::min(mask.width() - 1, static_cast<int>(p.x() * mask.width()));
    const int y = std::min(mask.height() - 1, static_cast<int>(p.y() * mask.height()));
    if (mask.at(x, y)) ++n;
  }
  return n;
}

namespace {

// Runs the filters in order; with `short_circuit` the report is partial after
// the first failure.
ZoomFilterReport run_filters(const ImageRegion& in, const ImageRegion& out, const std::string& label,
                             const std::string& building_prompt, const MatchResult& match, const SegOracle& seg,
                             const SimOracle& sim, const ZoomFilterConfig& cfg, bool short_circuit,
                             std::optional<ProbMap>* seg_in_out) {
  ZoomFilterReport r;
  auto done = [&](ZoomFilter f) { return short_circuit && !r.passed[static_cast<std::size_t>(f)]; };

  r.inlier_count = match.inlier_count;
  r.passed[0] = match.inlier_count >= cfg.min_inliers;
  if (done(ZoomFilter::kInliers)) return r;

  const auto inliers = match.inliers();
  std::vector<Point2> p1, p2;
  for (const auto& kp : inliers) {
    p1.push_back(kp.first);
    p2.push_back(kp.second);
  }
  if (!inliers.empty()) {
    const double d1 = dispersion(p1);
    const double d2 = dispersion(p2);
    r.log_dispersion_ratio = (d1 > 0.0 && d2 > 0.0) ? std::log(d1 / d2) : -std::numeric_limits<double>::infinity();
  } else {
    r.log_dispersion_ratio = -std::numeric_limits<double>::infinity();
  }
  r.passed[1] = r.log_dispersion_ratio >= cfg.min_log_dispersion_ratio;
  if (done(ZoomFilter::kDispersion)) return r;

  r.sim_zoomed_in = sim.similarity(in, label);
  r.sim_zoomed_out = sim.similarity(out, label);
  r.passed[2] = r.sim_zoomed_in >= cfg.min_sim_zoomed_in && r.sim_zoomed_out <= cfg.max_sim_zoomed_out;
  if (done(ZoomFilter::kSimilarity)) return r;

  ProbMap seg_in = seg.segment(in, label);
  r.region_inliers = count_points_in_mask(p1, binarize(seg_in, cfg.region_threshold));
  r.passed[3] = r.region_inliers >= cfg.min_region_inliers;
  if (seg_in_out) *seg_in_out = std::move(seg_in);
  if (done(ZoomFilter::kRegion)) return r;

  const Quad quad = project_frame(match.homography);
  try {
    r.facade_ratio = facade_area_ratio(seg.segment(out, building_prompt), quad);
    r.passed[4] = *r.facade_ratio < cfg.max_facade_ratio;
  } catch (const DomainError&) {
    r.passed[4] = false;
  }
  return r;
}

}  // namespace

ZoomFilterReport evaluate_zoom_filters(const ImageRegion& zoomed_in, const ImageRegion& zoomed_out,
                                       const std::string& label, const std::string& building_prompt,
                                       const MatchResult& match, const SegOracle& seg, const SimOracle& sim,
                                       const ZoomFilterConfig& config) {
  return run_filters(zoomed_in, zoomed_out, label, building_prompt, match, seg, sim, config, false, nullptr);
}

std::optional<ZoomPairSample> accept_zoom_pair(const ImageRegion& zoomed_in, const ImageRegion& zoomed_out,
                                               const std::string& label, const std::string& building_prompt,
                                               const MatchResult& match, const SegOracle& seg,
                                               const SimOracle& sim, const ZoomFilterConfig& config,
                                               ZoomCounters* counters) {
  std::optional<ProbMap> seg_in;
  const auto report =
      run_filters(zoomed_in, zoomed_out, label, building_prompt, match, seg, sim, config, true, &seg_in);
  if (auto failed = report.first_failure()) {
    if (counters) ++counters->rejected[static_cast<std::size_t>(*failed)];
    return std::nullopt;
  }
  auto warped = warp_mask(*seg_in, match.homography, zoomed_out.rect.width(), zoomed_out.rect.height());
  if (counters) ++counters->accepted;
  return ZoomPairSample{zoomed_in.image_id,
                        zoomed_out.image_id,
                        label,
                        warped.quad,
                        match.homography,
                        std::move(warped.values),
                        std::move(warped.valid)};
}

Rect sample_crop(int width, int height, std::mt19937_64& rng, const CropConfig& config) {
  if (width <= 0 || height <= 0) throw InvalidArgument("sample_crop: empty image");
  const int min_dim = std::min(width, height);
  std::uniform_real_distribution<double> frac(config.min_side_fraction, config.max_side_fraction);
  const int side = std::clamp(static_cast<int>(std::lround(frac(rng) * min_dim)), 1, min_dim);
  std::uniform_int_distribution<int> px(0, width - side);
  std::uniform_int_distribution<int> py(0, height - side);
  const int x0 = px(rng);
  const int y0 = py(rng);
  return {x0, y0, x0 + side, y0 + side};
}

double center_max(const ProbMap& map, double fraction) {
  const auto span = [&](int n) {
    const double margin = n * (1.0 - fraction) / 2.0;
    int lo = static_cast<int>(std::floor(margin));
    int hi = static_cast<int>(std::ceil(n - margin));
    if (hi <= lo) {
      lo = std::max(0, n / 2 - (n % 2 == 0 ? 1 : 0));
      hi = std::min(n, n / 2 + 1);
    }
    return std::pair{lo, hi};
  };
  const auto [x0, x1] = span(map.width());
  const auto [y0, y1] = span(map.height());
  double best = 0.0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) best = std::max(best, map.at(x, y));
  }
  return best;
}

std::optional<CropSample> mine_crop_sample(const ImageRegion& image, const std::string& label,
                                           const SegOracle& seg, const SimOracle& sim,
                                           std::span<const std::string> common_labels, std::mt19937_64& rng,
                                           const CropConfig& config, CropCounters* counters) {
  const Rect rect = sample_crop(image.rect.width(), image.rect.height(), rng, config);
  const ImageRegion region = image.sub(rect);
  auto reject = [&](CropCondition c) -> std::optional<CropSample> {
    if (counters) ++counters->rejected[static_cast<std::size_t>(c)];
    return std::nullopt;
  };

  const double s_crop = sim.similarity(region, label);
  if (s_crop < config.min_similarity) return reject(CropCondition::kSimilarity);
  if (!(s_crop > sim.similarity(image, label))) return reject(CropCondition::kBeatsImage);
  for (const auto& other : common_labels) {
    if (other == label) continue;
    if (!(s_crop > sim.similarity(region, other))) return reject(CropCondition::kBeatsCommon);
  }
  ProbMap target = seg.segment(region, label);
  if (center_max(target, config.center_fraction) < config.min_center_activation) {
    return reject(CropCondition::kCenterActivation);
  }
  if (counters) ++counters->accepted;
  return CropSample{image.image_id, label, rect, std::move(target)};
}

Rect two_crop_pick(const ImageRegion& image, const std::string& label, const SimOracle& sim,
                   std::mt19937_64& rng, const CropConfig& config) {
  const Rect a = sample_crop(image.rect.width(), image.rect.height(), rng, config);
  const Rect b = sample_crop(image.rect.width(), image.rect.height(), rng, config);
  const double sa = sim.similarity(image.sub(a), label);
  const double sb = sim.similarity(image.sub(b), label);
  return sb > sa ? b : a;
}

std::optional<std::string> refine_label(std::string_view label, const RefineConfig& config) {
  std::string stripped;
  for (char c : text::to_lower(label)) {
    if (!std::isdigit(static_cast<unsigned char>(c))) stripped += c;
  }
  std::vector<std::string> kept;
  for (auto& w : text::split_words(stripped)) {
    if (std::find(config.direction_words.begin(), config.direction_words.end(), w) != config.direction_words.end()) {
      continue;
    }
    kept.push_back(std::move(w));
  }
  if (kept.empty()) return std::nullopt;
  auto refined = text::singularize(text::join(kept, " "));
  const auto words = text::split_words(refined);
  const bool all_stop = std::all_of(words.begin(), words.end(), [&](const std::string& w) {
    return std::find(config.stop_list.begin(), config.stop_list.end(), w) != config.stop_list.end();
  });
  if (all_stop) return std::nullopt;
  return refined;
}

std::vector<std::string> most_common_labels(std::span<const std::string> labels, std::size_t k) {
  std::map<std::string, std::size_t> freq;
  for (const auto& l : labels) ++freq[l];
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, items.size()); ++i) out.push_back(items[i].first);
  return out;
}

MiningResult mine_scene(const SceneManifest& scene, std::span<const distill::PseudoLabel> labels, const Matcher& matcher,
                        const SegOracle& seg, const SimOracle& sim, const MiningOptions& options) {
  std::map<std::string, std::string> refined;
  std::vector<std::string> all_refined;
  for (const auto& pl : labels) {
    if (pl.status != distill::LabelStatus::kValid) continue;
    if (auto r = refine_label(pl.cleaned, options.refine)) {
      refined[pl.image_id] = *r;
      all_refined.push_back(*r);
    }
  }
  const auto common = most_common_labels(all_refined, options.common_label_count);
  const auto building = scene.building_prompt();

  std::vector<RgbImage> images;
  images.reserve(scene.images.size());
  for (const auto& rec : scene.images) images.push_back(load_record_image(scene, rec));

  std::vector<std::size_t> zoomed_in;
  for (std::size_t i = 0; i < scene.images.size() && zoomed_in.size() < options.pair_budget; ++i) {
    if (refined.contains(scene.images[i].id)) zoomed_in.push_back(i);
  }

  MiningResult result;
  struct PairOutcome {
    std::optional<ZoomPairSample> sample;
    ZoomCounters counters;
  };
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (auto i : zoomed_in) {
    for (std::size_t j = 0; j < scene.images.size(); ++j) {
      if (j != i) pairs.emplace_back(i, j);
    }
  }
  result.pairs_considered = pairs.size();
  std::vector<PairOutcome> outcomes(pairs.size());
  parallel_for(pairs.size(), options.workers, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    const auto& a = scene.images[i];
    const auto& b = scene.images[j];
    const auto r1 = ImageRegion::whole(a.id, images[i]);
    const auto r2 = ImageRegion::whole(b.id, images[j]);
    auto match = estimate_match(matcher.match(r1, r2), options.match);
    if (!match) {
      ++outcomes[k].counters.no_match;
      return;
    }
    match->first_id = a.id;
    match->second_id = b.id;
    outcomes[k].sample =
        accept_zoom_pair(r1, r2, refined.at(a.id), building, *match, seg, sim, options.zoom, &outcomes[k].counters);
  });
  for (auto& o : outcomes) {
    for (std::size_t f = 0; f < kZoomFilterCount; ++f) result.zoom_counters.rejected[f] += o.counters.rejected[f];
    result.zoom_counters.no_match += o.counters.no_match;
    result.zoom_counters.accepted += o.counters.accepted;
    if (o.sample) result.zoom_pairs.push_back(std::move(*o.sample));
  }

  struct CropOutcome {
    std::vector<CropSample> samples;
    CropCounters counters;
  };
  std::vector<std::size_t> crop_images;
  for (std::size_t i = 0; i < scene.images.size(); ++i) {
    if (refined.contains(scene.images[i].id)) crop_images.push_back(i);
  }
  std::vector<CropOutcome> crop_outcomes(crop_images.size());
  parallel_for(crop_images.size(), options.workers, [&](std::size_t k) {
    const auto i = crop_images[k];
    const auto& rec = scene.images[i];
    std::mt19937_64 rng(options.seed ^ text::fnv1a(rec.id));
    const auto region = ImageRegion::whole(rec.id, images[i]);
    for (std::size_t t = 0; t < options.crop_attempts_per_image; ++t) {
      if (auto s = mine_crop_sample(region, refined.at(rec.id), seg, sim, common, rng, options.crop,
                                    &crop_outcomes[k].counters)) {
        crop_outcomes[k].samples.push_back(std::move(*s));
      }
    }
  });
  for (auto& o : crop_outcomes) {
    for (std::size_t c = 0; c < kCropConditionCount; ++c) result.crop_counters.rejected[c] += o.counters.rejected[c];
    result.crop_counters.accepted += o.counters.accepted;
    for (auto& s : o.samples) {
      if (result.crops.size() < options.crop_budget) result.crops.push_back(std::move(s));
    }
  }
  spdlog::info("mining: {} zoom pairs from {} candidate pairs, {} crops", result.zoom_pairs.size(),
               result.pairs_considered, result.crops.size());
  return result;
}

namespace {

json quad_json(const Quad& q) {
  json a = json::array();
  for (const auto& p : q) a.push_back({p.x(), p.y()});
  return a;
}

json matrix_json(const Eigen::Matrix3d& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) a.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return a;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::string index_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu", prefix, i);
  return buf;
}

}  // namespace

void write_mining(const MiningResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "targets");
  std::string zoom;
  for (std::size_t i = 0; i < result.zoom_pairs.size(); ++i) {
    const auto& s = result.zoom_pairs[i];
    const auto name = index_name("zoom", i);
    save_probmap(s.target, dir / "targets" / (name + ".png"));
    save_mask(s.valid, dir / "targets" / (name + "_valid.png"));
    zoom += json{{"zoomed_in", s.zoomed_in_id},
                 {"zoomed_out", s.zoomed_out_id},
                 {"label", s.label},
                 {"quad", quad_json(s.quad)},
                 {"homography", matrix_json(s.homography)},
                 {"target", "targets/" + name + ".png"},
                 {"valid", "targets/" + name + "_valid.png"}}
                .dump() +
            "\n";
  }
  write_text_atomic(dir / "zoom_pairs.jsonl", zoom);
  std::string crops;
  for (std::size_t i = 0; i < result.crops.size(); ++i) {
    const auto& s = result.crops[i];
    const auto name = index_name("crop", i);
    save_probmap(s.target, dir / "targets" / (name + ".png"));
    crops += json{{"image_id", s.image_id},
                  {"label", s.label},
                  {"crop", {s.crop.x0, s.crop.y0, s.crop.x1, s.crop.y1}},
                  {"target", "targets/" + name + ".png"}}
                 .dump() +
             "\n";
  }
  write_text_atomic(dir / "crops.jsonl", crops);
  json counters;
  for (std::size_t f = 0; f < kZoomFilterCount; ++f) {
    counters["zoom_rejected"][to_string(static_cast<ZoomFilter>(f))] = result.zoom_counters.rejected[f];
  }
  counters["zoom_no_match"] = result.zoom_counters.no_match;
  counters["zoom_accepted"] = result.zoom_counters.accepted;
  for (std::size_t c = 0; c < kCropConditionCount; ++c) {
    counters["crop_rejected"][to_string(static_cast<CropCondition>(c))] = result.crop_counters.rejected[c];
  }
  counters["crop_accepted"] = result.crop_counters.accepted;
  counters["pairs_considered"] = result.pairs_considered;
  write_text_atomic(dir / "counters.json", counters.dump(2) + "\n");
}

std::vector<ZoomPairSample> read_zoom_pairs(const std::filesystem::path& dir) {
  std::vector<ZoomPairSample> out;
  for (const auto& j : read_jsonl(dir / "zoom_pairs.jsonl")) {
    ZoomPairSample s;
    s.zoomed_in_id = j.at("zoomed_in").get<std::string>();
    s.zoomed_out_id = j.at("zoomed_out").get<std::string>();
    s.label = j.at("label").get<std::string>();
    for (int k = 0; k < 4; ++k) s.quad[k] = Point2(j.at("quad").at(k).at(0), j.at("quad").at(k).at(1));
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) s.homography(r, c) = j.at("homography").at(r).at(c).get<double>();
    }
    s.target = load_probmap(dir / j.at("target").get<std::string>());
    s.valid = load_mask(dir / j.at("valid").get<std::string>());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<CropSample> read_crops(const std::filesystem::path& dir) {
  std::vector<CropSample> out;
  for (const auto& j : read_jsonl(dir / "crops.jsonl")) {
    CropSample s;
    s.image_id = j.at("image_id").get<std::string>();
    s.label = j.at("label").get<std::string>();
    const auto& c = j.at("crop");
    s.crop = {c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>(), c.at(3).get<int>()};
    s.target = load_probmap(dir / j.at("target").get<std::string>());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace halo
