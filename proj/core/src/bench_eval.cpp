#include "halo/bench_eval.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <memory>
#include <numeric>
#include <set>
#include <tuple>

#include <json.hpp>

#include "halo/error.hpp"
#include "halo/image.hpp"

namespace halo {

namespace {

using nlohmann::ordered_json;

const char* origin_name(AnnotationOrigin o) { return o == AnnotationOrigin::kManualSeed ? "manual_seed" : "propagated"; }

}  // namespace

bool homography_skew_filter(const Eigen::Matrix3d& h, double kappa_max) {
  if (!h.allFinite()) return false;
  const auto kappa = column_condition_number(h);
  return kappa && *kappa <= kappa_max;
}

PropagationResult propagate_masks(const std::vector<SeedAnnotation>& seeds, const std::vector<MatchResult>& matches,
                                  const std::map<std::string, std::pair<int, int>>& sizes,
                                  const PropagationOptions& options) {
  PropagationResult result;
  std::set<std::string> categories;
  for (const auto& s : seeds) categories.insert(s.category);

  for (const auto& category : categories) {
    std::map<std::string, const SeedAnnotation*> by_id;
    for (const auto& s : seeds) {
      if (s.category == category) by_id.emplace(s.image_id, &s);
    }
    // target -> (seed, seed-to-target homography or rejection reason)
    struct Candidate {
      const SeedAnnotation* seed;
      const MatchResult* match;
      bool seed_first;
    };
    std::map<std::string, std::vector<Candidate>> per_target;
    for (const auto& m : matches) {
      if (const auto it = by_id.find(m.first_id); it != by_id.end() && !by_id.count(m.second_id)) {
        per_target[m.second_id].push_back({it->second, &m, true});
      }
      if (const auto it = by_id.find(m.second_id); it != by_id.end() && !by_id.count(m.first_id)) {
        per_target[m.first_id].push_back({it->second, &m, false});
      }
    }

    for (const auto& [target, candidates] : per_target) {
      ReviewEntry entry;
      entry.image_id = target;
      entry.category = category;
      const auto size = sizes.find(target);
      if (size == sizes.end()) {
        entry.rejected.push_back({"", "unknown target size"});
        spdlog::warn("propagate-gt: no size for {}, skipped", target);
        result.skipped.push_back(std::move(entry));
        continue;
      }
      const auto [w, h] = size->second;
      std::vector<WarpResult> warps;
      for (const auto& c : candidates) {
        if (c.match->inlier_count < options.min_inliers) {
          entry.rejected.push_back({c.seed->image_id, "inliers " + std::to_string(c.match->inlier_count)});
          continue;
        }
        Eigen::Matrix3d hom = c.seed_first ? c.match->homography : Eigen::Matrix3d(c.match->homography.inverse());
        if (!hom.allFinite() || hom(2, 2) == 0.0) {
          entry.rejected.push_back({c.seed->image_id, "degenerate homography"});
          continue;
        }
        hom /= hom(2, 2);
        if (!homography_skew_filter(hom, options.kappa_max)) {
          entry.rejected.push_back({c.seed->image_id, "skew"});
          continue;
        }
        warps.push_back(warp_mask(to_probmap(c.seed->mask), hom, w, h));
        entry.sources.push_back(c.seed->image_id);
      }
      if (warps.empty()) {
        spdlog::info("propagate-gt: {} / {} has no accepted warp", target, category);
        result.skipped.push_back(std::move(entry));
        continue;
      }
      BinaryMask mask(w, h);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          int yes = 0, no = 0;
          for (const auto& wr : warps) {
            if (!wr.valid.at(x, y)) continue;
            (wr.values.at(x, y) >= options.warp_threshold ? yes : no) += 1;
          }
          if (yes > 0 && yes >= no) {
            mask.set(x, y, true);
            ++entry.positive_pixels;
            if (yes == no) ++entry.tie_pixels;
          }
        }
      }
      SeedAnnotation out;
      out.image_id = target;
      out.category = category;
      out.mask = std::move(mask);
      out.origin = AnnotationOrigin::kPropagated;
      out.sources = entry.sources;
      result.masks.push_back(std::move(out));
      result.review.push_back(std::move(entry));
    }
  }
  return result;
}

void write_review(const std::filesystem::path& path, const std::vector<ReviewEntry>& entries) {
  std::string text;
  for (const auto& e : entries) {
    ordered_json j;
    j["image_id"] = e.image_id;
    j["category"] = e.category;
    j["origin"] = origin_name(AnnotationOrigin::kPropagated);
    j["sources"] = e.sources;
    auto rejected = ordered_json::array();
    for (const auto& r : e.rejected) rejected.push_back({{"seed", r.seed_id}, {"reason", r.reason}});
    j["rejected"] = rejected;
    j["positive_pixels"] = e.positive_pixels;
    j["tie_pixels"] = e.tie_pixels;
    j["reviewed"] = false;
    text += j.dump() + "\n";
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

double average_precision(std::span<const double> scores, std::span<const bool> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("average_precision: length mismatch");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (positives == 0) throw DomainError("average_precision: no positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!labels[order[k]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(positives);
}

double average_precision(const ProbMap& scores, const BinaryMask& gt) {
  if (scores.width() != gt.width() || scores.height() != gt.height()) {
    throw InvalidArgument("average_precision: map and mask sizes differ");
  }
  std::unique_ptr<bool[]> labels(new bool[gt.size()]);
  for (std::size_t i = 0; i < gt.size(); ++i) labels[i] = gt[i];
  return average_precision(scores.values(), std::span<const bool>(labels.get(), gt.size()));
}

EvalTable aggregate_map(std::vector<EvalCell> cells) {
  if (cells.empty()) throw InvalidArgument("aggregate_map: no cells");
  std::sort(cells.begin(), cells.end(), [](const EvalCell& a, const EvalCell& b) {
    return std::tie(a.landmark, a.category) < std::tie(b.landmark, b.category);
  });
  for (std::size_t i = 1; i < cells.size(); ++i) {
    if (cells[i].landmark == cells[i - 1].landmark && cells[i].category == cells[i - 1].category) {
      throw InvalidArgument("aggregate_map: duplicate cell " + cells[i].landmark + "/" + cells[i].category);
    }
  }
  EvalTable t;
  std::map<std::string, std::vector<double>> per_category;
  for (const auto& c : cells) {
    if (c.ap) per_category[c.category].push_back(*c.ap);
  }
  if (per_category.empty()) throw InvalidArgument("aggregate_map: every cell is a gap");
  double total = 0.0;
  for (const auto& [cat, aps] : per_category) {
    double s = 0.0;
    for (double a : aps) s += a;
    t.category_means[cat] = s / static_cast<double>(aps.size());
    t.category_landmarks[cat] = aps.size();
    total += t.category_means[cat];
  }
  t.map = total / static_cast<double>(per_category.size());
  t.cells = std::move(cells);
  return t;
}

RecallAtK recall_at_k(const std::vector<std::vector<std::string>>& rankings, const std::vector<std::string>& gold,
                      const std::vector<int>& ks) {
  if (rankings.size() != gold.size()) throw InvalidArgument("recall_at_k: one gold label per ranking expected");
  RecallAtK out;
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto it = std::find(rankings[i].begin(), rankings[i].end(), gold[i]);
    if (it == rankings[i].end()) {
      ++out.excluded;
      continue;
    }
    ranks.push_back(static_cast<std::size_t>(it - rankings[i].begin()) + 1);
  }
  out.evaluated = ranks.size();
  for (int k : ks) {
    if (k < 1) throw InvalidArgument("recall_at_k: k must be positive");
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= static_cast<std::size_t>(k); });
    out.recall[k] = ranks.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranks.size());
  }
  return out;
}

EvalTable evaluate_predictions(const std::string& landmark, const std::filesystem::path& gt_dir,
                               const std::filesystem::path& pred_dir, const std::vector<std::string>& categories) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(gt_dir)) throw IoError("no ground-truth directory " + gt_dir.string());
  std::vector<fs::path> category_dirs;
  for (const auto& e : fs::directory_iterator(gt_dir)) {
    if (!e.is_directory()) continue;
    const auto name = e.path().filename().string();
    if (categories.empty() || std::find(categories.begin(), categories.end(), name) != categories.end()) {
      category_dirs.push_back(e.path());
    }
  }
  for (const auto& c : categories) {
    if (!fs::is_directory(gt_dir / c)) throw IoError("no ground truth for category " + c + " under " + gt_dir.string());
  }
  std::sort(category_dirs.begin(), category_dirs.end());
  std::vector<EvalCell> cells;
  for (const auto& dir : category_dirs) {
    EvalCell cell;
    cell.landmark = landmark;
    cell.category = dir.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    double sum = 0.0;
    for (const auto& f : files) {
      const auto gt = load_mask(f);
      if (gt.count() == 0) {
        ++cell.excluded_images;
        continue;
      }
      const auto pred_path = pred_dir / cell.category / f.filename();
      ProbMap pred(gt.width(), gt.height(), 0.0);
      if (fs::exists(pred_path)) {
        pred = load_probmap(pred_path);
        if (pred.width() != gt.width() || pred.height() != gt.height()) pred = resize_probmap(pred, gt.width(), gt.height());
      } else {
        ++cell.missing_predictions;
      }
      sum += average_precision(pred, gt);
      ++cell.images;
    }
    if (cell.images > 0) cell.ap = sum / static_cast<double>(cell.images);
    cells.push_back(std::move(cell));
  }
  return aggregate_map(std::move(cells));
}

std::string eval_table_json(const EvalTable& table) {
  ordered_json j;
  auto cells = ordered_json::array();
  for (const auto& c : table.cells) {
    ordered_json cj;
    cj["landmark"] = c.landmark;
    cj["category"] = c.category;
    cj["ap"] = c.ap ? ordered_json(*c.ap) : ordered_json(nullptr);
    cj["images"] = c.images;
    cj["excluded_images"] = c.excluded_images;
    cj["missing_predictions"] = c.missing_predictions;
    cells.push_back(cj);
  }
  j["cells"] = cells;
  ordered_json cats = ordered_json::object();
  for (const auto& [cat, mean] : table.category_means) {
    cats[cat] = {{"mean_ap", mean}, {"landmarks", table.category_landmarks.at(cat)}};
  }
  j["categories"] = cats;
  j["mAP"] = table.map;
  return j.dump(2) + "\n";
}

void write_eval_json(const EvalTable& table, const std::filesystem::path& path) {
  const auto text = eval_table_json(table);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace halo
