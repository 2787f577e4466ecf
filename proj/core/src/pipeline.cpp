#include "halo/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "halo/bench_eval.hpp"
#include "halo/distill.hpp"
#include "halo/mining.hpp"
#include "halo/retrieval.hpp"
#include "halo/semantic_field.hpp"
#include "halo/synthetic.hpp"
#include "halo/text.hpp"
#include "halo/vlm_adapt.hpp"

namespace halo::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Bumped whenever a stage's outputs change for the same inputs.
constexpr std::string_view kImplVersion = "1";

constexpr std::string_view kStageNames[] = {"distill",     "mine",     "finetune-seg", "finetune-clip",
                                            "train-field", "localize", "propagate-gt", "eval"};

std::vector<KeyInfo> build_registry() {
  using S = Stage;
  const auto i = ValueType::kInt;
  const auto r = ValueType::kReal;
  const auto t = ValueType::kText;
  std::vector<KeyInfo> k;
  const auto add = [&](std::string name, ValueType type, std::string full, std::string desk, std::vector<Stage> stages,
                       std::vector<std::string> choices = {}, bool hashed = true) {
    k.push_back({std::move(name), type, std::move(full), std::move(desk), std::move(stages), hashed, std::move(choices)});
  };
  const auto same = [&](std::string name, ValueType type, std::string value, std::vector<Stage> stages,
                        std::vector<std::string> choices = {}) {
    add(std::move(name), type, value, value, std::move(stages), std::move(choices));
  };

  add("preset", t, "desk", "desk", {}, {"desk", "full"}, false);
  add("scene", t, "", "", {}, {}, false);  // the scene fingerprint is hashed instead
  add("workers", i, "1", "1", {}, {}, false);
  same("seed", i, "0", {});

  same("backend.textgen", t, "mock", {S::kDistill});
  same("backend.seg", t, "file", {S::kMine, S::kFinetuneSeg, S::kLocalize}, {"file", "palette"});
  same("backend.sim", t, "palette", {S::kMine, S::kFinetuneSeg}, {"palette"});
  same("backend.matcher", t, "planted", {S::kMine, S::kPropagateGt}, {"planted"});
  same("backend.encoder", t, "toy", {S::kFinetuneClip}, {"toy"});

  same("distill.beam_width", i, "4", {S::kDistill});

  same("match.inlier_threshold", r, "0.001", {S::kMine, S::kPropagateGt});
  same("match.max_iterations", i, "2000", {S::kMine, S::kPropagateGt});
  same("match.confidence", r, "0.999", {S::kMine, S::kPropagateGt});
  same("match.refit_factor", r, "3", {S::kMine, S::kPropagateGt});

  same("mine.pair_budget", i, "50", {S::kMine});
  same("mine.crop_attempts_per_image", i, "8", {S::kMine});
  same("mine.crop_budget", i, "256", {S::kMine});
  same("mine.common_labels", i, "20", {S::kMine});
  same("mine.min_inliers", i, "50", {S::kMine});
  same("mine.min_log_dispersion_ratio", r, "0.1", {S::kMine});
  same("mine.min_sim_zoomed_in", r, "0.2", {S::kMine});
  same("mine.max_sim_zoomed_out", r, "0.3", {S::kMine});
  same("mine.min_region_inliers", i, "3", {S::kMine});
  same("mine.region_threshold", r, "0.3", {S::kMine});
  same("mine.max_facade_ratio", r, "0.5", {S::kMine});
  same("mine.crop_min_similarity", r, "0.2", {S::kMine});
  same("mine.crop_center_activation", r, "0.1", {S::kMine});

  add("seg.input_size", i, "352", "64", {S::kFinetuneSeg, S::kLocalize});
  same("seg.feature_dim", i, "16", {S::kFinetuneSeg, S::kLocalize});
  add("finetune_seg.epochs", i, "10", "10", {S::kFinetuneSeg});
  add("finetune_seg.lr", r, "0.0001", "0.05", {S::kFinetuneSeg});
  add("finetune_seg.optimizer", t, "sgd", "adam", {S::kFinetuneSeg}, {"sgd", "adam"});
  same("finetune_seg.corresp_per_step", i, "1", {S::kFinetuneSeg});
  same("finetune_seg.crops_per_step", i, "4", {S::kFinetuneSeg});
  same("finetune_seg.plural_p", r, "0.5", {S::kFinetuneSeg});

  add("finetune_clip.epochs", i, "5", "40", {S::kFinetuneClip});
  add("finetune_clip.lr", r, "0.000001", "0.01", {S::kFinetuneClip});
  add("finetune_clip.batch_size", i, "128", "16", {S::kFinetuneClip});
  same("finetune_clip.scale", r, "20", {S::kFinetuneClip});
  same("finetune_clip.optimizer", t, "adam", {S::kFinetuneClip}, {"sgd", "adam"});

  same("field.bounds", t, "auto", {S::kTrainField});
  same("field.grid_resolution", i, "48", {S::kTrainField});
  same("field.feature_channels", i, "8", {S::kTrainField});
  same("field.position_bands", i, "10", {S::kTrainField});
  same("field.direction_bands", i, "4", {S::kTrainField});
  same("field.hidden", i, "32", {S::kTrainField});
  same("field.color_hidden", i, "32", {S::kTrainField});
  same("field.appearance_dim", i, "8", {S::kTrainField});
  same("field.samples_per_ray", i, "64", {S::kTrainField});
  same("field.weight_threshold", r, "0.0001", {S::kTrainField});
  add("rgb.iterations", i, "250000", "2000", {S::kTrainField});
  add("rgb.batch_rays", i, "8192", "256", {S::kTrainField});
  add("rgb.lr", r, "0.0005", "0.005", {S::kTrainField});
  same("rgb.grid_lr", r, "0.1", {S::kTrainField});
  same("rgb.opacity_weight", r, "0.03", {S::kTrainField});
  same("rgb.distortion_weight", r, "0", {S::kTrainField});
  same("rgb.sparsity_weight", r, "0", {S::kTrainField});

  same("localize.prompts", t, "window", {S::kLocalize});
  same("localize.views", t, "selected", {S::kLocalize}, {"all", "selected"});
  same("localize.view_count", i, "150", {S::kLocalize});
  same("localize.view_seg", t, "palette", {S::kLocalize}, {"palette"});
  same("localize.seg", t, "pretrained", {S::kLocalize}, {"pretrained", "finetuned"});
  same("localize.max_dim", i, "500", {S::kLocalize});
  same("localize.stride", i, "25", {S::kLocalize});
  add("head.iterations", i, "12500", "500", {S::kLocalize});
  add("head.batch_rays", i, "8192", "256", {S::kLocalize});
  add("head.lr", r, "0.00005", "0.005", {S::kLocalize});
  same("head.target_threshold", r, "0.2", {S::kLocalize});

  same("propagate.category", t, "window", {S::kPropagateGt});
  same("propagate.seeds", t, "auto", {S::kPropagateGt});
  same("propagate.seed_count", i, "4", {S::kPropagateGt});
  same("propagate.min_inliers", i, "100", {S::kPropagateGt});
  same("propagate.kappa_max", r, "10", {S::kPropagateGt});
  same("propagate.warp_threshold", r, "0.5", {S::kPropagateGt});

  same("eval.gt", t, "analytic", {S::kEval}, {"analytic", "propagated"});
  std::sort(k.begin(), k.end(), [](const KeyInfo& a, const KeyInfo& b) { return a.name < b.name; });
  return k;
}

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

bool valid_value(const KeyInfo& info, const std::string& value) {
  if (!info.choices.empty() && std::find(info.choices.begin(), info.choices.end(), value) == info.choices.end()) {
    return false;
  }
  const char* b = value.data();
  const char* e = b + value.size();
  switch (info.type) {
    case ValueType::kInt: {
      long long v = 0;
      const auto [p, ec] = std::from_chars(b, e, v);
      return ec == std::errc() && p == e && !value.empty();
    }
    case ValueType::kReal: {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(b, e, v);
      return ec == std::errc() && p == e && !value.empty() && std::isfinite(v);
    }
    case ValueType::kText:
      return value.find('\n') == std::string::npos;
  }
  return false;
}

bool uses(const KeyInfo& info, Stage stage) {
  return info.stages.empty() || std::find(info.stages.begin(), info.stages.end(), stage) != info.stages.end();
}

std::string category_of(std::string_view prompt) { return text::singularize(text::to_lower(text::trim(prompt))); }

void write_json(const fs::path& path, const ordered_json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

std::uint64_t stage_seed(const PipelineConfig& c, Stage s) {
  return static_cast<std::uint64_t>(c.get_int("seed")) ^ text::fnv1a(to_string(s));
}

std::unique_ptr<SegOracle> make_seg(const std::string& name, const fs::path& scene_root) {
  if (name == "file") return std::make_unique<FileSegOracle>(scene_root);
  if (name == "palette") return std::make_unique<synthetic::PaletteSegOracle>();
  throw InvalidArgument("unknown segmenter backend " + name);
}

std::unique_ptr<SimOracle> make_sim(const std::string& name) {
  if (name == "palette") return std::make_unique<synthetic::PaletteSimOracle>();
  throw InvalidArgument("unknown similarity backend " + name);
}

std::unique_ptr<Matcher> make_matcher(const std::string& name, const fs::path& scene_root) {
  if (name == "planted") return std::make_unique<PlantedMatcher>(scene_root / "aux" / "matches.jsonl");
  throw InvalidArgument("unknown matcher backend " + name);
}

MatchOptions match_options(const PipelineConfig& c) {
  MatchOptions m;
  m.inlier_threshold = c.get_real("match.inlier_threshold");
  m.max_iterations = static_cast<int>(c.get_int("match.max_iterations"));
  m.confidence = c.get_real("match.confidence");
  m.refit_factor = c.get_real("match.refit_factor");
  return m;
}

SegModelConfig seg_model_config(const PipelineConfig& c) {
  SegModelConfig s;
  s.input_size = static_cast<int>(c.get_int("seg.input_size"));
  s.feature_dim = static_cast<int>(c.get_int("seg.feature_dim"));
  s.seed = static_cast<std::uint64_t>(c.get_int("seed")) + 1;
  return s;
}

Aabb parse_bounds(const std::string& value, const fs::path& scene_root) {
  std::string text = value;
  if (value == "auto") {
    const auto path = scene_root / "aux" / "bounds.txt";
    if (!fs::exists(path)) throw InvalidArgument("field.bounds=auto needs " + path.string() + "; set six numbers instead");
    std::ifstream in(path);
    std::getline(in, text);
  }
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in(text);
  double v[6];
  for (double& x : v) {
    if (!(in >> x)) throw InvalidArgument("field.bounds: expected six numbers, got '" + text + "'");
  }
  Aabb box;
  box.lo = {v[0], v[1], v[2]};
  box.hi = {v[3], v[4], v[5]};
  if ((box.hi - box.lo).minCoeff() <= 0.0) throw InvalidArgument("field.bounds: empty box");
  return box;
}

struct LoadedScene {
  SceneManifest manifest;
  std::map<std::string, RgbImage> images;

  const RgbImage& image(const std::string& id) const {
    const auto it = images.find(id);
    if (it == images.end()) throw InvalidArgument("unknown image " + id);
    return it->second;
  }
  std::vector<const ImageRecord*> posed() const {
    std::vector<const ImageRecord*> out;
    for (const auto& r : manifest.images) {
      if (r.camera) out.push_back(&r);
    }
    return out;
  }
};

LoadedScene load_all(const fs::path& root) {
  LoadedScene s;
  s.manifest = load_scene(root);
  for (const auto& r : s.manifest.images) s.images.emplace(r.id, load_record_image(s.manifest, r));
  return s;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

std::string to_string(Stage stage) { return std::string(kStageNames[static_cast<int>(stage)]); }

Stage parse_stage(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kStageNames); ++i) {
    if (kStageNames[i] == name) return static_cast<Stage>(i);
  }
  throw InvalidArgument("unknown stage " + std::string(name));
}

MissingPrerequisite::MissingPrerequisite(Stage stage, Stage needed)
    : Error(fmt::format("{} needs the output of {} for this config: run `halo {}` first", to_string(stage),
                        to_string(needed), to_string(needed))),
      needed_(needed) {}

const std::vector<KeyInfo>& registry() {
  static const std::vector<KeyInfo> r = build_registry();
  return r;
}

const KeyInfo* find_key(std::string_view name) {
  const auto& r = registry();
  const auto it = std::lower_bound(r.begin(), r.end(), name, [](const KeyInfo& k, std::string_view n) { return k.name < n; });
  return it != r.end() && it->name == name ? &*it : nullptr;
}

PipelineConfig::PipelineConfig() { apply_preset(); }

void PipelineConfig::apply_preset() {
  const auto preset_it = explicit_.find("preset");
  const bool full = preset_it != explicit_.end() && preset_it->second == "full";
  for (const auto& k : registry()) {
    const auto e = explicit_.find(k.name);
    values_[k.name] = e != explicit_.end() ? e->second : (full ? k.full_default : k.desk_default);
  }
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto* info = find_key(key);
  if (!info) throw InvalidArgument("unknown config key '" + key + "'");
  const auto v = text::trim(value);
  if (!valid_value(*info, v)) throw InvalidArgument("bad value '" + v + "' for config key " + key);
  explicit_[key] = v;
  apply_preset();
}

PipelineConfig PipelineConfig::parse(std::string_view text) {
  PipelineConfig c;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (text::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument(fmt::format("config line {}: expected key=value", line_no));
    const auto key = text::trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw InvalidArgument(fmt::format("config line {}: duplicate key {}", line_no, key));
    try {
      c.set(key, line.substr(eq + 1));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(fmt::format("config line {}: {}", line_no, e.what()));
    }
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

const std::string& PipelineConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgument("unknown config key '" + key + "'");
  return it->second;
}

long long PipelineConfig::get_int(const std::string& key) const {
  const auto& v = get(key);
  long long out = 0;
  std::from_chars(v.data(), v.data() + v.size(), out);
  return out;
}

double PipelineConfig::get_real(const std::string& key) const {
  const auto& v = get(key);
  double out = 0.0;
  std::from_chars(v.data(), v.data() + v.size(), out);
  return out;
}

std::vector<std::string> PipelineConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  for (std::string item; std::getline(in, item, ',');) {
    item = text::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string PipelineConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t scene_fingerprint(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("no scene directory " + root.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = text::fnv1a("scene");
  for (const auto& f : files) {
    h = text::fnv1a(f.generic_string(), h);
    const auto bytes = read_file_bytes(root / f);
    h = text::fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), h);
  }
  return h;
}

CacheLock::CacheLock(const fs::path& cache_dir) {
  fs::create_directories(cache_dir);
  const auto path = cache_dir / ".lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open lock file " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("cache " + cache_dir.string() + " is in use by another pipeline run");
  }
}

CacheLock::~CacheLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

Pipeline::Pipeline(PipelineConfig config, fs::path cache_dir, bool force)
    : config_(std::move(config)), cache_dir_(std::move(cache_dir)), force_(force) {
  if (config_.get("scene").empty()) throw InvalidArgument("no scene configured (set scene= or pass --scene)");
  scene_root_ = config_.get("scene");
  lock_ = std::make_unique<CacheLock>(cache_dir_);
  scene_hash_ = scene_fingerprint(scene_root_);
  const auto binding = cache_dir_ / "cache.txt";
  const auto expected = "scene=" + hex(scene_hash_) + "\n";
  if (fs::exists(binding)) {
    std::ifstream in(binding);
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() != expected && !force_) {
      throw CacheMismatch("cache " + cache_dir_.string() + " was built for a different scene (" + text::trim(ss.str()) +
                          ", now " + text::trim(expected) + "); use --force or another --cache-dir");
    }
  }
  write_text_atomic(binding, expected);
}

std::vector<Stage> Pipeline::prerequisites(Stage stage) const {
  switch (stage) {
    case Stage::kMine:
    case Stage::kFinetuneClip:
      return {Stage::kDistill};
    case Stage::kFinetuneSeg:
      return {Stage::kMine};
    case Stage::kLocalize:
      if (config_.get("localize.seg") == "finetuned") return {Stage::kTrainField, Stage::kFinetuneSeg};
      return {Stage::kTrainField};
    case Stage::kEval:
      if (config_.get("eval.gt") == "propagated") return {Stage::kLocalize, Stage::kPropagateGt};
      return {Stage::kLocalize};
    default:
      return {};
  }
}

std::string Pipeline::stage_text(Stage stage) const {
  std::string out = fmt::format("halo stage {}\nimpl={}\nscene={}\n", to_string(stage), kImplVersion, hex(scene_hash_));
  const auto backend = [&](const std::string& role, const std::string& identity) {
    out += "backend." + role + "=" + identity + "\n";
  };
  const auto seed = static_cast<std::uint64_t>(config_.get_int("seed"));
  switch (stage) {
    case Stage::kDistill:
      backend("textgen", distill::make_backend(config_.get("backend.textgen"), seed)->identity());
      break;
    case Stage::kMine:
      backend("seg", make_seg(config_.get("backend.seg"), scene_root_)->identity());
      backend("sim", make_sim(config_.get("backend.sim"))->identity());
      backend("matcher", "planted-matcher");
      break;
    case Stage::kFinetuneSeg:
      backend("seg", make_seg(config_.get("backend.seg"), scene_root_)->identity());
      backend("sim", make_sim(config_.get("backend.sim"))->identity());
      break;
    case Stage::kFinetuneClip:
      backend("encoder", "toy-retrieval");
      break;
    case Stage::kLocalize:
      backend("seg", make_seg(config_.get("backend.seg"), scene_root_)->identity());
      backend("view_seg", make_seg(config_.get("localize.view_seg"), scene_root_)->identity());
      break;
    case Stage::kPropagateGt:
      backend("matcher", "planted-matcher");
      break;
    default:
      break;
  }
  for (const auto& k : registry()) {
    if (k.hashed && uses(k, stage)) out += k.name + "=" + config_.get(k.name) + "\n";
  }
  for (const auto p : prerequisites(stage)) out += "after." + to_string(p) + "=" + stage_key(p) + "\n";
  return out;
}

std::string Pipeline::stage_key(Stage stage) const { return hex(text::fnv1a(stage_text(stage))); }

fs::path Pipeline::stage_dir(Stage stage) const { return cache_dir_ / to_string(stage) / stage_key(stage); }

bool Pipeline::cached(Stage stage) const { return fs::is_regular_file(stage_dir(stage) / "stage.txt"); }

StageResult Pipeline::run(Stage stage) {
  StageResult result;
  result.stage = stage;
  const auto text = stage_text(stage);
  result.key = hex(text::fnv1a(text));
  result.dir = cache_dir_ / to_string(stage) / result.key;
  const auto collect = [&] {
    for (const auto& e : fs::directory_iterator(result.dir)) {
      if (e.path().filename() != "stage.txt") result.artifacts.push_back(e.path());
    }
    std::sort(result.artifacts.begin(), result.artifacts.end());
  };

  if (fs::exists(result.dir) && !force_) {
    std::ifstream in(result.dir / "stage.txt");
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() != text) {
      throw CacheMismatch("cached " + to_string(stage) + " at " + result.dir.string() +
                          " does not match its key; rerun with --force");
    }
    spdlog::info("{}: cache hit {}", to_string(stage), result.key);
    result.cache_hit = true;
    collect();
    return result;
  }
  for (const auto p : prerequisites(stage)) {
    if (!cached(p)) throw MissingPrerequisite(stage, p);
  }

  const auto tmp = cache_dir_ / to_string(stage) / (result.key + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  spdlog::info("{}: computing {}", to_string(stage), result.key);
  try {
    compute(stage, tmp);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  write_text_atomic(tmp / "stage.txt", text);
  fs::remove_all(result.dir);
  fs::rename(tmp, result.dir);
  ++computations_;
  collect();
  return result;
}

void Pipeline::compute(Stage stage, const fs::path& out) {
  const auto& c = config_;
  const int workers = static_cast<int>(c.get_int("workers"));
  const auto seed = stage_seed(c, stage);

  switch (stage) {
    case Stage::kDistill: {
      const auto scene = load_scene(scene_root_);
      auto backend = distill::make_backend(c.get("backend.textgen"), static_cast<std::uint64_t>(c.get_int("seed")));
      backend->set_beam_width(static_cast<int>(c.get_int("distill.beam_width")));
      const auto res = distill::distill_scene(scene, *backend, workers);
      distill::write_pseudolabels(res.labels, out / "pseudolabels.jsonl");
      ordered_json j;
      j["valid"] = res.stats.valid;
      j["filtered_unknown"] = res.stats.filtered_unknown;
      j["filtered_empty"] = res.stats.filtered_empty;
      write_json(out / "stats.json", j);
      break;
    }

    case Stage::kMine: {
      const auto scene = load_scene(scene_root_);
      const auto labels = distill::read_pseudolabels(stage_dir(Stage::kDistill) / "pseudolabels.jsonl");
      const auto seg = make_seg(c.get("backend.seg"), scene_root_);
      const auto sim = make_sim(c.get("backend.sim"));
      const auto matcher = make_matcher(c.get("backend.matcher"), scene_root_);
      MiningOptions o;
      o.pair_budget = static_cast<std::size_t>(c.get_int("mine.pair_budget"));
      o.crop_attempts_per_image = static_cast<std::size_t>(c.get_int("mine.crop_attempts_per_image"));
      o.crop_budget = static_cast<std::size_t>(c.get_int("mine.crop_budget"));
      o.common_label_count = static_cast<std::size_t>(c.get_int("mine.common_labels"));
      o.seed = seed;
      o.workers = workers;
      o.zoom.min_inliers = static_cast<int>(c.get_int("mine.min_inliers"));
      o.zoom.min_log_dispersion_ratio = c.get_real("mine.min_log_dispersion_ratio");
      o.zoom.min_sim_zoomed_in = c.get_real("mine.min_sim_zoomed_in");
      o.zoom.max_sim_zoomed_out = c.get_real("mine.max_sim_zoomed_out");
      o.zoom.min_region_inliers = static_cast<int>(c.get_int("mine.min_region_inliers"));
      o.zoom.region_threshold = c.get_real("mine.region_threshold");
      o.zoom.max_facade_ratio = c.get_real("mine.max_facade_ratio");
      o.crop.min_similarity = c.get_real("mine.crop_min_similarity");
      o.crop.min_center_activation = c.get_real("mine.crop_center_activation");
      o.match = match_options(c);
      const auto res = mine_scene(scene, labels, *matcher, *seg, *sim, o);
      write_mining(res, out);
      ordered_json j;
      j["pairs_considered"] = res.pairs_considered;
      j["zoom_pairs"] = res.zoom_pairs.size();
      j["crops"] = res.crops.size();
      j["no_match"] = res.zoom_counters.no_match;
      ordered_json rejected;
      for (std::size_t f = 0; f < kZoomFilterCount; ++f) {
        rejected[to_string(static_cast<ZoomFilter>(f))] = res.zoom_counters.rejected[f];
      }
      j["zoom_rejected"] = rejected;
      ordered_json crop_rejected;
      for (std::size_t f = 0; f < kCropConditionCount; ++f) {
        crop_rejected[to_string(static_cast<CropCondition>(f))] = res.crop_counters.rejected[f];
      }
      j["crop_rejected"] = crop_rejected;
      write_json(out / "stats.json", j);
      break;
    }

    case Stage::kFinetuneSeg: {
      const auto scene = load_all(scene_root_);
      const auto mine_dir = stage_dir(Stage::kMine);
      const auto zoom = read_zoom_pairs(mine_dir);
      const auto crops = read_crops(mine_dir);
      if (zoom.empty()) throw Error("finetune-seg: mining produced no zoom pairs; relax the mine.* filters");
      const auto frozen = make_seg(c.get("backend.seg"), scene_root_);
      const auto sim = make_sim(c.get("backend.sim"));
      FeatureSegModel model(seg_model_config(c));
      FinetuneSchedule s;
      s.epochs = static_cast<int>(c.get_int("finetune_seg.epochs"));
      s.lr = c.get_real("finetune_seg.lr");
      s.optimizer = c.get("finetune_seg.optimizer");
      s.corresp_per_step = static_cast<int>(c.get_int("finetune_seg.corresp_per_step"));
      s.crops_per_step = static_cast<int>(c.get_int("finetune_seg.crops_per_step"));
      s.plural_p = c.get_real("finetune_seg.plural_p");
      s.seed = seed;
      const auto res = finetune_segmenter(
          model, zoom, crops, [&](const std::string& id) -> const RgbImage& { return scene.image(id); }, *frozen, *sim, s);
      model.save(out / "seg_model.bin");
      ordered_json j;
      j["zoom_pairs"] = zoom.size();
      j["crops"] = crops.size();
      j["steps"] = res.steps.size();
      j["skipped"] = res.skipped;
      j["pluralized"] = res.pluralized;
      j["epoch_mean_total"] = res.epoch_mean_total;
      write_json(out / "report.json", j);
      break;
    }

    case Stage::kFinetuneClip: {
      const auto scene = load_all(scene_root_);
      const auto labels = distill::read_pseudolabels(stage_dir(Stage::kDistill) / "pseudolabels.jsonl");
      std::vector<RetrievalPair> raw;
      for (const auto& l : labels) {
        if (l.status == distill::LabelStatus::kValid) raw.push_back({&scene.image(l.image_id), l.cleaned});
      }
      const auto pairs = filter_retrieval_pairs(raw);
      if (pairs.size() < 2) throw Error("finetune-clip: fewer than two usable pseudo-labelled images");
      std::set<std::string> vocab_set;
      for (const auto& p : pairs) vocab_set.insert(p.label);
      const std::vector<std::string> vocab(vocab_set.begin(), vocab_set.end());
      RetrievalConfig rc;
      rc.seed = static_cast<std::uint64_t>(c.get_int("seed")) + 1;
      ToyRetrievalEncoder encoder(rc);
      const auto recall = [&](const ToyRetrievalEncoder& enc) {
        std::vector<std::vector<std::string>> rankings;
        std::vector<std::string> gold;
        for (const auto& p : pairs) {
          std::vector<std::string> ranked;
          for (const auto& [term, score] : retrieve_terms(*p.image, vocab, static_cast<int>(vocab.size()), enc).ranked) {
            ranked.push_back(term);
          }
          rankings.push_back(std::move(ranked));
          gold.push_back(p.label);
        }
        return recall_at_k(rankings, gold, {1, 5});
      };
      const auto before = recall(encoder);
      RetrievalSchedule s;
      s.epochs = static_cast<int>(c.get_int("finetune_clip.epochs"));
      s.lr = c.get_real("finetune_clip.lr");
      s.batch_size = static_cast<int>(c.get_int("finetune_clip.batch_size"));
      s.scale = c.get_real("finetune_clip.scale");
      s.optimizer = c.get("finetune_clip.optimizer");
      s.seed = seed;
      const auto res = train_retrieval(encoder, pairs, s);
      const auto after = recall(encoder);
      encoder.save(out / "encoder.bin");
      ordered_json j;
      j["pairs"] = pairs.size();
      j["vocab"] = vocab;
      j["recall_at_1_before"] = before.recall.at(1);
      j["recall_at_1_after"] = after.recall.at(1);
      j["recall_at_5_before"] = before.recall.at(5);
      j["recall_at_5_after"] = after.recall.at(5);
      j["epoch_mean_loss"] = res.epoch_mean_loss;
      write_json(out / "report.json", j);
      break;
    }

    case Stage::kTrainField: {
      const auto scene = load_all(scene_root_);
      const auto posed = scene.posed();
      if (posed.empty()) throw Error("train-field: the scene has no posed images");
      FieldConfig f;
      f.bounds = parse_bounds(c.get("field.bounds"), scene_root_);
      f.grid_resolution = static_cast<int>(c.get_int("field.grid_resolution"));
      f.feature_channels = static_cast<int>(c.get_int("field.feature_channels"));
      f.position_bands = static_cast<int>(c.get_int("field.position_bands"));
      f.direction_bands = static_cast<int>(c.get_int("field.direction_bands"));
      f.hidden = static_cast<int>(c.get_int("field.hidden"));
      f.color_hidden = static_cast<int>(c.get_int("field.color_hidden"));
      f.appearance_dim = static_cast<int>(c.get_int("field.appearance_dim"));
      f.samples_per_ray = static_cast<int>(c.get_int("field.samples_per_ray"));
      f.weight_threshold = c.get_real("field.weight_threshold");
      f.seed = seed;
      std::vector<PosedView> views;
      std::string ids;
      for (const auto* r : posed) {
        views.push_back({r->id, *r->camera, &scene.image(r->id)});
        ids += r->id + "\n";
      }
      RadianceBackbone bb(f, views.size());
      RgbTrainConfig t;
      t.iterations = static_cast<int>(c.get_int("rgb.iterations"));
      t.batch_rays = static_cast<int>(c.get_int("rgb.batch_rays"));
      t.lr = c.get_real("rgb.lr");
      t.grid_lr = c.get_real("rgb.grid_lr");
      t.opacity_weight = c.get_real("rgb.opacity_weight");
      t.distortion_weight = c.get_real("rgb.distortion_weight");
      t.sparsity_weight = c.get_real("rgb.sparsity_weight");
      t.seed = seed;
      const auto res = train_rgb_field(bb, views, t);
      bb.save(out / "backbone.bin");
      write_text_atomic(out / "views.txt", ids);
      ordered_json j;
      j["views"] = views.size();
      j["iterations"] = res.losses.size();
      if (!res.losses.empty()) {
        j["first_loss"] = res.losses.front();
        j["last_loss"] = res.losses.back();
      }
      write_json(out / "report.json", j);
      break;
    }

    case Stage::kLocalize: {
      const auto scene = load_all(scene_root_);
      const auto field_dir = stage_dir(Stage::kTrainField);
      const auto bb = RadianceBackbone::load(field_dir / "backbone.bin");
      const auto view_ids = read_lines(field_dir / "views.txt");
      std::map<std::string, std::size_t> appearance_index;
      for (std::size_t k = 0; k < view_ids.size(); ++k) appearance_index[view_ids[k]] = k;
      const auto seg = make_seg(c.get("backend.seg"), scene_root_);
      const auto view_seg = make_seg(c.get("localize.view_seg"), scene_root_);
      const auto building = scene.manifest.building_prompt();
      const auto posed_view = [&](const std::string& id) {
        const auto* rec = scene.manifest.find(id);
        if (!rec || !rec->camera) throw Error("localize: field view " + id + " is not a posed scene image");
        return PosedView{id, *rec->camera, &scene.image(id)};
      };
      const auto appearance = [&](const std::string& id) {
        return Eigen::VectorXd(bb.appearance.col(static_cast<Eigen::Index>(appearance_index.at(id))));
      };

      // View selection is shared by all prompts.
      std::vector<std::string> selected = view_ids;
      ordered_json selection;
      selection["mode"] = c.get("localize.views");
      if (c.get("localize.views") == "selected") {
        std::vector<ViewScore> scores;
        for (const auto& id : view_ids) {
          const auto v = posed_view(id);
          const auto facade = view_seg->segment(ImageRegion::whole(id, *v.image), building);
          const auto rerender = render_view(bb, nullptr, v.camera, v.image->width(), v.image->height(), appearance(id), workers);
          const auto facade2 = view_seg->segment(ImageRegion::whole(id, rerender.rgb), building);
          scores.push_back(score_view(id, facade, facade2));
        }
        selected = select_views(scores, static_cast<std::size_t>(c.get_int("localize.view_count")));
        auto js = ordered_json::array();
        for (const auto& s : scores) js.push_back({{"image_id", s.image_id}, {"m", s.m}, {"c", s.c}, {"x", s.x}, {"s", s.s()}});
        selection["scores"] = js;
      }
      selection["selected"] = selected;
      write_json(out / "selection.json", selection);

      std::optional<FeatureSegModel> finetuned;
      if (c.get("localize.seg") == "finetuned") finetuned = FeatureSegModel::load(stage_dir(Stage::kFinetuneSeg) / "seg_model.bin");

      const auto prompts = c.get_list("localize.prompts");
      if (prompts.empty()) throw InvalidArgument("localize.prompts is empty");
      for (const auto& prompt : prompts) {
        const auto category = category_of(prompt);
        if (!finetuned && c.get("backend.seg") == "file" && !fs::is_directory(scene_root_ / "masks" / category)) {
          throw Error("localize: no mask files for prompt '" + prompt + "' under " + (scene_root_ / "masks").string());
        }
        std::vector<SemanticView> training;
        for (const auto& id : selected) {
          SemanticView sv;
          sv.view = posed_view(id);
          sv.appearance_index = appearance_index.at(id);
          sv.mask = finetuned ? tiled_segment(*sv.view.image, prompt, *finetuned, static_cast<int>(c.get_int("localize.max_dim")),
                                              static_cast<int>(c.get_int("localize.stride")))
                              : seg->segment(ImageRegion::whole(id, *sv.view.image), prompt);
          training.push_back(std::move(sv));
        }
        SemanticHead head(bb.config.hidden, seed ^ text::fnv1a(category));
        HeadTrainConfig h;
        h.iterations = static_cast<int>(c.get_int("head.iterations"));
        h.batch_rays = static_cast<int>(c.get_int("head.batch_rays"));
        h.lr = c.get_real("head.lr");
        h.target_threshold = c.get_real("head.target_threshold");
        h.seed = seed ^ text::fnv1a(category);
        const auto res = train_semantic_head(bb, head, training, h);
        head.save(out / "heads" / (category + ".bin"));

        std::vector<std::pair<std::string, ProbMap>> maps;
        for (const auto& id : view_ids) {
          const auto v = posed_view(id);
          auto rendered = render_view(bb, &head, v.camera, v.image->width(), v.image->height(), appearance(id), workers);
          save_probmap(rendered.semantic, out / "maps" / category / (id + ".png"));
          maps.emplace_back(id, std::move(rendered.semantic));
        }
        auto ranking = ordered_json::array();
        for (const auto& [id, score] : rank_by_overlap(maps)) ranking.push_back({{"image_id", id}, {"score", score}});
        ordered_json j;
        j["prompt"] = prompt;
        j["category"] = category;
        j["training_views"] = training.size();
        j["head_iterations"] = res.losses.size();
        if (!res.losses.empty()) {
          j["first_loss"] = res.losses.front();
          j["last_loss"] = res.losses.back();
        }
        j["ranking"] = ranking;
        write_json(out / "reports" / (category + ".json"), j);
      }
      break;
    }

    case Stage::kPropagateGt: {
      const auto scene = load_scene(scene_root_);
      const auto category = category_of(c.get("propagate.category"));
      const auto gt_dir = scene_root_ / "gt" / category;
      if (!fs::is_directory(gt_dir)) throw Error("propagate-gt: no annotations under " + gt_dir.string());
      std::vector<SeedAnnotation> seeds;
      const auto add_seed = [&](const std::string& id) {
        const auto path = gt_dir / (id + ".png");
        if (!fs::exists(path)) throw Error("propagate-gt: no annotation for seed " + id);
        seeds.push_back({id, category, load_mask(path), AnnotationOrigin::kManualSeed, {}});
      };
      if (c.get("propagate.seeds") == "auto") {
        const auto want = static_cast<std::size_t>(c.get_int("propagate.seed_count"));
        for (const auto& r : scene.images) {
          if (seeds.size() >= want) break;
          const auto path = gt_dir / (r.id + ".png");
          if (fs::exists(path) && load_mask(path).count() > 0) add_seed(r.id);
        }
      } else {
        for (const auto& id : c.get_list("propagate.seeds")) add_seed(id);
      }
      if (seeds.empty()) throw Error("propagate-gt: no seed annotations for " + category);

      const auto matcher = make_matcher(c.get("backend.matcher"), scene_root_);
      const auto mo = match_options(c);
      std::set<std::string> seed_ids;
      for (const auto& s : seeds) seed_ids.insert(s.image_id);
      std::vector<MatchResult> matches;
      std::map<std::string, std::pair<int, int>> sizes;
      const auto region = [](const ImageRecord& r) { return ImageRegion{r.id, nullptr, Rect{0, 0, r.width, r.height}}; };
      for (const auto& s : seeds) {
        const auto* seed_rec = scene.find(s.image_id);
        for (const auto& r : scene.images) {
          sizes[r.id] = {r.width, r.height};
          if (seed_ids.count(r.id)) continue;
          auto m = estimate_match(matcher->match(region(*seed_rec), region(r)), mo);
          if (!m) continue;
          m->first_id = s.image_id;
          m->second_id = r.id;
          matches.push_back(std::move(*m));
        }
      }
      PropagationOptions po;
      po.min_inliers = static_cast<int>(c.get_int("propagate.min_inliers"));
      po.kappa_max = c.get_real("propagate.kappa_max");
      po.warp_threshold = c.get_real("propagate.warp_threshold");
      const auto res = propagate_masks(seeds, matches, sizes, po);
      for (const auto& s : seeds) save_mask(s.mask, out / "gt" / category / (s.image_id + ".png"));
      for (const auto& m : res.masks) save_mask(m.mask, out / "gt" / category / (m.image_id + ".png"));
      write_review(out / "review.jsonl", res.review);
      write_review(out / "skipped.jsonl", res.skipped);
      break;
    }

    case Stage::kEval: {
      const auto scene = load_scene(scene_root_);
      std::vector<std::string> categories;
      for (const auto& p : c.get_list("localize.prompts")) categories.push_back(category_of(p));
      const auto gt_dir = c.get("eval.gt") == "propagated" ? stage_dir(Stage::kPropagateGt) / "gt" : scene_root_ / "gt";
      const auto table = evaluate_predictions(scene.landmark_name, gt_dir, stage_dir(Stage::kLocalize) / "maps", categories);
      write_eval_json(table, out / "eval.json");
      break;
    }
  }
}

StageResult run_stage(const PipelineConfig& config, Stage stage, const fs::path& cache_dir, bool force) {
  Pipeline p(config, cache_dir, force);
  return p.run(stage);
}

}  // namespace halo::pipeline
