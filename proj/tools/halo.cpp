// halo: command line entry point for the pipeline stages and the utilities
// around them (synthetic scenes, one-off segmentation, retrieval, rendering).

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "halo/bench_eval.hpp"
#include "halo/core_data.hpp"
#include "halo/pipeline.hpp"
#include "halo/retrieval.hpp"
#include "halo/semantic_field.hpp"
#include "halo/synthetic.hpp"
#include "halo/text.hpp"
#include "halo/vlm_adapt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_file;
  std::optional<long long> seed;
  std::string cache_dir = "halo-cache";
  bool force = false;
  std::vector<std::string> sets;
  std::optional<int> workers;
  bool verbose = false;
};

const std::vector<std::string> kDefaultVocab{"arch",   "buttress", "column", "dome",  "facade", "portal",
                                             "rose window", "spire", "tower", "window"};

halo::pipeline::PipelineConfig build_config(const Globals& g) {
  auto c = g.config_file.empty() ? halo::pipeline::PipelineConfig() : halo::pipeline::PipelineConfig::load(g.config_file);
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw halo::InvalidArgument("--set expects key=value, got '" + s + "'");
    c.set(halo::text::trim(s.substr(0, eq)), s.substr(eq + 1));
  }
  if (g.seed) c.set("seed", std::to_string(*g.seed));
  if (g.workers) c.set("workers", std::to_string(*g.workers));
  return c;
}

void print_result(const halo::pipeline::StageResult& r) {
  std::cout << halo::pipeline::to_string(r.stage) << " " << (r.cache_hit ? "cached" : "computed") << " " << r.key << "\n";
  for (const auto& a : r.artifacts) std::cout << "  " << a.string() << "\n";
}

halo::Camera read_camera(const fs::path& path, int& width, int& height, std::optional<int>& appearance) {
  std::ifstream in(path);
  if (!in) throw halo::IoError("cannot open camera " + path.string());
  json j;
  try {
    in >> j;
    halo::Camera cam;
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) cam.intrinsics(r, k) = j.at("intrinsics").at(r).at(k).get<double>();
      for (int k = 0; k < 4; ++k) cam.pose(r, k) = j.at("pose").at(r).at(k).get<double>();
    }
    width = j.at("width").get<int>();
    height = j.at("height").get<int>();
    if (j.contains("appearance")) appearance = j.at("appearance").get<int>();
    return cam;
  } catch (const json::exception& e) {
    throw halo::IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"halo: text-driven localization of architectural concepts in photo collections"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--cache-dir", g.cache_dir, "artifact cache directory")->capture_default_str();
  app.add_flag("--force", g.force, "recompute cached stages and rebind a cache built for another scene");
  app.add_option("--set", g.sets, "override a config key (key=value), repeatable");
  app.add_option("--workers", g.workers, "threads for parallel stages");
  app.add_flag("-v,--verbose", g.verbose, "debug logging");

  // Pipeline stages. --scene overrides the config's scene key.
  std::string scene;
  std::string prompt;
  std::string views;
  std::string category;
  std::string pred_dir;
  std::string eval_out = "eval.json";
  const auto stage_cmd = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--scene", scene, "scene root");
    return sub;
  };
  stage_cmd("distill", "pseudo-label every scene image from its metadata");
  stage_cmd("mine", "mine zoom pairs and crops for segmentation fine-tuning");
  stage_cmd("finetune-seg", "fine-tune the segmentation decoder on mined data");
  stage_cmd("finetune-clip", "fine-tune the retrieval encoder on pseudo-labels");
  stage_cmd("train-field", "train the radiance field on the posed images");
  auto* localize = stage_cmd("localize", "train a semantic head per prompt and render per-view maps");
  localize->add_option("--prompt", prompt, "text prompt (default: localize.prompts)");
  localize->add_option("--views", views, "training views")->check(CLI::IsMember({"all", "selected"}));
  auto* propagate = stage_cmd("propagate-gt", "propagate seed annotations through matched views");
  propagate->add_option("--category", category, "category to propagate");
  auto* eval = stage_cmd("eval", "score localization maps against ground truth");
  eval->add_option("--pred-dir", pred_dir, "score this prediction directory directly instead of the localize output");
  eval->add_option("--out", eval_out, "eval.json path when --pred-dir is given")->capture_default_str();

  auto* show = app.add_subcommand("config", "print the resolved configuration and stage keys");
  show->add_option("--scene", scene, "scene root");

  // Utilities.
  std::string out;
  halo::synthetic::SceneSpec spec;
  auto* make_scene = app.add_subcommand("make-scene", "write a synthetic landmark scene");
  make_scene->add_option("--out", out, "scene root (must be empty or absent)")->required();
  make_scene->add_option("--width", spec.width)->capture_default_str();
  make_scene->add_option("--height", spec.height)->capture_default_str();
  make_scene->add_option("--ring-views", spec.ring_views)->capture_default_str();
  make_scene->add_option("--focal", spec.focal)->capture_default_str();
  make_scene->add_option("--jitter", spec.illumination_jitter, "per-view illumination gain jitter")->capture_default_str();
  make_scene->add_option("--texture-cell", spec.texture_cell, "texture cell size in scene units")->capture_default_str();
  make_scene->add_option("--mask-noise", spec.mask_noise, "salt-and-pepper fraction of the mock masks")->capture_default_str();
  make_scene->add_option("--name", spec.landmark_name)->capture_default_str();

  std::string image_path;
  std::string text;
  std::string model_path;
  auto* segment = app.add_subcommand("segment", "segment one image for a text prompt and write a probability PNG");
  segment->add_option("--image", image_path)->required()->check(CLI::ExistingFile);
  segment->add_option("--text", text)->required();
  segment->add_option("--model", model_path, "fine-tuned segmenter checkpoint (default: palette segmenter)");
  segment->add_option("--out", out)->required();

  int k = 8;
  std::string vocab_path;
  auto* retrieve = app.add_subcommand("retrieve", "rank vocabulary terms for an image");
  retrieve->add_option("--image", image_path)->required()->check(CLI::ExistingFile);
  retrieve->add_option("--k", k)->capture_default_str();
  retrieve->add_option("--model", model_path, "retrieval encoder checkpoint")->required()->check(CLI::ExistingFile);
  retrieve->add_option("--vocab", vocab_path, "one term per line (default: a small architectural list)");

  std::string checkpoint;
  std::string head_path;
  std::string camera_path;
  std::string semantic_out;
  auto* render = app.add_subcommand("render", "render a view of a trained field");
  render->add_option("--checkpoint", checkpoint, "backbone checkpoint")->required()->check(CLI::ExistingFile);
  render->add_option("--head", head_path, "semantic head checkpoint")->check(CLI::ExistingFile);
  render->add_option("--camera", camera_path, "camera JSON: width, height, intrinsics, pose, optional appearance")
      ->required()
      ->check(CLI::ExistingFile);
  render->add_option("--out", out, "RGB PNG")->required();
  render->add_option("--semantic-out", semantic_out, "semantic PNG (needs --head)");

  std::string image_id;
  auto* export_camera = app.add_subcommand("export-camera", "write the camera JSON of a scene image");
  export_camera->add_option("--scene", scene)->required();
  export_camera->add_option("--image", image_id)->required();
  export_camera->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_pattern("[%l] %v");

  try {
    auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    namespace hp = halo::pipeline;

    if (name == "make-scene") {
      if (g.seed) spec.seed = static_cast<std::uint64_t>(*g.seed);
      const auto m = halo::synthetic::make_synthetic_scene(spec, out);
      std::cout << "wrote " << m.images.size() << " images to " << out << "\n";
      return 0;
    }
    if (name == "segment") {
      const auto image = halo::load_image(image_path);
      halo::ProbMap map;
      if (model_path.empty()) {
        map = halo::synthetic::PaletteSegOracle().segment(halo::ImageRegion::whole("image", image), text);
      } else {
        map = halo::tiled_segment(image, text, halo::FeatureSegModel::load(model_path));
      }
      halo::save_probmap(map, out);
      std::cout << out << "\n";
      return 0;
    }
    if (name == "retrieve") {
      auto vocab = kDefaultVocab;
      if (!vocab_path.empty()) {
        vocab.clear();
        std::ifstream in(vocab_path);
        for (std::string line; std::getline(in, line);) {
          if (!halo::text::trim(line).empty()) vocab.push_back(halo::text::trim(line));
        }
      }
      const auto encoder = halo::ToyRetrievalEncoder::load(model_path);
      const auto res = halo::retrieve_terms(halo::load_image(image_path), vocab, k, encoder);
      for (const auto& [term, score] : res.ranked) std::cout << term << "\t" << score << "\n";
      if (res.truncated) spdlog::warn("k exceeds the vocabulary size ({} terms)", vocab.size());
      return 0;
    }
    if (name == "render") {
      int width = 0, height = 0;
      std::optional<int> appearance_index;
      const auto cam = read_camera(camera_path, width, height, appearance_index);
      const auto bb = halo::RadianceBackbone::load(checkpoint);
      Eigen::VectorXd appearance = Eigen::VectorXd::Zero(bb.config.appearance_dim);
      if (appearance_index) {
        if (*appearance_index < 0 || static_cast<std::size_t>(*appearance_index) >= bb.appearance_count()) {
          throw halo::InvalidArgument("appearance index out of range");
        }
        appearance = bb.appearance.col(*appearance_index);
      }
      std::optional<halo::SemanticHead> head;
      if (!head_path.empty()) head = halo::SemanticHead::load(head_path);
      if (!semantic_out.empty() && !head) throw halo::InvalidArgument("--semantic-out needs --head");
      const auto view = halo::render_view(bb, head ? &*head : nullptr, cam, width, height, appearance, g.workers.value_or(1));
      halo::save_png(view.rgb, out);
      std::cout << out << "\n";
      if (!semantic_out.empty()) {
        halo::save_probmap(view.semantic, semantic_out);
        std::cout << semantic_out << "\n";
      }
      return 0;
    }
    if (name == "export-camera") {
      const auto m = halo::load_scene(scene);
      const auto* rec = m.find(image_id);
      if (!rec || !rec->camera) throw halo::InvalidArgument("no posed image " + image_id + " in " + scene);
      json j;
      j["width"] = rec->width;
      j["height"] = rec->height;
      for (int r = 0; r < 3; ++r) {
        j["intrinsics"].push_back({rec->camera->intrinsics(r, 0), rec->camera->intrinsics(r, 1), rec->camera->intrinsics(r, 2)});
        j["pose"].push_back({rec->camera->pose(r, 0), rec->camera->pose(r, 1), rec->camera->pose(r, 2), rec->camera->pose(r, 3)});
      }
      halo::write_text_atomic(out, j.dump(2) + "\n");
      std::cout << out << "\n";
      return 0;
    }

    auto config = build_config(g);
    if (!scene.empty()) config.set("scene", scene);

    if (name == "eval" && !pred_dir.empty()) {
      if (config.get("scene").empty()) throw halo::InvalidArgument("eval --pred-dir needs --scene");
      const auto m = halo::load_scene(config.get("scene"));
      const auto table = halo::evaluate_predictions(m.landmark_name, fs::path(config.get("scene")) / "gt", pred_dir);
      halo::write_eval_json(table, eval_out);
      std::cout << eval_out << "\nmAP " << table.map << "\n";
      return 0;
    }
    if (name == "localize") {
      if (!prompt.empty()) config.set("localize.prompts", prompt);
      if (!views.empty()) config.set("localize.views", views);
    }
    if (name == "propagate-gt" && !category.empty()) config.set("propagate.category", category);

    hp::Pipeline pipeline(config, g.cache_dir, g.force);
    if (name == "config") {
      std::cout << config.canonical_text();
      for (const auto s : hp::kAllStages) {
        std::cout << "# " << hp::to_string(s) << " " << pipeline.stage_key(s) << (pipeline.cached(s) ? " cached" : "")
                  << "\n";
      }
      return 0;
    }
    print_result(pipeline.run(hp::parse_stage(name)));
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
