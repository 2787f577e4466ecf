#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "halo/core_data.hpp"
#include "halo/error.hpp"

namespace halo::distill {

enum class LabelStatus { kValid, kFilteredUnknown, kFilteredEmpty };

std::string to_string(LabelStatus status);
LabelStatus parse_label_status(std::string_view text);

struct PseudoLabel {
  std::string image_id;
  std::string raw;
  std::string cleaned;  // empty unless status is kValid
  LabelStatus status = LabelStatus::kFilteredEmpty;
  bool operator==(const PseudoLabel&) const = default;
};

/// Instruction-following text generator. Implementations must be
/// deterministic for a fixed seed.
class TextGenBackend {
 public:
  virtual ~TextGenBackend() = default;
  virtual std::string generate(const std::string& prompt) = 0;
  virtual int beam_width() const { return beam_width_; }
  virtual void set_beam_width(int beams) { beam_width_ = beams; }
  virtual bool concurrent_safe() const = 0;
  /// Stable identity (kind + version + settings) used in cache keys.
  virtual std::string identity() const = 0;

 protected:
  int beam_width_ = 4;
};

/// Raised when a backend call fails; carries the image being labelled.
class GenerationError : public Error {
 public:
  GenerationError(std::string image_id, const std::string& what)
      : Error("generation failed for " + image_id + ": " + what), image_id_(std::move(image_id)) {}
  const std::string& image_id() const { return image_id_; }
  bool retryable() const { return true; }

 private:
  std::string image_id_;
};

/// Exact prompt lookup; unknown prompts answer "unknown".
class TableBackend : public TextGenBackend {
 public:
  explicit TableBackend(std::map<std::string, std::string> table) : table_(std::move(table)) {}
  std::string generate(const std::string& prompt) override;
  bool concurrent_safe() const override { return true; }
  std::string identity() const override;

 private:
  std::map<std::string, std::string> table_;
};

/// Rule-based stand-in for an LLM: finds the first architectural term in the
/// description part of the prompt (after the instruction line), keeps one
/// preceding compass word if present, and answers in title case.
class RuleBackend : public TextGenBackend {
 public:
  explicit RuleBackend(std::uint64_t seed = 0);
  std::string generate(const std::string& prompt) override;
  bool concurrent_safe() const override { return true; }
  std::string identity() const override;

 private:
  std::uint64_t seed_;
};

/// Runs an external program per prompt: `<path> --seed N --beams B`, prompt on
/// stdin, first stdout line is the answer.
class CommandBackend : public TextGenBackend {
 public:
  CommandBackend(std::filesystem::path program, std::uint64_t seed);
  std::string generate(const std::string& prompt) override;
  bool concurrent_safe() const override { return false; }
  std::string identity() const override;

 private:
  std::filesystem::path program_;
  std::uint64_t seed_;
};

/// Parses "mock" or "cmd:<path>".
std::unique_ptr<TextGenBackend> make_backend(std::string_view spec, std::uint64_t seed);

inline constexpr std::string_view kInstructionTemplate =
    "What architectural feature of {building} is described in the following image? "
    "Write \"unknown\" if it is not specified.";

/// Instruction with the building substituted, a newline, then filename,
/// caption and categories joined by "; " (empty fields skipped).
std::string build_prompt(const ImageMetadata& meta, std::string_view building_name);

std::string generate_pseudolabel(const std::string& prompt, TextGenBackend& backend,
                                 std::string_view image_id);

struct CleanupConfig {
  std::vector<std::string> uncertainty_prefixes{"unknown", "undefined", "undetermined", "unspecified",
                                                "unclear"};
  std::vector<std::string> direction_words{"north",    "south",    "east",    "west",
                                           "northern", "southern", "eastern", "western"};
};

PseudoLabel clean_pseudolabel(std::string_view raw, const CleanupConfig& config = {});

struct DistillStats {
  std::size_t valid = 0;
  std::size_t filtered_unknown = 0;
  std::size_t filtered_empty = 0;
  std::size_t total() const { return valid + filtered_unknown + filtered_empty; }
};

struct DistillResult {
  std::vector<PseudoLabel> labels;
  DistillStats stats;
};

/// Labels every image of the scene. Uses up to `workers` threads when the
/// backend allows concurrent calls; output order follows the manifest.
DistillResult distill_scene(const SceneManifest& scene, TextGenBackend& backend, int workers = 1,
                            const CleanupConfig& config = {});

void write_pseudolabels(const std::vector<PseudoLabel>& labels, const std::filesystem::path& path);
std::vector<PseudoLabel> read_pseudolabels(const std::filesystem::path& path);

}  // namespace halo::distill
