#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "halo/error.hpp"

namespace halo::pipeline {

enum class Stage { kDistill, kMine, kFinetuneSeg, kFinetuneClip, kTrainField, kLocalize, kPropagateGt, kEval };
inline constexpr Stage kAllStages[] = {Stage::kDistill,    Stage::kMine,     Stage::kFinetuneSeg,
                                       Stage::kFinetuneClip, Stage::kTrainField, Stage::kLocalize,
                                       Stage::kPropagateGt, Stage::kEval};

std::string to_string(Stage stage);
Stage parse_stage(std::string_view name);

/// A prerequisite stage has no cached output for the current config.
class MissingPrerequisite : public Error {
 public:
  MissingPrerequisite(Stage stage, Stage needed);
  Stage needed() const { return needed_; }

 private:
  Stage needed_;
};

/// The cache directory belongs to a different scene, or a cached entry does
/// not match its key. Pass force to override.
class CacheMismatch : public Error {
 public:
  using Error::Error;
};

enum class ValueType { kInt, kReal, kText };

struct KeyInfo {
  std::string name;
  ValueType type = ValueType::kText;
  std::string full_default;
  std::string desk_default;
  std::vector<Stage> stages;  // empty: global (every stage)
  bool hashed = true;         // runtime knobs such as worker counts are not
  std::vector<std::string> choices;  // empty: any value of the type
};

/// Every accepted key with its defaults.
const std::vector<KeyInfo>& registry();
const KeyInfo* find_key(std::string_view name);

/// Flat key=value configuration. Keys not set explicitly take the default of
/// the current preset ("desk" or "full"); unknown keys and ill-typed values
/// are errors.
class PipelineConfig {
 public:
  PipelineConfig();

  /// Parses "key = value" lines; '#' starts a comment. Throws InvalidArgument
  /// naming the line for unknown keys, duplicates or bad values.
  static PipelineConfig parse(std::string_view text);
  static PipelineConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma separated
  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }

  /// Sorted key=value lines of every key.
  std::string canonical_text() const;

 private:
  void apply_preset();

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> explicit_;
};

/// FNV-1a over every file under the scene root (relative path and bytes, in
/// path order).
std::uint64_t scene_fingerprint(const std::filesystem::path& root);

struct StageResult {
  Stage stage;
  std::string key;  // 16 hex digits
  std::filesystem::path dir;
  bool cache_hit = false;
  std::vector<std::filesystem::path> artifacts;  // top-level entries of dir
};

/// Exclusive ownership of a cache directory for one pipeline run.
class CacheLock {
 public:
  explicit CacheLock(const std::filesystem::path& cache_dir);
  ~CacheLock();
  CacheLock(const CacheLock&) = delete;
  CacheLock& operator=(const CacheLock&) = delete;

 private:
  int fd_ = -1;
};

class Pipeline {
 public:
  /// Locks the cache directory for the object's lifetime and binds it to the
  /// config's scene; a cache bound to another scene throws CacheMismatch
  /// unless `force`.
  Pipeline(PipelineConfig config, std::filesystem::path cache_dir, bool force = false);

  const PipelineConfig& config() const { return config_; }
  const std::filesystem::path& cache_dir() const { return cache_dir_; }

  /// Stages whose outputs `stage` reads under the current config.
  std::vector<Stage> prerequisites(Stage stage) const;
  /// Covers the stage's hashed keys, backend identities, the implementation
  /// version, the scene fingerprint and the prerequisite keys.
  std::string stage_key(Stage stage) const;
  std::filesystem::path stage_dir(Stage stage) const;
  bool cached(Stage stage) const;

  /// Returns the cached output when present (unless forced), otherwise runs
  /// the stage into a temporary directory and renames it into place.
  StageResult run(Stage stage);

  /// Number of stage computations (cache misses) performed by this object.
  std::size_t computations() const { return computations_; }

 private:
  std::string stage_text(Stage stage) const;
  void compute(Stage stage, const std::filesystem::path& out);

  PipelineConfig config_;
  std::filesystem::path cache_dir_;
  std::filesystem::path scene_root_;
  std::uint64_t scene_hash_ = 0;
  bool force_ = false;
  std::size_t computations_ = 0;
  std::unique_ptr<CacheLock> lock_;
};

StageResult run_stage(const PipelineConfig& config, Stage stage, const std::filesystem::path& cache_dir,
                      bool force = false);

}  // namespace halo::pipeline
