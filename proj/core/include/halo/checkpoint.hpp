#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace halo {

struct Tensor {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;  // column-major, as Eigen stores it
};

/// Versioned binary blob: magic, format version, kind, architecture
/// settings (key/value text), their hash, named tensors, then an FNV-1a
/// checksum of everything before it.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string kind;
  std::map<std::string, std::string> settings;
  std::vector<Tensor> tensors;

  std::uint64_t settings_hash() const;
  void put(const std::string& name, const Eigen::MatrixXd& m);
  void put(const std::string& name, const Eigen::VectorXd& v);
  void put(const std::string& name, std::span<const double> flat);
  const Tensor& get(const std::string& name) const;
  /// Throws IoError if the stored shape is not rows x cols.
  Eigen::MatrixXd matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const;
  Eigen::VectorXd vector(const std::string& name, Eigen::Index size) const;
  const std::string& setting(const std::string& key) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
/// Atomic write.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws IoError on bad magic, version, checksum or settings hash, or a kind other than `expected_kind`.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_kind);

}  // namespace halo
