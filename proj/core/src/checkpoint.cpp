#include "halo/checkpoint.hpp"

#include <cstring>

#include "halo/error.hpp"
#include "halo/image.hpp"
#include "halo/text.hpp"

namespace halo {

namespace {

constexpr char kMagic[8] = {'H', 'A', 'L', 'O', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint64_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
  void need(std::uint64_t n) const {
    if (n > bytes.size() - pos) throw IoError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

std::uint64_t payload_hash(std::span<const std::uint8_t> bytes) {
  return text::fnv1a({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
}

}  // namespace

std::uint64_t Checkpoint::settings_hash() const {
  std::uint64_t h = text::fnv1a(kind);
  for (const auto& [k, v] : settings) h = text::fnv1a(v, text::fnv1a(k, h));
  return h;
}

void Checkpoint::put(const std::string& name, const Eigen::MatrixXd& m) {
  tensors.push_back({name, m.rows(), m.cols(), std::vector<double>(m.data(), m.data() + m.size())});
}

void Checkpoint::put(const std::string& name, const Eigen::VectorXd& v) {
  tensors.push_back({name, v.size(), 1, std::vector<double>(v.data(), v.data() + v.size())});
}

void Checkpoint::put(const std::string& name, std::span<const double> flat) {
  tensors.push_back({name, static_cast<std::int64_t>(flat.size()), 1, std::vector<double>(flat.begin(), flat.end())});
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw IoError("checkpoint (" + kind + ") has no tensor '" + name + "'");
}

Eigen::MatrixXd Checkpoint::matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
  const auto& t = get(name);
  if (t.rows != rows || t.cols != cols) {
    throw IoError("checkpoint tensor '" + name + "' has shape " + std::to_string(t.rows) + "x" +
                  std::to_string(t.cols) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return Eigen::Map<const Eigen::MatrixXd>(t.data.data(), rows, cols);
}

Eigen::VectorXd Checkpoint::vector(const std::string& name, Eigen::Index size) const {
  return matrix(name, size, 1);
}

const std::string& Checkpoint::setting(const std::string& key) const {
  auto it = settings.find(key);
  if (it == settings.end()) throw IoError("checkpoint (" + kind + ") lacks setting '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + 8);
  w.pod(Checkpoint::kFormatVersion);
  w.str(ckpt.kind);
  w.pod(static_cast<std::uint64_t>(ckpt.settings.size()));
  for (const auto& [k, v] : ckpt.settings) {
    w.str(k);
    w.str(v);
  }
  w.pod(ckpt.settings_hash());
  w.pod(static_cast<std::uint64_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    w.pod(t.rows);
    w.pod(t.cols);
    for (double v : t.data) w.pod(v);
  }
  w.pod(payload_hash(w.out));
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> file) {
  if (file.size() < 8 + sizeof(std::uint64_t) || std::memcmp(file.data(), kMagic, 8) != 0) {
    throw IoError("not a checkpoint file");
  }
  const auto bytes = file.first(file.size() - sizeof(std::uint64_t));
  std::uint64_t stored = 0;
  std::memcpy(&stored, file.data() + bytes.size(), sizeof(stored));
  if (stored != payload_hash(bytes)) throw IoError("checkpoint checksum mismatch");
  Reader r(bytes);
  r.pos = 8;
  const auto version = r.pod<std::uint32_t>();
  if (version != Checkpoint::kFormatVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.kind = r.str();
  const auto n_settings = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_settings; ++i) {
    auto k = r.str();
    ckpt.settings[k] = r.str();
  }
  if (r.pod<std::uint64_t>() != ckpt.settings_hash()) throw IoError("checkpoint settings hash mismatch");
  const auto n_tensors = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    Tensor t;
    t.name = r.str();
    t.rows = r.pod<std::int64_t>();
    t.cols = r.pod<std::int64_t>();
    if (t.rows < 0 || t.cols < 0) throw IoError("checkpoint tensor with negative shape");
    const auto n = static_cast<std::uint64_t>(t.rows) * static_cast<std::uint64_t>(t.cols);
    r.need(n * sizeof(double));
    t.data.resize(n);
    std::memcpy(t.data.data(), bytes.data() + r.pos, n * sizeof(double));
    r.pos += n * sizeof(double);
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.pos != bytes.size()) throw IoError("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_kind) {
  auto ckpt = deserialize_checkpoint(read_file_bytes(path));
  if (ckpt.kind != expected_kind) {
    throw IoError(path.string() + ": checkpoint kind '" + ckpt.kind + "', expected '" + std::string(expected_kind) + "'");
  }
  return ckpt;
}

}  // namespace halo
