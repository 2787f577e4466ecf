#include "halo/core_data.hpp"

#include <Eigen/Dense>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <unordered_set>

#include "halo/error.hpp"
#include "png_io.hpp"

namespace halo {

using nlohmann::json;

ProbMap::ProbMap(int width, int height, double fill)
    : width_(width), height_(height), values_(static_cast<std::size_t>(width) * height, fill) {
  if (width < 0 || height < 0) throw InvalidArgument("negative map size");
}

ProbMap::ProbMap(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(width) * height) {
    throw InvalidArgument("ProbMap values do not match declared size");
  }
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("ProbMap value outside [0,1]");
  }
}

BilinearTaps bilinear_taps(int width, int height, double u, double v) {
  const double fx = std::clamp(u * width - 0.5, 0.0, width - 1.0);
  const double fy = std::clamp(v * height - 0.5, 0.0, height - 1.0);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double tx = fx - x0;
  const double ty = fy - y0;
  const auto at = [width](int x, int y) { return static_cast<std::size_t>(y) * width + x; };
  return {{at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1)},
          {(1 - ty) * (1 - tx), (1 - ty) * tx, ty * (1 - tx), ty * tx}};
}

double ProbMap::sample_relative(double u, double v) const {
  const auto t = bilinear_taps(width_, height_, u, v);
  return t.weight[0] * values_[t.index[0]] + t.weight[1] * values_[t.index[1]] + t.weight[2] * values_[t.index[2]] +
         t.weight[3] * values_[t.index[3]];
}

BinaryMask::BinaryMask(int width, int height, bool fill)
    : width_(width), height_(height), bits_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask binarize(const ProbMap& map, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InvalidArgument("binarization threshold must lie in (0,1)");
  }
  BinaryMask mask(map.width(), map.height());
  auto values = map.values();
  for (std::size_t i = 0; i < values.size(); ++i) mask.bits_[i] = values[i] >= threshold ? 1 : 0;
  mask.threshold_ = threshold;
  return mask;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw InvalidArgument("IoU of masks with different sizes");
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::uint8_t> encode_probmap(const ProbMap& map) {
  std::vector<std::uint8_t> gray(map.size());
  auto values = map.values();
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
  }
  return detail::encode_png(map.width(), map.height(), 1, gray);
}

ProbMap decode_probmap(std::span<const std::uint8_t> bytes) {
  auto png = detail::decode_png(bytes, 1, true);
  std::vector<double> values(png.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = png.pixels[i] / 255.0;
  return ProbMap(png.width, png.height, std::move(values));
}

void save_probmap(const ProbMap& map, const std::filesystem::path& path) {
  write_file_atomic(path, encode_probmap(map));
}

ProbMap load_probmap(const std::filesystem::path& path) {
  try {
    return decode_probmap(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> gray(mask.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask[i] ? 255 : 0;
  write_file_atomic(path, detail::encode_png(mask.width(), mask.height(), 1, gray));
}

BinaryMask load_mask(const std::filesystem::path& path) {
  auto png = detail::decode_png(read_file_bytes(path), 1, false);
  BinaryMask mask(png.width, png.height);
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) {
      mask.set(x, y, png.pixels[static_cast<std::size_t>(y) * png.width + x] >= 128);
    }
  }
  return mask;
}

ProbMap resize_probmap(const ProbMap& map, int width, int height) {
  if (width == map.width() && height == map.height()) return map;
  ProbMap out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out.at(x, y) = map.sample_relative((x + 0.5) / width, (y + 0.5) / height);
  }
  return out;
}

ProbMap to_probmap(const BinaryMask& mask) {
  ProbMap map(mask.width(), mask.height());
  for (std::size_t i = 0; i < mask.size(); ++i) map.values()[i] = mask[i] ? 1.0 : 0.0;
  return map;
}

Eigen::Vector3d Camera::ray_direction(double px, double py) const {
  const Eigen::Vector3d cam = intrinsics.inverse() * Eigen::Vector3d(px, py, 1.0);
  return (rotation() * cam).normalized();
}

std::optional<Eigen::Vector2d> Camera::project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d cam = rotation().transpose() * (world - center());
  if (cam.z() <= 1e-9) return std::nullopt;
  const Eigen::Vector3d pix = intrinsics * cam;
  return Eigen::Vector2d(pix.x() / pix.z(), pix.y() / pix.z());
}

const ImageRecord* SceneManifest::find(std::string_view id) const {
  for (const auto& r : images) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::string to_string(BuildingKind kind) {
  switch (kind) {
    case BuildingKind::kCathedral: return "cathedral";
    case BuildingKind::kMosque: return "mosque";
    case BuildingKind::kSynagogue: return "synagogue";
    case BuildingKind::kOther: return "other";
  }
  return "other";
}

BuildingKind parse_building_kind(std::string_view text) {
  if (text == "cathedral") return BuildingKind::kCathedral;
  if (text == "mosque") return BuildingKind::kMosque;
  if (text == "synagogue") return BuildingKind::kSynagogue;
  return BuildingKind::kOther;
}

std::string SceneManifest::building_prompt() const {
  if (building_kind == BuildingKind::kOther) {
    return building_kind_label.empty() ? "building" : building_kind_label;
  }
  return to_string(building_kind);
}

std::size_t SceneManifest::posed_count() const {
  return static_cast<std::size_t>(
      std::count_if(images.begin(), images.end(), [](const auto& r) { return r.camera.has_value(); }));
}

namespace {

Eigen::Matrix3d parse_matrix3(const json& j) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

Eigen::Matrix<double, 3, 4> parse_matrix34(const json& j) {
  Eigen::Matrix<double, 3, 4> m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

template <typename Matrix>
json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

ImageRecord parse_record(const json& j) {
  ImageRecord rec;
  rec.metadata.filename = j.at("filename").get<std::string>();
  rec.id = j.value("id", rec.metadata.filename);
  rec.width = j.at("width").get<int>();
  rec.height = j.at("height").get<int>();
  if (rec.id.empty()) throw InvalidArgument("empty filename");
  if (rec.width < 1 || rec.height < 1) throw InvalidArgument("width and height must be >= 1");
  rec.pixel_ref = j.contains("image") ? std::filesystem::path(j["image"].get<std::string>())
                                      : std::filesystem::path("images") / rec.metadata.filename;
  rec.metadata.caption = j.value("caption", std::string{});
  if (j.contains("wiki_categories")) {
    rec.metadata.wiki_categories = j["wiki_categories"].get<std::vector<std::string>>();
  }
  if (j.contains("camera") && !j["camera"].is_null()) {
    Camera cam;
    cam.intrinsics = parse_matrix3(j["camera"].at("intrinsics"));
    cam.pose = parse_matrix34(j["camera"].at("pose"));
    if (!(cam.intrinsics(0, 0) > 0 && cam.intrinsics(1, 1) > 0)) {
      throw InvalidArgument("camera intrinsics need positive focal entries");
    }
    rec.camera = cam;
  }
  return rec;
}

json record_json(const ImageRecord& rec) {
  json j;
  j["filename"] = rec.metadata.filename;
  if (rec.id != rec.metadata.filename) j["id"] = rec.id;
  j["width"] = rec.width;
  j["height"] = rec.height;
  if (rec.pixel_ref != std::filesystem::path("images") / rec.metadata.filename) {
    j["image"] = rec.pixel_ref.generic_string();
  }
  j["caption"] = rec.metadata.caption;
  j["wiki_categories"] = rec.metadata.wiki_categories;
  if (rec.camera) {
    j["camera"] = {{"intrinsics", matrix_json(rec.camera->intrinsics)},
                   {"pose", matrix_json(rec.camera->pose)}};
  }
  return j;
}

}  // namespace

SceneManifest load_scene(const std::filesystem::path& root) {
  const auto manifest_path = root / "manifest.jsonl";
  if (!std::filesystem::exists(manifest_path)) {
    throw IoError("missing manifest file " + manifest_path.string());
  }
  SceneManifest scene;
  scene.root = root;
  scene.landmark_name = root.filename().string();
  if (scene.landmark_name.empty()) scene.landmark_name = root.parent_path().filename().string();

  const auto meta_path = root / "scene.json";
  if (std::filesystem::exists(meta_path)) {
    std::ifstream in(meta_path);
    json meta;
    try {
      in >> meta;
    } catch (const json::exception& e) {
      throw IoError(meta_path.string() + ": " + e.what());
    }
    scene.landmark_name = meta.value("landmark_name", scene.landmark_name);
    const auto kind = meta.value("building_kind", std::string("other"));
    scene.building_kind = parse_building_kind(kind);
    if (scene.building_kind == BuildingKind::kOther && kind != "other") scene.building_kind_label = kind;
    scene.split = meta.value("split", std::string("train")) == "test" ? Split::kTest : Split::kTrain;
  }

  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ImageRecord rec;
    try {
      rec = parse_record(json::parse(line));
    } catch (const std::exception& e) {
      throw IoError(manifest_path.string() + ":" + std::to_string(line_no) +
                    ": malformed record: " + e.what());
    }
    if (!seen.insert(rec.id).second) {
      ++scene.duplicates_dropped;
      continue;
    }
    if (!std::filesystem::exists(root / rec.pixel_ref)) {
      throw IoError("referenced image file absent: " + rec.pixel_ref.generic_string());
    }
    scene.images.push_back(std::move(rec));
  }
  if (scene.images.empty()) throw IoError(manifest_path.string() + ": manifest has no records");
  if (scene.duplicates_dropped > 0) {
    spdlog::warn("{}: dropped {} duplicate record(s)", manifest_path.string(), scene.duplicates_dropped);
  }
  return scene;
}

void write_scene(const SceneManifest& manifest, const std::filesystem::path& root) {
  std::string lines;
  for (const auto& rec : manifest.images) lines += record_json(rec).dump() + "\n";
  write_text_atomic(root / "manifest.jsonl", lines);
  json meta = {{"landmark_name", manifest.landmark_name},
               {"building_kind", manifest.building_kind == BuildingKind::kOther && !manifest.building_kind_label.empty()
                                     ? manifest.building_kind_label
                                     : to_string(manifest.building_kind)},
               {"split", manifest.split == Split::kTest ? "test" : "train"}};
  write_text_atomic(root / "scene.json", meta.dump(2) + "\n");
}

RgbImage load_record_image(const SceneManifest& scene, const ImageRecord& record) {
  return load_image(scene.root / record.pixel_ref);
}

}  // namespace halo
