#include "halo/oracles.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "halo/error.hpp"
#include "halo/text.hpp"

namespace halo {

using nlohmann::json;

RgbImage ImageRegion::pixels() const {
  if (image == nullptr) throw InvalidArgument("image region " + image_id + " has no pixels");
  return full_frame() ? *image : crop(*image, rect);
}

ImageRegion ImageRegion::sub(const Rect& r) const {
  return {image_id, image, {rect.x0 + r.x0, rect.y0 + r.y0, rect.x0 + r.x1, rect.y0 + r.y1}};
}

double TableSimOracle::similarity(const ImageRegion& region, std::string_view text) const {
  if (region.image != nullptr && !region.full_frame()) return fallback_;
  auto it = table_.find({region.image_id, std::string(text)});
  return it == table_.end() ? fallback_ : it->second;
}

ProbMap crop_relative(const ProbMap& map, const Rect& rect, int frame_width, int frame_height) {
  if (rect.x0 == 0 && rect.y0 == 0 && rect.x1 == frame_width && rect.y1 == frame_height) return map;
  const int w = std::max(1, static_cast<int>(std::lround(rect.width() * static_cast<double>(map.width()) / frame_width)));
  const int h = std::max(1, static_cast<int>(std::lround(rect.height() * static_cast<double>(map.height()) / frame_height)));
  ProbMap out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (rect.x0 + (x + 0.5) / w * rect.width()) / frame_width;
      const double v = (rect.y0 + (y + 0.5) / h * rect.height()) / frame_height;
      out.at(x, y) = map.sample_relative(u, v);
    }
  }
  return out;
}

ProbMap FileSegOracle::segment(const ImageRegion& region, std::string_view prompt) const {
  const auto category = text::singularize(text::to_lower(text::trim(prompt)));
  const auto path = root_ / "masks" / category / (region.image_id + ".png");
  const int fw = region.image ? region.image->width() : region.rect.x1;
  const int fh = region.image ? region.image->height() : region.rect.y1;
  if (!std::filesystem::exists(path)) return ProbMap(region.rect.width(), region.rect.height());
  return crop_relative(load_probmap(path), region.rect, fw, fh);
}

PlantedMatcher::PlantedMatcher(const std::filesystem::path& matches_file) {
  std::ifstream in(matches_file);
  if (!in) throw IoError("cannot open " + matches_file.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      std::vector<KeypointPair> pairs;
      for (const auto& p : j.at("pairs")) {
        pairs.push_back({{p.at(0).get<double>(), p.at(1).get<double>()}, {p.at(2).get<double>(), p.at(3).get<double>()}});
      }
      table_[{j.at("first").get<std::string>(), j.at("second").get<std::string>()}] = std::move(pairs);
    } catch (const std::exception& e) {
      throw IoError(matches_file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<KeypointPair> PlantedMatcher::match(const ImageRegion& first, const ImageRegion& second) const {
  if (auto it = table_.find({first.image_id, second.image_id}); it != table_.end()) return it->second;
  if (auto it = table_.find({second.image_id, first.image_id}); it != table_.end()) {
    std::vector<KeypointPair> swapped;
    swapped.reserve(it->second.size());
    for (const auto& p : it->second) swapped.push_back({p.second, p.first});
    return swapped;
  }
  return {};
}

void write_planted_matches(const std::filesystem::path& path,
                           const std::vector<std::tuple<std::string, std::string, std::vector<KeypointPair>>>& entries) {
  std::string out;
  for (const auto& [a, b, pairs] : entries) {
    json arr = json::array();
    for (const auto& p : pairs) arr.push_back({p.first.x(), p.first.y(), p.second.x(), p.second.y()});
    out += json{{"first", a}, {"second", b}, {"pairs", arr}}.dump() + "\n";
  }
  write_text_atomic(path, out);
}

}  // namespace halo
