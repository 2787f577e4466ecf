#include "halo/synthetic.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <limits>
#include <tuple>
#include <cmath>
#include <random>

#include "halo/error.hpp"
#include "halo/text.hpp"

namespace halo::synthetic {

namespace {

constexpr std::array<const char*, kFaceCount> kFaceNames{"south", "north", "east", "west", "roof", "floor"};
constexpr std::array<double, kFaceCount> kFaceShade{1.0, 0.8, 0.9, 0.85, 1.0, 0.6};

struct FaceFrame {
  Eigen::Vector3d origin, u, v, normal;
};

FaceFrame face_frame(const SceneSpec& s, int face) {
  const Eigen::Vector3d& c = s.center;
  const double ex = s.half_extents.x(), ey = s.half_extents.y(), ez = s.half_extents.z();
  switch (face) {
    case kSouth:
      return {c + Eigen::Vector3d(-ex, -ey, ez), {2 * ex, 0, 0}, {0, 0, -2 * ez}, {0, -1, 0}};
    case kNorth:
      return {c + Eigen::Vector3d(ex, ey, ez), {-2 * ex, 0, 0}, {0, 0, -2 * ez}, {0, 1, 0}};
    case kEast:
      return {c + Eigen::Vector3d(ex, -ey, ez), {0, 2 * ey, 0}, {0, 0, -2 * ez}, {1, 0, 0}};
    case kWest:
      return {c + Eigen::Vector3d(-ex, ey, ez), {0, -2 * ey, 0}, {0, 0, -2 * ez}, {-1, 0, 0}};
    case kTop:
      return {c + Eigen::Vector3d(-ex, -ey, ez), {2 * ex, 0, 0}, {0, 2 * ey, 0}, {0, 0, 1}};
    default:
      return {c + Eigen::Vector3d(-ex, -ey, -ez), {2 * ex, 0, 0}, {0, 2 * ey, 0}, {0, 0, -1}};
  }
}

double cell_hash(int face, long iu, long iv, std::uint64_t seed) {
  const auto key = fmt::format("{}:{}:{}", face, iu, iv);
  return static_cast<double>(text::fnv1a(key, seed ^ 0xcbf29ce484222325ULL) >> 11) * 0x1.0p-53;
}

std::string compass(const Eigen::Vector3d& d) {
  if (std::abs(d.x()) > std::abs(d.y())) return d.x() > 0 ? "east" : "west";
  return d.y() > 0 ? "north" : "south";
}

bool is_building_term(const std::string& t) {
  return t == "cathedral" || t == "mosque" || t == "synagogue" || t == "building";
}

Eigen::Vector2d chroma(const Eigen::Vector3d& c) {
  const double s = c.sum();
  return s > 0 ? Eigen::Vector2d(c.x() / s, c.y() / s) : Eigen::Vector2d(1.0 / 3, 1.0 / 3);
}

}  // namespace

std::vector<FacadeRegion> SceneSpec::default_regions() {
  return {{"portal", kSouth, 0.4, 0.5, 0.6, 1.0},    {"window", kSouth, 0.1, 0.2, 0.26, 0.45},
          {"window", kSouth, 0.74, 0.2, 0.9, 0.45},  {"portal", kNorth, 0.42, 0.6, 0.58, 1.0},
          {"window", kNorth, 0.15, 0.3, 0.33, 0.6},  {"window", kNorth, 0.67, 0.3, 0.85, 0.6},
          {"dome", kEast, 0.25, 0.0, 0.75, 0.3},     {"window", kEast, 0.35, 0.45, 0.65, 0.7},
          {"dome", kWest, 0.25, 0.0, 0.75, 0.3},     {"window", kWest, 0.35, 0.45, 0.65, 0.7},
          {"dome", kTop, 0.3, 0.25, 0.7, 0.75}};
}

std::vector<std::string> SceneSpec::categories() const {
  std::vector<std::string> out;
  for (const auto& r : regions) {
    if (std::find(out.begin(), out.end(), r.category) == out.end()) out.push_back(r.category);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Scene::Scene(SceneSpec spec) : spec_(std::move(spec)) {
  if (spec_.width < 4 || spec_.height < 4 || spec_.focal <= 0 || spec_.ring_views < 0) {
    throw InvalidArgument("synthetic scene: bad camera settings");
  }
  if (!(spec_.half_extents.array() > 0).all()) throw InvalidArgument("synthetic scene: empty box");
  std::mt19937_64 rng(spec_.seed);
  std::uniform_real_distribution<double> gain(1.0 - spec_.illumination_jitter, 1.0 + spec_.illumination_jitter);
  std::uniform_real_distribution<double> wobble(-0.03, 0.03);
  const Eigen::Vector3d target = spec_.center;
  for (int k = 0; k < spec_.ring_views; ++k) {
    const double az = 2.0 * M_PI * k / spec_.ring_views + 0.1;
    const double z = k % 2 == 0 ? spec_.ring_height_low : spec_.ring_height_high;
    const Eigen::Vector3d eye(spec_.ring_radius * std::cos(az), spec_.ring_radius * std::sin(az), z);
    SyntheticView v;
    v.id = fmt::format("ring_{:02}", k);
    v.camera = look_at(eye, target);
    v.gain = gain(rng);
    v.caption = "the " + spec_.landmark_name + " seen from the " + compass(eye - spec_.center);
    views_.push_back(std::move(v));
  }
  if (spec_.closeups) {
    int k = 0;
    for (const auto& r : spec_.regions) {
      if (r.face == kTop || r.face == kBottom) continue;
      const auto f = face_frame(spec_, r.face);
      const Eigen::Vector3d center = face_point(r.face, 0.5 * (r.u0 + r.u1), 0.5 * (r.v0 + r.v1));
      const Eigen::Vector3d eye = center + spec_.closeup_distance * f.normal + wobble(rng) * f.u.normalized() +
                                  (0.05 + wobble(rng)) * Eigen::Vector3d::UnitZ();
      SyntheticView v;
      v.id = fmt::format("close_{:02}", k++);
      v.camera = look_at(eye, center);
      v.gain = gain(rng);
      v.caption = std::string(kFaceNames[static_cast<std::size_t>(r.face)]) + " " + r.category + " of the " +
                  spec_.landmark_name;
      v.target_category = r.category;
      views_.push_back(std::move(v));
    }
  }
}

Camera Scene::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) const {
  const Eigen::Vector3d f = (target - eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::abs(f.dot(up)) > 0.999) up = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d r = f.cross(up).normalized();
  const Eigen::Vector3d d = f.cross(r);
  Camera cam;
  cam.intrinsics << spec_.focal, 0, spec_.width / 2.0, 0, spec_.focal, spec_.height / 2.0, 0, 0, 1;
  cam.pose.col(0) = r;
  cam.pose.col(1) = d;
  cam.pose.col(2) = f;
  cam.pose.col(3) = eye;
  return cam;
}

Eigen::Vector3d Scene::face_point(int face, double u, double v) const {
  const auto f = face_frame(spec_, face);
  return f.origin + u * f.u + v * f.v;
}

std::optional<SurfaceHit> Scene::intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) const {
  const Eigen::Vector3d lo = spec_.center - spec_.half_extents;
  const Eigen::Vector3d hi = spec_.center + spec_.half_extents;
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  bool entered_low = false;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(direction(a)) < 1e-15) {
      if (origin(a) < lo(a) || origin(a) > hi(a)) return std::nullopt;
      continue;
    }
    const double ta = (lo(a) - origin(a)) / direction(a);
    const double tb = (hi(a) - origin(a)) / direction(a);
    const double tn = std::min(ta, tb);
    if (tn > t0) {
      t0 = tn;
      axis = a;
      entered_low = ta < tb;
    }
    t1 = std::min(t1, std::max(ta, tb));
  }
  if (axis < 0 || t0 > t1 || t0 <= 0) return std::nullopt;
  int face = kSouth;
  if (axis == 0) face = entered_low ? kWest : kEast;
  if (axis == 1) face = entered_low ? kSouth : kNorth;
  if (axis == 2) face = entered_low ? kBottom : kTop;
  SurfaceHit hit;
  hit.t = t0;
  hit.face = face;
  hit.point = origin + t0 * direction;
  const auto f = face_frame(spec_, face);
  hit.u = std::clamp((hit.point - f.origin).dot(f.u) / f.u.squaredNorm(), 0.0, 1.0);
  hit.v = std::clamp((hit.point - f.origin).dot(f.v) / f.v.squaredNorm(), 0.0, 1.0);
  return hit;
}

std::string Scene::category_at(int face, double u, double v) const {
  for (const auto& r : spec_.regions) {
    if (r.face == face && u >= r.u0 && u < r.u1 && v >= r.v0 && v < r.v1) return r.category;
  }
  return {};
}

Eigen::Vector3d Scene::surface_color(const SurfaceHit& hit) const {
  const auto cat = category_at(hit.face, hit.u, hit.v);
  const auto& p = spec_.palette;
  const Eigen::Vector3d base = cat == "window" ? p.window : cat == "portal" ? p.portal : cat == "dome" ? p.dome : p.wall;
  const auto f = face_frame(spec_, hit.face);
  const long iu = static_cast<long>(std::floor(hit.u * f.u.norm() / spec_.texture_cell));
  const long iv = static_cast<long>(std::floor(hit.v * f.v.norm() / spec_.texture_cell));
  const double tex = 1.0 + spec_.texture_contrast * (2.0 * cell_hash(hit.face, iu, iv, spec_.seed) - 1.0);
  return base * tex * kFaceShade[static_cast<std::size_t>(hit.face)];
}

RgbImage Scene::render(const Camera& camera, double gain) const {
  RgbImage img(spec_.width, spec_.height);
  for (int y = 0; y < spec_.height; ++y) {
    for (int x = 0; x < spec_.width; ++x) {
      const Eigen::Vector3d d = camera.ray_direction(x + 0.5, y + 0.5);
      const auto hit = intersect(camera.center(), d);
      const Eigen::Vector3d c = gain * (hit ? surface_color(*hit) : spec_.palette.sky);
      auto* p = img.pixel(x, y);
      for (int ch = 0; ch < 3; ++ch) p[ch] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(c(ch), 0.0, 1.0)));
    }
  }
  return img;
}

BinaryMask Scene::mask(const Camera& camera, const std::string& category) const {
  BinaryMask m(spec_.width, spec_.height);
  for (int y = 0; y < spec_.height; ++y) {
    for (int x = 0; x < spec_.width; ++x) {
      const auto hit = intersect(camera.center(), camera.ray_direction(x + 0.5, y + 0.5));
      if (hit && (category.empty() || category_at(hit->face, hit->u, hit->v) == category)) m.set(x, y, true);
    }
  }
  return m;
}

std::optional<Eigen::Vector2d> Scene::visible_pixel(const Camera& camera, const Eigen::Vector3d& point) const {
  const auto px = camera.project(point);
  if (!px || px->x() < 0 || px->y() < 0 || px->x() >= spec_.width || px->y() >= spec_.height) return std::nullopt;
  const Eigen::Vector3d delta = point - camera.center();
  const double dist = delta.norm();
  const auto hit = intersect(camera.center(), delta / dist);
  if (!hit || std::abs(hit->t - dist) > 1e-6 * std::max(1.0, dist)) return std::nullopt;
  return px;
}

Eigen::Matrix3d Scene::face_homography(const Camera& from, const Camera& to, int face) const {
  const auto f = face_frame(spec_, face);
  auto plane_to_pixels = [&](const Camera& cam) {
    Eigen::Matrix3d m;
    m.col(0) = f.u;
    m.col(1) = f.v;
    m.col(2) = f.origin - cam.center();
    return Eigen::Matrix3d(cam.intrinsics * cam.rotation().transpose() * m);
  };
  const Eigen::Matrix3d s = Eigen::Vector3d(1.0 / spec_.width, 1.0 / spec_.height, 1.0).asDiagonal();
  Eigen::Matrix3d h = s * plane_to_pixels(to) * plane_to_pixels(from).inverse() * s.inverse();
  return h / h(2, 2);
}

Aabb Scene::field_bounds(double margin) const {
  Aabb b;
  b.lo = spec_.center - spec_.half_extents - Eigen::Vector3d::Constant(margin);
  b.hi = spec_.center + spec_.half_extents + Eigen::Vector3d::Constant(margin);
  return b;
}

BinaryMask salt_and_pepper(const BinaryMask& mask, double fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution hit(std::clamp(fraction, 0.0, 1.0));
  std::bernoulli_distribution coin(0.5);
  BinaryMask out = mask;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (hit(rng)) out.set(x, y, coin(rng));
    }
  }
  return out;
}

SceneManifest make_synthetic_scene(const SceneSpec& spec, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (fs::exists(root) && !fs::is_empty(root)) throw InvalidArgument("scene root is not empty: " + root.string());
  const Scene scene(spec);
  fs::create_directories(root / "images");
  SceneManifest manifest;
  manifest.root = root;
  manifest.landmark_name = spec.landmark_name;
  manifest.building_kind = spec.kind;
  const auto building = manifest.building_prompt();
  const auto categories = spec.categories();
  for (const auto& v : scene.views()) {
    ImageRecord rec;
    rec.id = v.id;
    rec.width = spec.width;
    rec.height = spec.height;
    rec.pixel_ref = fs::path("images") / (v.id + ".png");
    rec.metadata.filename = v.id + ".png";
    rec.metadata.caption = v.caption;
    std::string landmark_title = spec.landmark_name;
    if (!landmark_title.empty()) landmark_title[0] = static_cast<char>(std::toupper(landmark_title[0]));
    rec.metadata.wiki_categories = {v.target_category.empty()
                                        ? landmark_title
                                        : text::pluralize(v.target_category) + " of the " + spec.landmark_name};
    if (!rec.metadata.wiki_categories[0].empty()) {
      rec.metadata.wiki_categories[0][0] = static_cast<char>(std::toupper(rec.metadata.wiki_categories[0][0]));
    }
    rec.camera = v.camera;
    save_png(scene.render(v.camera, v.gain), root / rec.pixel_ref);
    for (const auto& cat : categories) {
      const auto gt = scene.mask(v.camera, cat);
      save_mask(gt, root / "gt" / cat / (v.id + ".png"));
      save_mask(salt_and_pepper(gt, spec.mask_noise, spec.seed ^ text::fnv1a(cat + "/" + v.id)),
                root / "masks" / cat / (v.id + ".png"));
    }
    save_mask(scene.mask(v.camera, ""), root / "masks" / building / (v.id + ".png"));
    manifest.images.push_back(std::move(rec));
  }
  write_scene(manifest, root);

  // Correspondences from surface points seen by both views, plus random outliers.
  std::vector<std::tuple<std::string, std::string, std::vector<KeypointPair>>> entries;
  const auto& views = scene.views();
  std::mt19937_64 rng(spec.seed ^ 0x6d61746368ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t a = 0; a < views.size(); ++a) {
    for (std::size_t b = a + 1; b < views.size(); ++b) {
      std::vector<KeypointPair> pairs;
      const int attempts = 8 * spec.matches_per_pair;
      for (int k = 0; k < attempts && static_cast<int>(pairs.size()) < spec.matches_per_pair; ++k) {
        // Alternate the source view so a close-up paired with a wide view still gets dense matches.
        const bool from_a = k % 2 == 0;
        const auto& src = views[from_a ? a : b].camera;
        const auto& dst = views[from_a ? b : a].camera;
        const double px = unit(rng) * spec.width;
        const double py = unit(rng) * spec.height;
        const auto hit = scene.intersect(src.center(), src.ray_direction(px, py));
        if (!hit) continue;
        const auto pd = scene.visible_pixel(dst, hit->point);
        if (!pd) continue;
        const Point2 ps{px / spec.width, py / spec.height};
        const Point2 pt{pd->x() / spec.width, pd->y() / spec.height};
        pairs.push_back(from_a ? KeypointPair{ps, pt} : KeypointPair{pt, ps});
      }
      if (pairs.size() < 8) continue;
      const auto outliers = static_cast<std::size_t>(std::lround(spec.match_outliers * static_cast<double>(pairs.size())));
      for (std::size_t k = 0; k < outliers; ++k) pairs.push_back({{unit(rng), unit(rng)}, {unit(rng), unit(rng)}});
      entries.emplace_back(views[a].id, views[b].id, std::move(pairs));
    }
  }
  fs::create_directories(root / "aux");
  write_planted_matches(root / "aux" / "matches.jsonl", entries);
  const auto box = scene.field_bounds();
  write_text_atomic(root / "aux" / "bounds.txt", fmt::format("{:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g}\n", box.lo.x(),
                                                             box.lo.y(), box.lo.z(), box.hi.x(), box.hi.y(), box.hi.z()));
  return load_scene(root);
}

PaletteClassifier::PaletteClassifier(Palette p) {
  chroma_ = {{"window", chroma(p.window)}, {"portal", chroma(p.portal)}, {"dome", chroma(p.dome)},
             {"wall", chroma(p.wall)},     {"sky", chroma(p.sky)}};
}

std::string PaletteClassifier::classify(const std::uint8_t* rgb) const {
  const Eigen::Vector2d c = chroma(Eigen::Vector3d(rgb[0], rgb[1], rgb[2]));
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < chroma_.size(); ++i) {
    const double d = (chroma_[i].second - c).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return chroma_[best].first;
}

ProbMap PaletteClassifier::segment(const ImageRegion& region, std::string_view text) const {
  const auto term = text::singularize(text::to_lower(text::trim(text)));
  const bool building = is_building_term(term);
  const auto pixels = region.pixels();
  ProbMap out(pixels.width(), pixels.height());
  for (int y = 0; y < pixels.height(); ++y) {
    for (int x = 0; x < pixels.width(); ++x) {
      const auto cls = classify(pixels.pixel(x, y));
      out.at(x, y) = (building ? cls != "sky" : cls == term) ? 1.0 : 0.0;
    }
  }
  return out;
}

double PaletteClassifier::fraction(const ImageRegion& region, std::string_view text) const {
  const auto m = segment(region, text);
  const auto v = m.values();
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace halo::synthetic
