#include "halo/semantic_field.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

#include "halo/checkpoint.hpp"
#include "halo/error.hpp"
#include "halo/parallel.hpp"

namespace halo {

namespace {

constexpr std::string_view kBackboneKind = "radiance-backbone";
constexpr std::string_view kHeadKind = "semantic-head";
constexpr double kEps = 1e-7;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& z, const Eigen::MatrixXd& dy) {
  return (z.array() > 0.0).select(dy, 0.0);
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

// One kept sample: which ray and which sample along it.
struct SampleRef {
  std::size_t ray;
  int sample;
};

struct KeptSamples {
  std::vector<SampleRef> refs;
  Eigen::MatrixXd shared_in;  // shared-MLP inputs, one column per kept sample
};

KeptSamples gather(const RadianceBackbone& backbone, const std::vector<RayTrace>& traces) {
  KeptSamples out;
  for (std::size_t r = 0; r < traces.size(); ++r) {
    for (int i : traces[r].kept) out.refs.push_back({r, i});
  }
  out.shared_in.resize(backbone.shared.in(), static_cast<Eigen::Index>(out.refs.size()));
  for (std::size_t k = 0; k < out.refs.size(); ++k) {
    const auto& tr = traces[out.refs[k].ray];
    const auto i = static_cast<std::size_t>(out.refs[k].sample);
    out.shared_in.col(static_cast<Eigen::Index>(k)) = backbone.shared_input(tr.points[i], tr.taps[i]);
  }
  return out;
}

std::vector<RayTrace> trace_all(const RadianceBackbone& backbone, const std::vector<TrainingRay>& batch,
                                const std::vector<double>* jitters) {
  if (jitters && jitters->size() != batch.size()) throw InvalidArgument("one jitter per ray expected");
  std::vector<RayTrace> traces;
  traces.reserve(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    traces.push_back(trace_ray(backbone, batch[r].ray, jitters ? (*jitters)[r] : 0.5));
  }
  return traces;
}

void write_dense(Checkpoint& ckpt, const std::string& name, const nn::Dense& d) {
  ckpt.put(name + ".w", d.w);
  ckpt.put(name + ".b", d.b);
}

void read_dense(const Checkpoint& ckpt, const std::string& name, nn::Dense& d) {
  d.w = ckpt.matrix(name + ".w", d.w.rows(), d.w.cols());
  d.b = ckpt.vector(name + ".b", d.b.size());
  d.zero_grad();
}

std::uint64_t dense_checksum(const nn::Dense& d, std::uint64_t h) {
  h = nn::checksum({d.w.data(), static_cast<std::size_t>(d.w.size())}, h);
  return nn::checksum({d.b.data(), static_cast<std::size_t>(d.b.size())}, h);
}

}  // namespace

std::optional<std::pair<double, double>> intersect_aabb(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction,
                                                        const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(direction(a)) < 1e-15) {
      if (origin(a) < box.lo(a) || origin(a) > box.hi(a)) return std::nullopt;
      continue;
    }
    double ta = (box.lo(a) - origin(a)) / direction(a);
    double tb = (box.hi(a) - origin(a)) / direction(a);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return std::nullopt;
  return std::pair{t0, t1};
}

Ray camera_ray(const Camera& camera, double px, double py, const Aabb& bounds) {
  Ray r;
  r.origin = camera.center();
  r.direction = camera.ray_direction(px, py);
  if (const auto hit = intersect_aabb(r.origin, r.direction, bounds)) {
    r.near = hit->first;
    r.far = hit->second;
  }
  return r;
}

Eigen::VectorXd positional_encoding(const Eigen::Vector3d& x, int bands) {
  Eigen::VectorXd out(3 + 6 * bands);
  out.head<3>() = x;
  for (int k = 0; k < bands; ++k) {
    const double f = std::ldexp(M_PI, k);
    for (int a = 0; a < 3; ++a) {
      out(3 + 6 * k + a) = std::sin(f * x(a));
      out(3 + 6 * k + 3 + a) = std::cos(f * x(a));
    }
  }
  return out;
}

RadianceBackbone::RadianceBackbone(const FieldConfig& cfg, std::size_t appearance_count) : config(cfg) {
  if (cfg.grid_resolution < 2 || cfg.feature_channels < 1 || cfg.hidden < 1 || cfg.color_hidden < 1 ||
      cfg.samples_per_ray < 1 || cfg.position_bands < 0 || cfg.direction_bands < 0 || cfg.appearance_dim < 0) {
    throw InvalidArgument("field config: bad sizes");
  }
  if (!((cfg.bounds.hi - cfg.bounds.lo).array() > 0.0).all()) throw InvalidArgument("field config: empty bounds");
  if (!(cfg.initial_alpha > 0.0 && cfg.initial_alpha < 1.0)) throw InvalidArgument("field config: initial_alpha in (0,1)");
  if (appearance_count == 0) throw InvalidArgument("field: need at least one appearance embedding");
  std::mt19937_64 rng(cfg.seed);
  const auto n = static_cast<Eigen::Index>(vertex_count());
  density = Eigen::VectorXd::Zero(n);
  features.resize(cfg.feature_channels, n);
  std::normal_distribution<double> small(0.0, 0.1);
  for (Eigen::Index i = 0; i < features.size(); ++i) features.data()[i] = small(rng);
  const int shared_in = cfg.feature_channels + 3 + 6 * cfg.position_bands;
  shared = nn::Dense(shared_in, cfg.hidden, rng);
  const int color_in = cfg.hidden + 3 + 6 * cfg.direction_bands + cfg.appearance_dim;
  color_hidden = nn::Dense(color_in, cfg.color_hidden, rng);
  color_out = nn::Dense(cfg.color_hidden, 3, rng);
  appearance = Eigen::MatrixXd::Zero(cfg.appearance_dim, static_cast<Eigen::Index>(appearance_count));
  for (Eigen::Index i = 0; i < appearance.size(); ++i) appearance.data()[i] = small(rng);
  background = Eigen::VectorXd::Zero(3);
  zero_grad();
}

std::size_t RadianceBackbone::vertex_count() const {
  const auto r = static_cast<std::size_t>(config.grid_resolution);
  return r * r * r;
}

double RadianceBackbone::density_shift() const {
  const double diag = (config.bounds.hi - config.bounds.lo).norm();
  const double delta = diag / (2.0 * config.samples_per_ray);
  const double sigma0 = -std::log1p(-config.initial_alpha) / delta;
  return std::log(std::expm1(sigma0));
}

GridTaps RadianceBackbone::taps(const Eigen::Vector3d& x) const {
  const int res = config.grid_resolution;
  const Eigen::Vector3d ext = config.bounds.hi - config.bounds.lo;
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double g = std::clamp((x(a) - config.bounds.lo(a)) / ext(a) * (res - 1), 0.0, static_cast<double>(res - 1));
    i0[a] = std::min(static_cast<int>(std::floor(g)), res - 2);
    f[a] = g - i0[a];
  }
  GridTaps t;
  int k = 0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx, ++k) {
        const auto ix = static_cast<std::size_t>(i0[0] + dx);
        const auto iy = static_cast<std::size_t>(i0[1] + dy);
        const auto iz = static_cast<std::size_t>(i0[2] + dz);
        t.index[k] = (iz * static_cast<std::size_t>(res) + iy) * static_cast<std::size_t>(res) + ix;
        t.weight[k] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
      }
    }
  }
  return t;
}

double RadianceBackbone::sigma(const Eigen::Vector3d& x) const {
  const auto t = taps(x);
  double raw = 0.0;
  for (int k = 0; k < 8; ++k) raw += t.weight[k] * density(static_cast<Eigen::Index>(t.index[k]));
  return softplus(raw + density_shift());
}

Eigen::Vector3d RadianceBackbone::background_color() const {
  return background.unaryExpr([](double v) { return nn::sigmoid(v); });
}

Eigen::VectorXd RadianceBackbone::shared_input(const Eigen::Vector3d& x, const GridTaps& t) const {
  const int c = config.feature_channels;
  Eigen::VectorXd in(shared.in());
  in.head(c).setZero();
  for (int k = 0; k < 8; ++k) in.head(c) += t.weight[k] * features.col(static_cast<Eigen::Index>(t.index[k]));
  const Eigen::Vector3d normalized =
      (2.0 * (x - config.bounds.lo).array() / (config.bounds.hi - config.bounds.lo).array() - 1.0).matrix();
  in.tail(in.size() - c) = positional_encoding(normalized, config.position_bands);
  return in;
}

Eigen::MatrixXd RadianceBackbone::shared_features(const std::vector<Eigen::Vector3d>& points) const {
  Eigen::MatrixXd in(shared.in(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) in.col(static_cast<Eigen::Index>(i)) = shared_input(points[i], taps(points[i]));
  return relu(shared.forward(in));
}

Eigen::VectorXd RadianceBackbone::direction_encoding(const Eigen::Vector3d& direction) const {
  return positional_encoding(direction, config.direction_bands);
}

void RadianceBackbone::zero_grad() {
  g_density = Eigen::VectorXd::Zero(density.size());
  g_features = Eigen::MatrixXd::Zero(features.rows(), features.cols());
  g_appearance = Eigen::MatrixXd::Zero(appearance.rows(), appearance.cols());
  g_background = Eigen::VectorXd::Zero(background.size());
  shared.zero_grad();
  color_hidden.zero_grad();
  color_out.zero_grad();
}

std::vector<nn::Param> RadianceBackbone::grid_params() {
  return {nn::param_of(density, g_density), nn::param_of(features, g_features)};
}

std::vector<nn::Param> RadianceBackbone::mlp_params() {
  std::vector<nn::Param> out;
  shared.append_params(out);
  color_hidden.append_params(out);
  color_out.append_params(out);
  out.push_back(nn::param_of(appearance, g_appearance));
  out.push_back(nn::param_of(background, g_background));
  return out;
}

std::uint64_t RadianceBackbone::checksum() const {
  auto h = nn::checksum({density.data(), static_cast<std::size_t>(density.size())});
  h = nn::checksum({features.data(), static_cast<std::size_t>(features.size())}, h);
  h = dense_checksum(shared, h);
  h = dense_checksum(color_hidden, h);
  h = dense_checksum(color_out, h);
  h = nn::checksum({appearance.data(), static_cast<std::size_t>(appearance.size())}, h);
  return nn::checksum({background.data(), static_cast<std::size_t>(background.size())}, h);
}

void RadianceBackbone::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = kBackboneKind;
  const auto& c = config;
  ckpt.settings = {{"bounds", fmt::format("{} {} {} {} {} {}", fmt_double(c.bounds.lo.x()), fmt_double(c.bounds.lo.y()),
                                          fmt_double(c.bounds.lo.z()), fmt_double(c.bounds.hi.x()),
                                          fmt_double(c.bounds.hi.y()), fmt_double(c.bounds.hi.z()))},
                   {"grid_resolution", std::to_string(c.grid_resolution)},
                   {"feature_channels", std::to_string(c.feature_channels)},
                   {"position_bands", std::to_string(c.position_bands)},
                   {"direction_bands", std::to_string(c.direction_bands)},
                   {"hidden", std::to_string(c.hidden)},
                   {"color_hidden", std::to_string(c.color_hidden)},
                   {"appearance_dim", std::to_string(c.appearance_dim)},
                   {"samples_per_ray", std::to_string(c.samples_per_ray)},
                   {"weight_threshold", fmt_double(c.weight_threshold)},
                   {"initial_alpha", fmt_double(c.initial_alpha)},
                   {"seed", std::to_string(c.seed)},
                   {"appearance_count", std::to_string(appearance_count())}};
  ckpt.put("density", density);
  ckpt.put("features", features);
  write_dense(ckpt, "shared", shared);
  write_dense(ckpt, "color_hidden", color_hidden);
  write_dense(ckpt, "color_out", color_out);
  ckpt.put("appearance", appearance);
  ckpt.put("background", background);
  save_checkpoint(ckpt, path);
}

RadianceBackbone RadianceBackbone::load(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path, kBackboneKind);
  FieldConfig c;
  std::size_t count = 0;
  try {
    std::istringstream b(ckpt.setting("bounds"));
    b >> c.bounds.lo.x() >> c.bounds.lo.y() >> c.bounds.lo.z() >> c.bounds.hi.x() >> c.bounds.hi.y() >> c.bounds.hi.z();
    if (!b) throw std::invalid_argument("bounds");
    c.grid_resolution = std::stoi(ckpt.setting("grid_resolution"));
    c.feature_channels = std::stoi(ckpt.setting("feature_channels"));
    c.position_bands = std::stoi(ckpt.setting("position_bands"));
    c.direction_bands = std::stoi(ckpt.setting("direction_bands"));
    c.hidden = std::stoi(ckpt.setting("hidden"));
    c.color_hidden = std::stoi(ckpt.setting("color_hidden"));
    c.appearance_dim = std::stoi(ckpt.setting("appearance_dim"));
    c.samples_per_ray = std::stoi(ckpt.setting("samples_per_ray"));
    c.weight_threshold = std::stod(ckpt.setting("weight_threshold"));
    c.initial_alpha = std::stod(ckpt.setting("initial_alpha"));
    c.seed = std::stoull(ckpt.setting("seed"));
    count = std::stoull(ckpt.setting("appearance_count"));
  } catch (const std::logic_error& e) {
    throw IoError(path.string() + ": bad backbone settings: " + e.what());
  }
  RadianceBackbone bb(c, count);
  bb.density = ckpt.vector("density", bb.density.size());
  bb.features = ckpt.matrix("features", bb.features.rows(), bb.features.cols());
  read_dense(ckpt, "shared", bb.shared);
  read_dense(ckpt, "color_hidden", bb.color_hidden);
  read_dense(ckpt, "color_out", bb.color_out);
  bb.appearance = ckpt.matrix("appearance", bb.appearance.rows(), bb.appearance.cols());
  bb.background = ckpt.vector("background", 3);
  bb.zero_grad();
  return bb;
}

std::vector<double> render_weights(const std::vector<double>& sigma, double delta, double* final_transmittance) {
  std::vector<double> w(sigma.size());
  double t = 1.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double a = -std::expm1(-sigma[i] * delta);
    w[i] = t * a;
    t *= 1.0 - a;
  }
  if (final_transmittance) *final_transmittance = t;
  return w;
}

RayTrace trace_ray(const RadianceBackbone& backbone, const Ray& ray, double jitter) {
  RayTrace tr;
  if (!ray.hits()) return tr;
  const int n = backbone.config.samples_per_ray;
  tr.delta = (ray.far - ray.near) / n;
  const double shift = backbone.density_shift();
  tr.points.resize(static_cast<std::size_t>(n));
  tr.taps.resize(tr.points.size());
  tr.raw.resize(tr.points.size());
  tr.sigma.resize(tr.points.size());
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    tr.points[k] = ray.origin + (ray.near + (i + jitter) * tr.delta) * ray.direction;
    tr.taps[k] = backbone.taps(tr.points[k]);
    double raw = 0.0;
    for (int j = 0; j < 8; ++j) raw += tr.taps[k].weight[j] * backbone.density(static_cast<Eigen::Index>(tr.taps[k].index[j]));
    tr.raw[k] = raw;
    tr.sigma[k] = softplus(raw + shift);
  }
  tr.weight = render_weights(tr.sigma, tr.delta, &tr.transmittance);
  tr.alpha.resize(tr.points.size());
  for (std::size_t k = 0; k < tr.points.size(); ++k) {
    tr.alpha[k] = -std::expm1(-tr.sigma[k] * tr.delta);
    if (tr.weight[k] >= backbone.config.weight_threshold) tr.kept.push_back(static_cast<int>(k));
  }
  return tr;
}

namespace {

struct ColorPass {
  KeptSamples kept;
  Eigen::MatrixXd zh, h, xc, zc, c1, rgb;
};

ColorPass color_forward(const RadianceBackbone& bb, const std::vector<RayTrace>& traces,
                        const std::vector<Eigen::Vector3d>& directions, const std::vector<Eigen::VectorXd>& appearances) {
  ColorPass p;
  p.kept = gather(bb, traces);
  p.zh = bb.shared.forward(p.kept.shared_in);
  p.h = relu(p.zh);
  const auto n = static_cast<Eigen::Index>(p.kept.refs.size());
  const int dir_dim = 3 + 6 * bb.config.direction_bands;
  p.xc.resize(bb.color_hidden.in(), n);
  std::size_t last_ray = static_cast<std::size_t>(-1);
  Eigen::VectorXd dir_pe;
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto r = p.kept.refs[static_cast<std::size_t>(k)].ray;
    if (r != last_ray) {
      dir_pe = bb.direction_encoding(directions[r]);
      last_ray = r;
    }
    p.xc.col(k).head(bb.config.hidden) = p.h.col(k);
    p.xc.col(k).segment(bb.config.hidden, dir_dim) = dir_pe;
    p.xc.col(k).tail(bb.config.appearance_dim) = appearances[r];
  }
  p.zc = bb.color_hidden.forward(p.xc);
  p.c1 = relu(p.zc);
  p.rgb = bb.color_out.forward(p.c1).unaryExpr([](double v) { return nn::sigmoid(v); });
  return p;
}

}  // namespace

double rgb_step(RadianceBackbone& bb, const std::vector<TrainingRay>& batch, bool accumulate,
                const std::vector<double>* jitters, double opacity_weight, double distortion_weight,
                double sparsity_weight) {
  if (batch.empty()) throw InvalidArgument("rgb_step: empty batch");
  const auto traces = trace_all(bb, batch, jitters);
  std::vector<Eigen::Vector3d> dirs;
  std::vector<Eigen::VectorXd> apps;
  for (const auto& r : batch) {
    if (r.view >= bb.appearance_count()) throw InvalidArgument("rgb_step: appearance index out of range");
    dirs.push_back(r.ray.direction);
    apps.push_back(bb.appearance.col(static_cast<Eigen::Index>(r.view)));
  }
  const auto pass = color_forward(bb, traces, dirs, apps);
  const Eigen::Vector3d bg = bb.background_color();

  // Per-ray per-sample colors (zero for skipped samples).
  std::vector<std::vector<Eigen::Vector3d>> colors(batch.size());
  std::vector<Eigen::Vector3d> rendered(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    colors[r].assign(traces[r].points.size(), Eigen::Vector3d::Zero());
    rendered[r] = traces[r].transmittance * bg;
  }
  for (std::size_t k = 0; k < pass.kept.refs.size(); ++k) {
    const auto [r, i] = pass.kept.refs[k];
    const Eigen::Vector3d c = pass.rgb.col(static_cast<Eigen::Index>(k));
    colors[r][static_cast<std::size_t>(i)] = c;
    rendered[r] += traces[r].weight[static_cast<std::size_t>(i)] * c;
  }
  const double norm = 1.0 / (3.0 * static_cast<double>(batch.size()));
  double loss = 0.0;
  for (std::size_t r = 0; r < batch.size(); ++r) loss += (rendered[r] - batch[r].color).squaredNorm() * norm;
  // Binary entropy of each ray's opacity; only the log arguments are clamped.
  std::vector<double> dopacity(batch.size(), 0.0);
  if (opacity_weight > 0.0) {
    const double scale = opacity_weight / static_cast<double>(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const double o = std::clamp(1.0 - traces[r].transmittance, 0.0, 1.0);
      const double c = std::clamp(o, kEps, 1.0 - kEps);
      loss -= scale * (o * std::log(c) + (1.0 - o) * std::log(1.0 - c));
      if (c == o) dopacity[r] = scale * std::log((1.0 - c) / c);
    }
  }
  // Distortion: sample i sits at s_i = (i + jitter) / n, so |s_i - s_j| = |i - j| / n.
  // dL/dw_i = 2 sum_j w_j |s_i - s_j| + 2 w_i / (3n), kept per ray for the backward pass.
  std::vector<std::vector<double>> ddist(batch.size());
  if (distortion_weight > 0.0) {
    const double scale = distortion_weight / static_cast<double>(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const auto& w = traces[r].weight;
      const std::size_t n = w.size();
      if (n == 0) continue;
      const double ds = 1.0 / static_cast<double>(n);
      double w_total = 0.0, ws_total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        w_total += w[i];
        ws_total += w[i] * static_cast<double>(i);
      }
      ddist[r].resize(n);
      double w_before = 0.0, ws_before = 0.0, pair = 0.0, self = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double si = static_cast<double>(i);
        const double w_after = w_total - w_before - w[i];
        const double ws_after = ws_total - ws_before - w[i] * si;
        const double spread = ds * (si * w_before - ws_before + ws_after - si * w_after);
        pair += w[i] * spread;
        self += w[i] * w[i];
        ddist[r][i] = scale * (2.0 * spread + 2.0 * w[i] * ds / 3.0);
        w_before += w[i];
        ws_before += w[i] * si;
      }
      loss += scale * (pair + self * ds / 3.0);
    }
  }
  // Sparsity: mean alpha over each ray's samples, averaged over rays.
  std::vector<double> dalpha(batch.size(), 0.0);
  if (sparsity_weight > 0.0) {
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const auto& a = traces[r].alpha;
      if (a.empty()) continue;
      dalpha[r] = sparsity_weight / (static_cast<double>(batch.size()) * static_cast<double>(a.size()));
      for (double v : a) loss += dalpha[r] * v;
    }
  }
  if (!accumulate) return loss;

  const double shift = bb.density_shift();
  Eigen::MatrixXd drgb(3, static_cast<Eigen::Index>(pass.kept.refs.size()));
  std::vector<Eigen::Vector3d> dcolor(batch.size());
  Eigen::Vector3d dbg = Eigen::Vector3d::Zero();
  for (std::size_t r = 0; r < batch.size(); ++r) {
    dcolor[r] = 2.0 * norm * (rendered[r] - batch[r].color);
    const auto& tr = traces[r];
    dbg += tr.transmittance * dcolor[r];
    // dC/dsigma_i = delta (T_{i+1} c_i - sum_{k>i} w_k c_k - T_N bg)
    std::vector<double> t_after(tr.points.size());
    double t = 1.0;
    for (std::size_t i = 0; i < tr.points.size(); ++i) {
      t *= 1.0 - tr.alpha[i];
      t_after[i] = t;
    }
    Eigen::Vector3d after = tr.transmittance * bg;
    const auto& gd = ddist[r];
    double gd_after = 0.0;  // sum_{k>i} w_k dL/dw_k
    for (std::size_t i = tr.points.size(); i-- > 0;) {
      // d(opacity)/d(sigma_i) = delta T_N
      double dsigma = tr.delta * (dcolor[r].dot(t_after[i] * colors[r][i] - after) + dopacity[r] * tr.transmittance);
      if (!gd.empty()) {
        dsigma += tr.delta * (gd[i] * t_after[i] - gd_after);
        gd_after += tr.weight[i] * gd[i];
      }
      dsigma += dalpha[r] * tr.delta * (1.0 - tr.alpha[i]);
      const double draw = dsigma * nn::sigmoid(tr.raw[i] + shift);
      for (int j = 0; j < 8; ++j) bb.g_density(static_cast<Eigen::Index>(tr.taps[i].index[j])) += tr.taps[i].weight[j] * draw;
      after += tr.weight[i] * colors[r][i];
    }
  }
  bb.g_background += (dbg.array() * bg.array() * (1.0 - bg.array())).matrix();
  for (std::size_t k = 0; k < pass.kept.refs.size(); ++k) {
    const auto [r, i] = pass.kept.refs[k];
    drgb.col(static_cast<Eigen::Index>(k)) = traces[r].weight[static_cast<std::size_t>(i)] * dcolor[r];
  }
  const Eigen::MatrixXd dzo = (drgb.array() * pass.rgb.array() * (1.0 - pass.rgb.array())).matrix();
  const Eigen::MatrixXd dc1 = bb.color_out.backward(pass.c1, dzo);
  const Eigen::MatrixXd dxc = bb.color_hidden.backward(pass.xc, relu_backward(pass.zc, dc1));
  const int a = bb.config.appearance_dim;
  for (std::size_t k = 0; k < pass.kept.refs.size(); ++k) {
    bb.g_appearance.col(static_cast<Eigen::Index>(batch[pass.kept.refs[k].ray].view)) +=
        dxc.col(static_cast<Eigen::Index>(k)).tail(a);
  }
  const Eigen::MatrixXd dh = dxc.topRows(bb.config.hidden);
  const Eigen::MatrixXd dxh = bb.shared.backward(pass.kept.shared_in, relu_backward(pass.zh, dh));
  const int c = bb.config.feature_channels;
  for (std::size_t k = 0; k < pass.kept.refs.size(); ++k) {
    const auto [r, i] = pass.kept.refs[k];
    const auto& t = traces[r].taps[static_cast<std::size_t>(i)];
    for (int j = 0; j < 8; ++j) {
      bb.g_features.col(static_cast<Eigen::Index>(t.index[j])) += t.weight[j] * dxh.col(static_cast<Eigen::Index>(k)).head(c);
    }
  }
  return loss;
}

Eigen::Vector3d render_color(const RadianceBackbone& bb, const Ray& ray, const Eigen::VectorXd& appearance) {
  const std::vector<RayTrace> traces{trace_ray(bb, ray)};
  const auto pass = color_forward(bb, traces, {ray.direction}, {appearance});
  Eigen::Vector3d out = traces[0].transmittance * bb.background_color();
  for (std::size_t k = 0; k < pass.kept.refs.size(); ++k) {
    out += traces[0].weight[static_cast<std::size_t>(pass.kept.refs[k].sample)] * pass.rgb.col(static_cast<Eigen::Index>(k));
  }
  return out;
}

namespace {

template <typename Fn>
std::vector<TrainingRay> sample_rays(std::size_t count, std::size_t views, std::mt19937_64& rng, Fn&& make) {
  std::uniform_int_distribution<std::size_t> pick(0, views - 1);
  std::vector<TrainingRay> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make(pick(rng), rng));
  return out;
}

}  // namespace

RgbTrainResult train_rgb_field(RadianceBackbone& bb, const std::vector<PosedView>& views, const RgbTrainConfig& cfg) {
  if (views.empty()) throw InvalidArgument("train_rgb_field: no posed images");
  if (views.size() > bb.appearance_count()) throw InvalidArgument("train_rgb_field: more views than appearance embeddings");
  if (cfg.iterations < 0 || cfg.batch_rays < 1) throw InvalidArgument("train_rgb_field: bad schedule");
  for (const auto& v : views) {
    if (!v.image || v.image->empty()) throw InvalidArgument("train_rgb_field: view " + v.id + " has no pixels");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  nn::Adam grid_opt(cfg.grid_lr);
  nn::Adam mlp_opt(cfg.lr);
  RgbTrainResult result;
  const auto make = [&](std::size_t v, std::mt19937_64& g) {
    const auto& img = *views[v].image;
    const int x = std::uniform_int_distribution<int>(0, img.width() - 1)(g);
    const int y = std::uniform_int_distribution<int>(0, img.height() - 1)(g);
    TrainingRay r;
    r.ray = camera_ray(views[v].camera, x + 0.5, y + 0.5, bb.config.bounds);
    r.view = v;
    r.color = Eigen::Vector3d(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
    return r;
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto batch = sample_rays(static_cast<std::size_t>(cfg.batch_rays), views.size(), rng, make);
    std::vector<double> jitters(batch.size());
    for (auto& j : jitters) j = unit(rng);
    bb.zero_grad();
    const double loss = rgb_step(bb, batch, true, &jitters, cfg.opacity_weight, cfg.distortion_weight, cfg.sparsity_weight);
    if (!std::isfinite(loss)) throw Error("train_rgb_field diverged at iteration " + std::to_string(it));
    grid_opt.step(bb.grid_params());
    mlp_opt.step(bb.mlp_params());
    result.losses.push_back(loss);
    if ((it + 1) % 250 == 0) spdlog::info("train-field iteration {}: loss {:.5f}", it + 1, loss);
  }
  bb.zero_grad();
  return result;
}

SemanticHead::SemanticHead(int input_dim, std::uint64_t seed, int w1, int w2, int w3) {
  std::mt19937_64 rng(seed);
  l1 = nn::Dense(input_dim, w1, rng);
  l2 = nn::Dense(w1, w2, rng);
  l3 = nn::Dense(w2, w3, rng);
  out = nn::Dense(w3, 2, rng);
}

namespace {

struct HeadPass {
  Eigen::MatrixXd z1, a1, z2, a2, z3, a3, logits, probs;
};

HeadPass head_forward(const SemanticHead& head, const Eigen::MatrixXd& h) {
  HeadPass p;
  p.z1 = head.l1.forward(h);
  p.a1 = relu(p.z1);
  p.z2 = head.l2.forward(p.a1);
  p.a2 = relu(p.z2);
  p.z3 = head.l3.forward(p.a2);
  p.a3 = relu(p.z3);
  p.logits = head.out.forward(p.a3);
  p.probs.resize(2, p.logits.cols());
  for (Eigen::Index k = 0; k < p.logits.cols(); ++k) {
    const double s = nn::sigmoid(p.logits(1, k) - p.logits(0, k));
    p.probs(1, k) = s;
    p.probs(0, k) = 1.0 - s;
  }
  return p;
}

}  // namespace

Eigen::MatrixXd SemanticHead::probabilities(const Eigen::MatrixXd& h) const { return head_forward(*this, h).probs; }

void SemanticHead::zero_grad() {
  l1.zero_grad();
  l2.zero_grad();
  l3.zero_grad();
  out.zero_grad();
}

std::vector<nn::Param> SemanticHead::params() {
  std::vector<nn::Param> p;
  l1.append_params(p);
  l2.append_params(p);
  l3.append_params(p);
  out.append_params(p);
  return p;
}

std::uint64_t SemanticHead::checksum() const {
  auto h = dense_checksum(l1, 0xcbf29ce484222325ULL);
  h = dense_checksum(l2, h);
  h = dense_checksum(l3, h);
  return dense_checksum(out, h);
}

void SemanticHead::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = kHeadKind;
  ckpt.settings = {{"input", std::to_string(l1.in())},
                   {"w1", std::to_string(l1.out())},
                   {"w2", std::to_string(l2.out())},
                   {"w3", std::to_string(l3.out())}};
  write_dense(ckpt, "l1", l1);
  write_dense(ckpt, "l2", l2);
  write_dense(ckpt, "l3", l3);
  write_dense(ckpt, "out", out);
  save_checkpoint(ckpt, path);
}

SemanticHead SemanticHead::load(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path, kHeadKind);
  int in = 0, w1 = 0, w2 = 0, w3 = 0;
  try {
    in = std::stoi(ckpt.setting("input"));
    w1 = std::stoi(ckpt.setting("w1"));
    w2 = std::stoi(ckpt.setting("w2"));
    w3 = std::stoi(ckpt.setting("w3"));
  } catch (const std::logic_error& e) {
    throw IoError(path.string() + ": bad head settings: " + e.what());
  }
  SemanticHead head(in, 0, w1, w2, w3);
  read_dense(ckpt, "l1", head.l1);
  read_dense(ckpt, "l2", head.l2);
  read_dense(ckpt, "l3", head.l3);
  read_dense(ckpt, "out", head.out);
  return head;
}

double render_semantic(const RadianceBackbone& bb, const SemanticHead& head, const Ray& ray) {
  const std::vector<RayTrace> traces{trace_ray(bb, ray)};
  const auto kept = gather(bb, traces);
  if (kept.refs.empty()) return 0.0;
  const auto probs = head.probabilities(relu(bb.shared.forward(kept.shared_in)));
  double s = 0.0;
  for (std::size_t k = 0; k < kept.refs.size(); ++k) {
    s += traces[0].weight[static_cast<std::size_t>(kept.refs[k].sample)] * probs(1, static_cast<Eigen::Index>(k));
  }
  return std::clamp(s, 0.0, 1.0);
}

double semantic_step(const RadianceBackbone& bb, SemanticHead& head, const std::vector<TrainingRay>& batch,
                     bool accumulate, const std::vector<double>* jitters) {
  if (batch.empty()) throw InvalidArgument("semantic_step: empty batch");
  const auto traces = trace_all(bb, batch, jitters);
  const auto kept = gather(bb, traces);
  const Eigen::MatrixXd h = relu(bb.shared.forward(kept.shared_in));
  const auto pass = head_forward(head, h);
  std::vector<double> s(batch.size(), 0.0);
  for (std::size_t k = 0; k < kept.refs.size(); ++k) {
    const auto [r, i] = kept.refs[k];
    s[r] += traces[r].weight[static_cast<std::size_t>(i)] * pass.probs(1, static_cast<Eigen::Index>(k));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> ds(batch.size(), 0.0);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const double y = batch[r].target;
    const double q = std::clamp(s[r], kEps, 1.0 - kEps);
    loss += -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q)) * inv;
    if (q == s[r]) ds[r] = inv * (q - y) / (q * (1.0 - q));
  }
  if (!accumulate || kept.refs.empty()) return loss;
  Eigen::MatrixXd dlogits(2, static_cast<Eigen::Index>(kept.refs.size()));
  for (std::size_t k = 0; k < kept.refs.size(); ++k) {
    const auto [r, i] = kept.refs[k];
    const auto col = static_cast<Eigen::Index>(k);
    const double p = pass.probs(1, col);
    const double g = ds[r] * traces[r].weight[static_cast<std::size_t>(i)] * p * (1.0 - p);
    dlogits(1, col) = g;
    dlogits(0, col) = -g;
  }
  const Eigen::MatrixXd da3 = head.out.backward(pass.a3, dlogits);
  const Eigen::MatrixXd da2 = head.l3.backward(pass.a2, relu_backward(pass.z3, da3));
  const Eigen::MatrixXd da1 = head.l2.backward(pass.a1, relu_backward(pass.z2, da2));
  head.l1.backward(h, relu_backward(pass.z1, da1));
  return loss;
}

HeadTrainResult train_semantic_head(const RadianceBackbone& bb, SemanticHead& head,
                                    const std::vector<SemanticView>& views, const HeadTrainConfig& cfg) {
  if (views.empty()) throw InvalidArgument("train_semantic_head: no masks");
  if (cfg.iterations < 0 || cfg.batch_rays < 1) throw InvalidArgument("train_semantic_head: bad schedule");
  if (head.l1.in() != bb.config.hidden) throw InvalidArgument("train_semantic_head: head input width differs from backbone");
  for (const auto& v : views) {
    if (!v.view.image || v.mask.size() == 0) throw InvalidArgument("train_semantic_head: view " + v.view.id + " lacks pixels or mask");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  nn::Adam opt(cfg.lr);
  HeadTrainResult result;
  const auto make = [&](std::size_t v, std::mt19937_64& g) {
    const auto& sv = views[v];
    const int w = sv.view.image->width();
    const int h = sv.view.image->height();
    const int x = std::uniform_int_distribution<int>(0, w - 1)(g);
    const int y = std::uniform_int_distribution<int>(0, h - 1)(g);
    TrainingRay r;
    r.ray = camera_ray(sv.view.camera, x + 0.5, y + 0.5, bb.config.bounds);
    r.view = sv.appearance_index;
    r.target = sv.mask.sample_relative((x + 0.5) / w, (y + 0.5) / h) >= cfg.target_threshold ? 1.0 : 0.0;
    return r;
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto batch = sample_rays(static_cast<std::size_t>(cfg.batch_rays), views.size(), rng, make);
    std::vector<double> jitters(batch.size());
    for (auto& j : jitters) j = unit(rng);
    head.zero_grad();
    const double loss = semantic_step(bb, head, batch, true, &jitters);
    if (!std::isfinite(loss)) throw Error("train_semantic_head diverged at iteration " + std::to_string(it));
    opt.step(head.params());
    result.losses.push_back(loss);
    if ((it + 1) % 100 == 0) spdlog::info("localize head iteration {}: loss {:.5f}", it + 1, loss);
  }
  head.zero_grad();
  return result;
}

RenderedView render_view(const RadianceBackbone& bb, const SemanticHead* head, const Camera& camera, int width,
                         int height, const Eigen::VectorXd& appearance, int workers) {
  if (width < 1 || height < 1) throw InvalidArgument("render_view: empty image");
  if (appearance.size() != bb.config.appearance_dim) throw InvalidArgument("render_view: appearance size mismatch");
  RenderedView out;
  out.rgb = RgbImage(width, height);
  if (head) out.semantic = ProbMap(width, height);
  const Eigen::Vector3d bg = bb.background_color();
  parallel_for(static_cast<std::size_t>(height), workers, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    std::vector<RayTrace> traces;
    std::vector<Eigen::Vector3d> dirs;
    for (int x = 0; x < width; ++x) {
      const Ray ray = camera_ray(camera, x + 0.5, y + 0.5, bb.config.bounds);
      traces.push_back(trace_ray(bb, ray));
      dirs.push_back(ray.direction);
    }
    const std::vector<Eigen::VectorXd> apps(static_cast<std::size_t>(width), appearance);
    const auto pass = color_forward(bb, traces, dirs, apps);
    std::vector<Eigen::Vector3d> color(static_cast<std::size_t>(width));
    std::vector<double> sem(static_cast<std::size_t>(width), 0.0);
    for (int x = 0; x < width; ++x) color[static_cast<std::size_t>(x)] = traces[static_cast<std::size_t>(x)].transmittance * bg;
    Eigen::MatrixXd probs;
    if (head && !pass.kept.refs.empty()) probs = head->probabilities(pass.h);
    for (std::size_t k = 0; k < pass.kept.refs.size(); ++k) {
      const auto [r, i] = pass.kept.refs[k];
      const double w = traces[r].weight[static_cast<std::size_t>(i)];
      color[r] += w * pass.rgb.col(static_cast<Eigen::Index>(k));
      if (head) sem[r] += w * probs(1, static_cast<Eigen::Index>(k));
    }
    for (int x = 0; x < width; ++x) {
      auto* p = out.rgb.pixel(x, y);
      for (int c = 0; c < 3; ++c) {
        p[c] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(color[static_cast<std::size_t>(x)](c), 0.0, 1.0)));
      }
      if (head) out.semantic.at(x, y) = std::clamp(sem[static_cast<std::size_t>(x)], 0.0, 1.0);
    }
  });
  return out;
}

BinaryMask largest_component(const ProbMap& map, double threshold) {
  const int w = map.width();
  const int h = map.height();
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<std::size_t> sizes;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      const auto start = static_cast<std::size_t>(sy) * w + sx;
      if (label[start] >= 0 || !(map.at(sx, sy) > threshold)) continue;
      const int id = static_cast<int>(sizes.size());
      std::size_t count = 0;
      std::queue<std::pair<int, int>> q;
      q.emplace(sx, sy);
      label[start] = id;
      while (!q.empty()) {
        const auto [x, y] = q.front();
        q.pop();
        ++count;
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          const auto idx = static_cast<std::size_t>(ny[k]) * w + nx[k];
          if (label[idx] >= 0 || !(map.at(nx[k], ny[k]) > threshold)) continue;
          label[idx] = id;
          q.emplace(nx[k], ny[k]);
        }
      }
      sizes.push_back(count);
    }
  }
  BinaryMask out(w, h);
  if (sizes.empty()) return out;
  // First largest in scan order.
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (label[static_cast<std::size_t>(y) * w + x] == best) out.set(x, y, true);
    }
  }
  return out;
}

ViewScore score_view(const std::string& image_id, const ProbMap& facade, const ProbMap& facade_rerender) {
  ViewScore s;
  s.image_id = image_id;
  const auto comp = largest_component(facade);
  const double total = static_cast<double>(comp.size());
  const double area = static_cast<double>(comp.count());
  const double coverage = total > 0 ? area / total : 0.0;
  s.x = coverage < 0.1 || coverage > 0.9 ? 1.0 : 0.0;
  if (area == 0) return s;
  int x0 = comp.width(), y0 = comp.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < comp.height(); ++y) {
    for (int x = 0; x < comp.width(); ++x) {
      if (!comp.at(x, y)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  const double w = comp.width();
  const double h = comp.height();
  s.m = std::min({x0 / w, (w - 1 - x1) / w, y0 / h, (h - 1 - y1) / h});
  const ProbMap rerender = facade_rerender.width() == comp.width() && facade_rerender.height() == comp.height()
                               ? facade_rerender
                               : resize_probmap(facade_rerender, comp.width(), comp.height());
  const auto comp2 = largest_component(rerender);
  const auto area2 = comp2.count();
  if (area2 > 0) {
    std::size_t both = 0;
    for (std::size_t i = 0; i < comp2.size(); ++i) both += comp[i] && comp2[i] ? 1 : 0;
    s.c = static_cast<double>(both) / static_cast<double>(area2);
  }
  return s;
}

std::vector<std::string> select_views(std::vector<ViewScore> scores, std::size_t n) {
  std::sort(scores.begin(), scores.end(), [](const ViewScore& a, const ViewScore& b) {
    if (a.s() != b.s()) return a.s() > b.s();
    return a.image_id < b.image_id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(n, scores.size()); ++i) out.push_back(scores[i].image_id);
  return out;
}

std::vector<std::pair<std::string, double>> rank_by_overlap(const std::vector<std::pair<std::string, ProbMap>>& maps) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [id, m] : maps) {
    const auto v = m.values();
    out.emplace_back(id, v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

}  // namespace halo
