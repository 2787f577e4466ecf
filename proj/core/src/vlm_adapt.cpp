#include "halo/vlm_adapt.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "halo/checkpoint.hpp"
#include "halo/error.hpp"
#include "halo/losses.hpp"
#include "halo/text.hpp"

namespace halo {

namespace {

constexpr std::string_view kSegKind = "feature-seg-model";

}  // namespace

FeatureSegModel::FeatureSegModel(const SegModelConfig& config) : config_(config) {
  if (config.input_size < 1 || config.feature_dim < 1 || config.text_buckets < 1) {
    throw InvalidArgument("segmenter config: sizes must be positive");
  }
  const int d = config.feature_dim;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  color_proj_.resize(d, 6);
  for (Eigen::Index i = 0; i < color_proj_.size(); ++i) color_proj_.data()[i] = config.color_frequency * n01(rng);
  color_phase_.resize(d);
  for (int i = 0; i < d; ++i) color_phase_(i) = phase(rng);
  trigram_table_.resize(config.text_buckets, d);
  for (Eigen::Index i = 0; i < trigram_table_.size(); ++i) trigram_table_.data()[i] = n01(rng);

  std::normal_distribution<double> init(0.0, 0.1);
  decoder_.w.resize(d, d);
  for (Eigen::Index i = 0; i < decoder_.w.size(); ++i) decoder_.w.data()[i] = init(rng);
  decoder_.u.resize(d);
  decoder_.v.resize(d);
  for (int i = 0; i < d; ++i) {
    decoder_.u(i) = init(rng);
    decoder_.v(i) = init(rng);
  }
  decoder_.b = Eigen::VectorXd::Zero(1);
}

Eigen::MatrixXd FeatureSegModel::image_features(const RgbImage& image) const {
  const int s = config_.input_size;
  if (image.width() != s || image.height() != s) {
    throw InvalidArgument("segmenter input must be " + std::to_string(s) + "x" + std::to_string(s));
  }
  const int d = config_.feature_dim;
  Eigen::MatrixXd feats(static_cast<Eigen::Index>(s) * s, d);
  Eigen::Matrix<double, 6, 1> c;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        c(ch) = image.at(x, y, ch);
        double sum = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = std::clamp(x + dx, 0, s - 1);
            const int yy = std::clamp(y + dy, 0, s - 1);
            sum += image.at(xx, yy, ch);
            ++n;
          }
        }
        c(3 + ch) = sum / n;
      }
      const Eigen::VectorXd z = color_proj_ * c + color_phase_;
      feats.row(static_cast<Eigen::Index>(y) * s + x) = z.array().cos().transpose();
    }
  }
  return feats;
}

Eigen::VectorXd FeatureSegModel::text_embedding(std::string_view phrase) const {
  Eigen::VectorXd t = Eigen::VectorXd::Zero(config_.feature_dim);
  for (const auto& tri : text::char_trigrams(text::to_lower(phrase))) {
    t += trigram_table_.row(static_cast<Eigen::Index>(text::fnv1a(tri) % config_.text_buckets)).transpose();
  }
  const double n = t.norm();
  return n > 0 ? Eigen::VectorXd(t / n) : t;
}

ProbMap FeatureSegModel::decode(const Eigen::MatrixXd& features, const Eigen::VectorXd& t) const {
  const int s = config_.input_size;
  const Eigen::VectorXd dir = decoder_.w * t + decoder_.u;
  const double bias = decoder_.v.dot(t) + decoder_.b(0);
  const Eigen::VectorXd logits = features * dir;
  ProbMap out(s, s);
  auto vals = out.values();
  for (Eigen::Index i = 0; i < logits.size(); ++i) vals[static_cast<std::size_t>(i)] = nn::sigmoid(logits(i) + bias);
  return out;
}

ProbMap FeatureSegModel::forward(const RgbImage& image, std::string_view text) const {
  return decode(image_features(image), text_embedding(text));
}

ProbMap FeatureSegModel::segment(const ImageRegion& region, std::string_view text) const {
  const auto pixels = region.pixels();
  const int s = config_.input_size;
  return forward(resize_bilinear(pixels, s, s), text);
}

std::string FeatureSegModel::identity() const {
  return "feature-seg/" + std::to_string(encoder_checksum()) + "/" + std::to_string(decoder_checksum());
}

std::vector<double> FeatureSegModel::Decoder::flatten() const {
  std::vector<double> out(w.data(), w.data() + w.size());
  out.insert(out.end(), u.data(), u.data() + u.size());
  out.insert(out.end(), v.data(), v.data() + v.size());
  out.insert(out.end(), b.data(), b.data() + b.size());
  return out;
}

void FeatureSegModel::Decoder::assign(std::span<const double> flat) {
  const auto n = static_cast<std::size_t>(w.size() + u.size() + v.size() + b.size());
  if (flat.size() != n) throw InvalidArgument("decoder parameter count mismatch");
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = flat[k++];
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = flat[k++];
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = flat[k++];
  b(0) = flat[k];
}

FeatureSegModel::Decoder FeatureSegModel::zero_decoder() const {
  const int d = config_.feature_dim;
  return {Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(1)};
}

void FeatureSegModel::accumulate_gradient(const Eigen::MatrixXd& features, const Eigen::VectorXd& t,
                                          std::span<const double> dlogit, Decoder& grad) const {
  const Eigen::Map<const Eigen::VectorXd> g(dlogit.data(), static_cast<Eigen::Index>(dlogit.size()));
  const Eigen::VectorXd a = features.transpose() * g;
  const double gsum = g.sum();
  grad.w.noalias() += a * t.transpose();
  grad.u += a;
  grad.v += gsum * t;
  grad.b(0) += gsum;
}

std::uint64_t FeatureSegModel::encoder_checksum() const {
  auto h = nn::checksum({color_proj_.data(), static_cast<std::size_t>(color_proj_.size())});
  h = nn::checksum({color_phase_.data(), static_cast<std::size_t>(color_phase_.size())}, h);
  return nn::checksum({trigram_table_.data(), static_cast<std::size_t>(trigram_table_.size())}, h);
}

std::uint64_t FeatureSegModel::decoder_checksum() const {
  const auto flat = decoder_.flatten();
  return nn::checksum(flat);
}

void FeatureSegModel::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = kSegKind;
  ckpt.settings = {{"input_size", std::to_string(config_.input_size)},
                   {"feature_dim", std::to_string(config_.feature_dim)},
                   {"text_buckets", std::to_string(config_.text_buckets)},
                   {"color_frequency", fmt::format("{:.17g}", config_.color_frequency)},
                   {"seed", std::to_string(config_.seed)}};
  ckpt.put("encoder.color_proj", color_proj_);
  ckpt.put("encoder.color_phase", color_phase_);
  ckpt.put("encoder.trigram_table", trigram_table_);
  ckpt.put("decoder.w", decoder_.w);
  ckpt.put("decoder.u", decoder_.u);
  ckpt.put("decoder.v", decoder_.v);
  ckpt.put("decoder.b", decoder_.b);
  save_checkpoint(ckpt, path);
}

FeatureSegModel FeatureSegModel::load(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path, kSegKind);
  SegModelConfig cfg;
  try {
    cfg.input_size = std::stoi(ckpt.setting("input_size"));
    cfg.feature_dim = std::stoi(ckpt.setting("feature_dim"));
    cfg.text_buckets = std::stoi(ckpt.setting("text_buckets"));
    cfg.color_frequency = std::stod(ckpt.setting("color_frequency"));
    cfg.seed = std::stoull(ckpt.setting("seed"));
  } catch (const std::logic_error& e) {
    throw IoError(path.string() + ": bad segmenter settings: " + e.what());
  }
  FeatureSegModel m(cfg);
  const int d = cfg.feature_dim;
  m.color_proj_ = ckpt.matrix("encoder.color_proj", d, 6);
  m.color_phase_ = ckpt.vector("encoder.color_phase", d);
  m.trigram_table_ = ckpt.matrix("encoder.trigram_table", cfg.text_buckets, d);
  m.decoder_.w = ckpt.matrix("decoder.w", d, d);
  m.decoder_.u = ckpt.vector("decoder.u", d);
  m.decoder_.v = ckpt.vector("decoder.v", d);
  m.decoder_.b = ckpt.vector("decoder.b", 1);
  return m;
}

namespace {

// Target (and validity) given over a region, resampled onto the model grid.
void resample_target(const SupervisedItem& item, int s, ProbMap& target, BinaryMask& valid) {
  target = ProbMap(s, s);
  valid = BinaryMask(s, s, true);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double u = (x + 0.5) / s;
      const double v = (y + 0.5) / s;
      target.at(x, y) = std::clamp(item.target.sample_relative(u, v), 0.0, 1.0);
      if (item.valid) {
        const auto& m = *item.valid;
        const int mx = std::min(m.width() - 1, static_cast<int>(u * m.width()));
        const int my = std::min(m.height() - 1, static_cast<int>(v * m.height()));
        valid.set(x, y, m.at(mx, my));
      }
    }
  }
}

struct MapState {
  Eigen::MatrixXd features;
  Eigen::VectorXd text;
  ProbMap pred;
  std::vector<double> dpred;
};

MapState run_model(const FeatureSegModel& model, const RgbImage& image, const Rect& region, const std::string& text) {
  const int s = model.input_size();
  const RgbImage input = resize_bilinear(region == image.bounds() ? image : crop(image, region), s, s);
  MapState st;
  st.features = model.image_features(input);
  st.text = model.text_embedding(text);
  st.pred = model.decode(st.features, st.text);
  st.dpred.assign(st.pred.size(), 0.0);
  return st;
}

}  // namespace

LossReport compute_step(const FeatureSegModel& model, const StepBatch& batch, FeatureSegModel::Decoder* grad) {
  const int s = model.input_size();
  LossReport report;
  std::vector<MapState> maps;
  std::vector<double> g;

  auto supervised = [&](const std::vector<SupervisedItem>& items, double& loss) {
    if (items.empty()) return;
    const double scale = 1.0 / static_cast<double>(items.size());
    for (const auto& item : items) {
      auto st = run_model(model, *item.image, item.region, item.text);
      ProbMap target;
      BinaryMask valid;
      resample_target(item, s, target, valid);
      g.assign(st.pred.size(), 0.0);
      loss += scale * masked_cross_entropy_grad(st.pred, target, &valid, g);
      for (std::size_t i = 0; i < g.size(); ++i) st.dpred[i] += scale * g[i];
      maps.push_back(std::move(st));
    }
  };
  supervised(batch.corresp, report.l_corresp);
  supervised(batch.crops, report.l_crop);

  if (batch.consistency) {
    const auto& c = *batch.consistency;
    const auto& img = *c.image;
    if (!img.bounds().contains(c.crop) || c.crop.empty()) throw InvalidArgument("consistency crop outside image");
    auto st = run_model(model, img, img.bounds(), c.text);
    const int ow = c.oracle_target.width();
    const int oh = c.oracle_target.height();
    std::vector<BilinearTaps> taps(static_cast<std::size_t>(ow) * oh);
    ProbMap cropped(ow, oh);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const double u = (c.crop.x0 + (x + 0.5) / ow * c.crop.width()) / img.width();
        const double v = (c.crop.y0 + (y + 0.5) / oh * c.crop.height()) / img.height();
        auto& t = taps[static_cast<std::size_t>(y) * ow + x];
        t = bilinear_taps(s, s, u, v);
        double p = 0.0;
        for (int k = 0; k < 4; ++k) p += t.weight[k] * st.pred.values()[t.index[k]];
        cropped.at(x, y) = std::clamp(p, 0.0, 1.0);
      }
    }
    g.assign(cropped.size(), 0.0);
    report.l_consistency = masked_cross_entropy_grad(cropped, c.oracle_target, nullptr, g);
    for (std::size_t i = 0; i < taps.size(); ++i) {
      for (int k = 0; k < 4; ++k) st.dpred[taps[i].index[k]] += taps[i].weight[k] * g[i];
    }
    maps.push_back(std::move(st));
  }

  if (!maps.empty()) {
    const double scale = 1.0 / static_cast<double>(maps.size());
    for (auto& st : maps) {
      g.assign(st.pred.size(), 0.0);
      report.l_reg += scale * entropy_reg_grad(st.pred, g);
      for (std::size_t i = 0; i < g.size(); ++i) st.dpred[i] += scale * g[i];
    }
  }

  if (grad) {
    for (auto& st : maps) {
      const auto p = st.pred.values();
      for (std::size_t i = 0; i < p.size(); ++i) st.dpred[i] *= p[i] * (1.0 - p[i]);
      model.accumulate_gradient(st.features, st.text, st.dpred, *grad);
    }
  }
  return report;
}

double consistency_loss(const SegModel& model, const RgbImage& image, std::string_view text, const Rect& crop_rect,
                        const SegOracle& frozen_oracle) {
  if (crop_rect.empty() || !image.bounds().contains(crop_rect)) throw InvalidArgument("consistency crop outside image");
  const int s = model.input_size();
  const ProbMap full = model.forward(resize_bilinear(image, s, s), text);
  const ProbMap target = frozen_oracle.segment(ImageRegion::whole("", image).sub(crop_rect), text);
  ProbMap cropped(target.width(), target.height());
  for (int y = 0; y < target.height(); ++y) {
    for (int x = 0; x < target.width(); ++x) {
      const double u = (crop_rect.x0 + (x + 0.5) / target.width() * crop_rect.width()) / image.width();
      const double v = (crop_rect.y0 + (y + 0.5) / target.height() * crop_rect.height()) / image.height();
      cropped.at(x, y) = std::clamp(full.sample_relative(u, v), 0.0, 1.0);
    }
  }
  return masked_cross_entropy(cropped, target);
}

FinetuneResult finetune_segmenter(FeatureSegModel& model, const std::vector<ZoomPairSample>& zoom_pairs,
                                  const std::vector<CropSample>& crops, const ImageLookup& images,
                                  const SegOracle& frozen_oracle, const SimOracle& sim,
                                  const FinetuneSchedule& schedule) {
  if (zoom_pairs.empty() && crops.empty()) throw InvalidArgument("finetune_segmenter: no training samples");
  if (schedule.epochs < 1 || schedule.corresp_per_step < 0 || schedule.crops_per_step < 0) {
    throw InvalidArgument("finetune_segmenter: bad schedule");
  }
  std::mt19937_64 rng(schedule.seed);
  std::bernoulli_distribution plural(std::clamp(schedule.plural_p, 0.0, 1.0));
  auto optimizer = nn::make_optimizer(schedule.optimizer, schedule.lr);
  FinetuneResult result;

  auto steps_for = [](std::size_t n, int per) {
    return per > 0 && n > 0 ? (n + static_cast<std::size_t>(per) - 1) / static_cast<std::size_t>(per) : 0;
  };
  const std::size_t steps_per_epoch =
      std::max(steps_for(zoom_pairs.size(), schedule.corresp_per_step), steps_for(crops.size(), schedule.crops_per_step));
  if (steps_per_epoch == 0) throw InvalidArgument("finetune_segmenter: schedule draws no samples");

  std::vector<std::size_t> zoom_order(zoom_pairs.size());
  std::vector<std::size_t> crop_order(crops.size());
  auto augment = [&](const std::string& label) {
    if (plural(rng)) {
      ++result.pluralized;
      return text::pluralize(label);
    }
    return label;
  };

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::iota(zoom_order.begin(), zoom_order.end(), 0);
    std::iota(crop_order.begin(), crop_order.end(), 0);
    std::shuffle(zoom_order.begin(), zoom_order.end(), rng);
    std::shuffle(crop_order.begin(), crop_order.end(), rng);
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      StepBatch batch;
      std::string consistency_id;
      std::string consistency_label;
      for (int k = 0; k < schedule.corresp_per_step && !zoom_pairs.empty(); ++k) {
        const auto& z = zoom_pairs[zoom_order[(step * schedule.corresp_per_step + k) % zoom_pairs.size()]];
        const RgbImage& img = images(z.zoomed_out_id);
        batch.corresp.push_back({&img, img.bounds(), augment(z.label), z.target, z.valid});
        if (consistency_id.empty()) {
          consistency_id = z.zoomed_out_id;
          consistency_label = batch.corresp.back().text;
        }
      }
      for (int k = 0; k < schedule.crops_per_step && !crops.empty(); ++k) {
        const auto& c = crops[crop_order[(step * schedule.crops_per_step + k) % crops.size()]];
        const RgbImage& img = images(c.image_id);
        batch.crops.push_back({&img, c.crop, augment(c.label), c.target, std::nullopt});
        if (consistency_id.empty()) {
          consistency_id = c.image_id;
          consistency_label = batch.crops.back().text;
        }
      }
      const RgbImage& cimg = images(consistency_id);
      const auto region = ImageRegion::whole(consistency_id, cimg);
      const Rect crop_rect = two_crop_pick(region, consistency_label, sim, rng);
      batch.consistency =
          ConsistencyItem{&cimg, crop_rect, consistency_label, frozen_oracle.segment(region.sub(crop_rect), consistency_label)};

      auto grad = model.zero_decoder();
      LossReport report;
      try {
        report = compute_step(model, batch, &grad);
      } catch (const DomainError& e) {
        ++result.skipped;
        spdlog::debug("finetune: skipped step: {}", e.what());
        continue;
      }
      if (!std::isfinite(report.total())) {
        throw Error("finetune_segmenter diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(step));
      }
      auto& dec = model.decoder();
      const std::vector<nn::Param> params{nn::param_of(dec.w, grad.w), nn::param_of(dec.u, grad.u),
                                          nn::param_of(dec.v, grad.v), nn::param_of(dec.b, grad.b)};
      optimizer->step(params);
      result.steps.push_back(report);
      epoch_total += report.total();
      ++epoch_steps;
    }
    const double mean = epoch_steps ? epoch_total / static_cast<double>(epoch_steps) : 0.0;
    result.epoch_mean_total.push_back(mean);
    spdlog::info("finetune-seg epoch {}: mean loss {:.5f}", epoch, mean);
  }
  return result;
}

Rect bbox_from_map(const ProbMap& map, double threshold, double margin) {
  int x0 = map.width(), y0 = map.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (map.at(x, y) > threshold) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) return {0, 0, map.width(), map.height()};
  const int mx = static_cast<int>(std::lround(margin * (x1 - x0 + 1)));
  const int my = static_cast<int>(std::lround(margin * (y1 - y0 + 1)));
  return {std::max(0, x0 - mx), std::max(0, y0 - my), std::min(map.width(), x1 + 1 + mx),
          std::min(map.height(), y1 + 1 + my)};
}

Rect building_bbox(const ImageRegion& image, const std::string& building_prompt, const SegOracle& seg) {
  const int w = image.rect.width();
  const int h = image.rect.height();
  const ProbMap map = seg.segment(image, building_prompt);
  const Rect box = bbox_from_map(map);
  if (map.width() == w && map.height() == h) return box;
  // Map the box's relative extent onto the image grid.
  const auto sx = static_cast<double>(w) / map.width();
  const auto sy = static_cast<double>(h) / map.height();
  return {std::clamp(static_cast<int>(std::floor(box.x0 * sx)), 0, w), std::clamp(static_cast<int>(std::floor(box.y0 * sy)), 0, h),
          std::clamp(static_cast<int>(std::ceil(box.x1 * sx)), 0, w), std::clamp(static_cast<int>(std::ceil(box.y1 * sy)), 0, h)};
}

std::vector<int> window_offsets(int length, int window, int stride) {
  if (length <= window) return {0};
  std::vector<int> out;
  for (int x = 0; x + window <= length; x += stride) out.push_back(x);
  if (out.back() + window < length) out.push_back(length - window);
  return out;
}

TileLayout plan_tiles(int width, int height, int window, int max_dim, int stride) {
  if (width < 1 || height < 1) throw InvalidArgument("plan_tiles: empty image");
  TileLayout t;
  const int longest = std::max(width, height);
  double scale = 1.0;
  if (longest > max_dim) {
    scale = static_cast<double>(max_dim) / longest;
  } else if (longest < window) {
    scale = static_cast<double>(window) / longest;
  }
  t.scaled_width = std::max(1, static_cast<int>(std::lround(width * scale)));
  t.scaled_height = std::max(1, static_cast<int>(std::lround(height * scale)));
  t.padded_width = std::max(t.scaled_width, window);
  t.padded_height = std::max(t.scaled_height, window);
  t.pad_left = (t.padded_width - t.scaled_width) / 2;
  t.pad_top = (t.padded_height - t.scaled_height) / 2;
  t.x_offsets = window_offsets(t.padded_width, window, stride);
  t.y_offsets = window_offsets(t.padded_height, window, stride);
  return t;
}

ProbMap tiled_segment(const RgbImage& image, std::string_view text, const SegModel& model, int max_dim, int stride) {
  const int window = model.input_size();
  const auto t = plan_tiles(image.width(), image.height(), window, max_dim, stride);
  const RgbImage scaled = (t.scaled_width == image.width() && t.scaled_height == image.height())
                              ? image
                              : resize_bilinear(image, t.scaled_width, t.scaled_height);
  RgbImage padded(t.padded_width, t.padded_height);
  for (int y = 0; y < t.padded_height; ++y) {
    const int sy = std::clamp(y - t.pad_top, 0, t.scaled_height - 1);
    for (int x = 0; x < t.padded_width; ++x) {
      const int sx = std::clamp(x - t.pad_left, 0, t.scaled_width - 1);
      std::copy_n(scaled.pixel(sx, sy), 3, padded.pixel(x, y));
    }
  }
  std::vector<double> sum(static_cast<std::size_t>(t.padded_width) * t.padded_height, 0.0);
  std::vector<int> count(sum.size(), 0);
  for (int oy : t.y_offsets) {
    for (int ox : t.x_offsets) {
      const ProbMap pred = model.forward(crop(padded, {ox, oy, ox + window, oy + window}), text);
      for (int y = 0; y < window; ++y) {
        for (int x = 0; x < window; ++x) {
          const auto i = static_cast<std::size_t>(oy + y) * t.padded_width + (ox + x);
          sum[i] += pred.at(x, y);
          ++count[i];
        }
      }
    }
  }
  ProbMap unpadded(t.scaled_width, t.scaled_height);
  for (int y = 0; y < t.scaled_height; ++y) {
    for (int x = 0; x < t.scaled_width; ++x) {
      const auto i = static_cast<std::size_t>(y + t.pad_top) * t.padded_width + (x + t.pad_left);
      unpadded.at(x, y) = std::clamp(sum[i] / count[i], 0.0, 1.0);
    }
  }
  return resize_probmap(unpadded, image.width(), image.height());
}

ProbMap segment_zoomed(const RgbImage& image, std::string_view text, const SegModel& model, const Rect& box,
                       int max_dim, int stride) {
  if (box.empty() || !image.bounds().contains(box)) throw InvalidArgument("segment_zoomed: box outside image");
  const ProbMap inner = tiled_segment(box == image.bounds() ? image : crop(image, box), text, model, max_dim, stride);
  if (box == image.bounds()) return inner;
  ProbMap out(image.width(), image.height());
  for (int y = 0; y < box.height(); ++y) {
    for (int x = 0; x < box.width(); ++x) out.at(box.x0 + x, box.y0 + y) = inner.at(x, y);
  }
  return out;
}

}  // namespace halo
