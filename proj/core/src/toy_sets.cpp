#include "halo/toy_sets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "halo/error.hpp"

namespace halo {

namespace {

constexpr std::array<const char*, 8> kClassNames{"dome", "window", "portal", "tower",
                                                  "arch", "spire",  "rose window", "buttress"};

constexpr std::array<std::array<double, 3>, 8> kClassColors{{{0.25, 0.55, 0.45},
                                                             {0.15, 0.25, 0.55},
                                                             {0.45, 0.25, 0.12},
                                                             {0.60, 0.60, 0.62},
                                                             {0.80, 0.45, 0.30},
                                                             {0.35, 0.35, 0.20},
                                                             {0.70, 0.20, 0.45},
                                                             {0.55, 0.50, 0.35}}};

// Class-specific occupied region in relative coordinates.
struct Layout {
  double x0, y0, x1, y1;
};
constexpr std::array<Layout, 8> kLayouts{{{0.2, 0.0, 0.8, 0.45},
                                          {0.35, 0.25, 0.65, 0.75},
                                          {0.3, 0.5, 0.7, 1.0},
                                          {0.0, 0.0, 0.35, 1.0},
                                          {0.1, 0.3, 0.9, 0.7},
                                          {0.4, 0.0, 0.6, 0.6},
                                          {0.25, 0.2, 0.75, 0.7},
                                          {0.65, 0.2, 1.0, 1.0}}};

}  // namespace

std::vector<RetrievalPair> ToyRetrievalSet::pairs() const {
  std::vector<RetrievalPair> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back({&images[i], vocab[labels[i]]});
  return out;
}

ToyRetrievalSet make_toy_retrieval_set(int per_class, std::uint64_t seed, int size, int classes) {
  if (per_class < 1 || size < 4 || classes < 1 || classes > static_cast<int>(kClassNames.size())) {
    throw InvalidArgument("toy retrieval set: bad sizes");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gain(0.8, 1.2);
  std::uniform_real_distribution<double> shift(-0.08, 0.08);
  std::normal_distribution<double> noise(0.0, 0.03);
  const std::array<double, 3> background{0.85, 0.75, 0.55};

  ToyRetrievalSet set;
  for (int c = 0; c < classes; ++c) set.vocab.emplace_back(kClassNames[static_cast<std::size_t>(c)]);
  for (int c = 0; c < classes; ++c) {
    const auto& color = kClassColors[static_cast<std::size_t>(c)];
    const auto& lay = kLayouts[static_cast<std::size_t>(c)];
    for (int k = 0; k < per_class; ++k) {
      const double g = gain(rng);
      const double dx = shift(rng);
      const double dy = shift(rng);
      RgbImage img(size, size);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double u = (x + 0.5) / size - dx;
          const double v = (y + 0.5) / size - dy;
          const bool inside = u >= lay.x0 && u < lay.x1 && v >= lay.y0 && v < lay.y1;
          const auto& base = inside ? color : background;
          auto* p = img.pixel(x, y);
          for (int ch = 0; ch < 3; ++ch) {
            const double value = std::clamp(g * base[static_cast<std::size_t>(ch)] + noise(rng), 0.0, 1.0);
            p[ch] = static_cast<std::uint8_t>(std::lround(255.0 * value));
          }
        }
      }
      set.images.push_back(std::move(img));
      set.labels.push_back(static_cast<std::size_t>(c));
    }
  }
  return set;
}

double toy_recall_at_k(const ToyRetrievalSet& set, const RetrievalEncoder& encoder, int k) {
  if (set.images.empty()) throw InvalidArgument("toy recall: empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const auto top = retrieve_terms(set.images[i], set.vocab, k, encoder);
    const auto& gold = set.vocab[set.labels[i]];
    hits += std::any_of(top.ranked.begin(), top.ranked.end(), [&](const auto& t) { return t.first == gold; }) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(set.images.size());
}

}  // namespace halo
