#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "halo/image.hpp"
#include "halo/retrieval.hpp"

namespace halo {

/// Small labelled image set for retrieval checks: each class has its own
/// palette color and cell layout; samples add gain, shift and pixel noise.
struct ToyRetrievalSet {
  std::vector<std::string> vocab;
  std::vector<RgbImage> images;
  std::vector<std::size_t> labels;  // index into vocab

  std::vector<RetrievalPair> pairs() const;
};

/// The eight default class names: dome, window, portal, tower, arch, spire, rose window, buttress.
ToyRetrievalSet make_toy_retrieval_set(int per_class, std::uint64_t seed, int size = 32, int classes = 8);

/// Fraction of images whose own label is among the top-k retrieved vocabulary terms.
double toy_recall_at_k(const ToyRetrievalSet& set, const RetrievalEncoder& encoder, int k);

}  // namespace halo
