#include "halo/losses.hpp"

#include <algorithm>
#include <cmath>

#include "halo/error.hpp"

namespace halo {

namespace {

void check_shapes(const ProbMap& pred, const ProbMap& target, const BinaryMask* valid) {
  if (pred.width() != target.width() || pred.height() != target.height()) {
    throw InvalidArgument("cross-entropy: prediction and target shapes differ");
  }
  if (valid && (valid->width() != pred.width() || valid->height() != pred.height())) {
    throw InvalidArgument("cross-entropy: validity mask shape differs");
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

}  // namespace

double masked_cross_entropy_grad(const ProbMap& pred, const ProbMap& target, const BinaryMask* valid,
                                 std::span<double> grad) {
  check_shapes(pred, target, valid);
  const auto p = pred.values();
  const auto t = target.values();
  std::size_t count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) count += (!valid || (*valid)[i]) ? 1 : 0;
  if (count == 0) throw DomainError("cross-entropy over an empty validity mask");
  const double inv = 1.0 / static_cast<double>(count);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!grad.empty()) grad[i] = 0.0;
    if (valid && !(*valid)[i]) continue;
    const double q = clamp_prob(p[i]);
    sum += -(t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q));
    if (!grad.empty() && q == p[i]) grad[i] = inv * (-t[i] / q + (1.0 - t[i]) / (1.0 - q));
  }
  return sum * inv;
}

double masked_cross_entropy(const ProbMap& pred, const ProbMap& target, const BinaryMask* valid) {
  return masked_cross_entropy_grad(pred, target, valid, {});
}

double entropy_reg_grad(const ProbMap& pred, std::span<double> grad) {
  const auto p = pred.values();
  if (p.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    // Clamped inside the logs only, so binary maps score exactly 0.
    const double q = std::clamp(p[i], 0.0, 1.0);
    const double c = clamp_prob(q);
    sum += -(q * std::log(c) + (1.0 - q) * std::log(1.0 - c));
    if (!grad.empty()) grad[i] = c == p[i] ? inv * std::log((1.0 - c) / c) : 0.0;
  }
  return sum * inv;
}

double entropy_reg(const ProbMap& pred) { return entropy_reg_grad(pred, {}); }

}  // namespace halo
