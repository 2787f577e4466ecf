#pragma once

#include <span>

#include "halo/core_data.hpp"

namespace halo {

/// Probabilities are clamped to [eps, 1-eps] before taking logs.
inline constexpr double kProbEpsilon = 1e-7;

/// Mean binary cross-entropy over the valid pixels (all pixels when `valid`
/// is null). Soft targets are allowed. Throws DomainError when no pixel is
/// valid and InvalidArgument on shape mismatch.
double masked_cross_entropy(const ProbMap& pred, const ProbMap& target, const BinaryMask* valid = nullptr);

/// Same value; writes dL/dp into `grad` (zero on invalid or clamped pixels).
double masked_cross_entropy_grad(const ProbMap& pred, const ProbMap& target, const BinaryMask* valid,
                                 std::span<double> grad);

/// Mean binary entropy of the map; eps only clamps the log arguments, so
/// maps of exact 0s and 1s give 0.
double entropy_reg(const ProbMap& pred);
double entropy_reg_grad(const ProbMap& pred, std::span<double> grad);

}  // namespace halo
