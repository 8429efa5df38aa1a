#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "zipmo/nn/graph.hpp"

namespace zipmo::nn {

/// Builds the scalar loss for the current parameter values. Must be a pure
/// function of the store (fixed noise, fixed data).
using LossBuilder = std::function<Var<double>(Graph<double>&, const ParamStore<double>&)>;

struct GradCheckOptions {
  double eps = 1e-6;
  int samples = 100;
  std::uint64_t seed = 0;
  /// Denominator floor for the relative error, so coordinates whose true
  /// derivative is ~0 are compared absolutely.
  double floor = 1e-6;
  /// Coordinates where forward and backward one-sided differences disagree
  /// by more than this (relative) straddle a kink and are skipped.
  double kink_tol = 1e-2;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;
  std::string worst;  // "param[i]" of the largest error
};

/// Compares the analytic gradient of `loss` with central differences on
/// randomly sampled coordinates. Parameter values are restored on return.
GradCheckResult grad_check(const LossBuilder& loss, ParamStore<double>& ps, const GradCheckOptions& opt = {});

}  // namespace zipmo::nn
