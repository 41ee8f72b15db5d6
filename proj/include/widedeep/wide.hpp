#pragma once

// Wide component: a sparse linear model over binary coordinates trained with
// per-coordinate FTRL-Proximal. For coordinate i with gradient g:
//
//   sigma = (sqrt(n + g^2) - sqrt(n)) / alpha
//   z    += g - sigma * w
//   n    += g^2
//   w     = 0                                              if |z| <= lambda1
//         = -(z - sign(z) * lambda1) / ((beta + sqrt(n)) / alpha + lambda2)   otherwise
//
// The bias of the combined model lives in the joint model, not here.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "widedeep/common.hpp"

namespace widedeep {

struct FtrlParams {
  double alpha = 0.1;
  double beta = 1.0;
  double lambda1 = 1e-3;
  double lambda2 = 0.0;

  void validate() const {
    if (!(alpha > 0.0) || !(beta >= 0.0) || !(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
      throw ConfigError("FTRL requires alpha > 0 and beta, lambda1, lambda2 >= 0");
    }
  }

  bool operator==(const FtrlParams&) const = default;
};

/// Per-coordinate weight and FTRL accumulators.
struct FtrlCoordinate {
  double w = 0.0;
  double z = 0.0;
  double n = 0.0;

  bool operator==(const FtrlCoordinate&) const = default;
};

/// The closed-form weight implied by accumulators (z, n).
inline double ftrl_weight(double z, double n, const FtrlParams& p) {
  if (std::abs(z) <= p.lambda1) {
    return 0.0;
  }
  const double sign = z > 0.0 ? 1.0 : -1.0;
  return -(z - sign * p.lambda1) / ((p.beta + std::sqrt(n)) / p.alpha + p.lambda2);
}

inline void ftrl_step(FtrlCoordinate& c, double g, const FtrlParams& p) {
  const double n_next = c.n + g * g;
  const double sigma = (std::sqrt(n_next) - std::sqrt(c.n)) / p.alpha;
  c.z += g - sigma * c.w;
  c.n = n_next;
  c.w = ftrl_weight(c.z, c.n, p);
}

class WideState {
 public:
  using CoordinateMap = std::unordered_map<FeatureIndex, FtrlCoordinate>;

  WideState() = default;

  WideState(FeatureIndex dimension, FtrlParams params) : dimension_(dimension), params_(params) {
    params_.validate();
  }

  FeatureIndex dimension() const noexcept { return dimension_; }
  const FtrlParams& params() const noexcept { return params_; }
  const CoordinateMap& coordinates() const noexcept { return coordinates_; }

  /// Coordinates that were never touched have weight 0.
  double weight(FeatureIndex i) const {
    const auto it = coordinates_.find(i);
    return it == coordinates_.end() ? 0.0 : it->second.w;
  }

  const FtrlCoordinate* find(FeatureIndex i) const {
    const auto it = coordinates_.find(i);
    return it == coordinates_.end() ? nullptr : &it->second;
  }

  void check_index(FeatureIndex i) const {
    if (i >= dimension_) {
      throw DimensionError("wide index " + std::to_string(i) + " >= dimension " + std::to_string(dimension_));
    }
  }

  /// Materializes coordinate i on first touch.
  FtrlCoordinate& touch(FeatureIndex i) {
    check_index(i);
    return coordinates_[i];
  }

  void set(FeatureIndex i, FtrlCoordinate c) { touch(i) = c; }

  /// Overwrites a weight directly, leaving accumulators alone. Used by
  /// gradient checks that perturb w.
  void set_weight(FeatureIndex i, double w) { touch(i).w = w; }

 private:
  FeatureIndex dimension_ = 0;
  FtrlParams params_;
  CoordinateMap coordinates_;
};

/// Sum of weights over the active coordinates.
inline double wide_logit(const WideState& state, std::span<const FeatureIndex> active) {
  double sum = 0.0;
  for (const FeatureIndex i : active) {
    state.check_index(i);
    sum += state.weight(i);
  }
  return sum;
}

/// Applies one FTRL step per (coordinate, gradient) entry.
inline void ftrl_apply(WideState& state, std::span<const std::pair<FeatureIndex, double>> gradients) {
  for (const auto& [i, g] : gradients) {
    if (!std::isfinite(g)) {
      throw NumericError("non-finite wide gradient at coordinate " + std::to_string(i));
    }
    state.check_index(i);
  }
  for (const auto& [i, g] : gradients) {
    ftrl_step(state.touch(i), g, state.params());
  }
}

/// Single-example update: binary features give g_i = grad_logit on every
/// active coordinate. `active` must not repeat an index.
inline void ftrl_update(WideState& state, std::span<const FeatureIndex> active, double grad_logit) {
  std::vector<std::pair<FeatureIndex, double>> grads;
  grads.reserve(active.size());
  for (const FeatureIndex i : active) {
    grads.emplace_back(i, grad_logit);
  }
  ftrl_apply(state, grads);
}

}  // namespace widedeep
