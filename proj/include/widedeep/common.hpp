#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace widedeep {

/// Coordinate in the global sparse feature space.
using FeatureIndex = std::uint32_t;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unknown feature names, wrong value kinds, malformed records.
struct SchemaError : Error {
  using Error::Error;
};

/// Fitting a pipeline artifact from an unusable corpus.
struct FitError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Corrupt, truncated or otherwise unreadable checkpoint.
struct LoadError : Error {
  using Error::Error;
};

struct VersionError : LoadError {
  using LoadError::LoadError;
};

/// A metric that is undefined for its input (e.g. AUC over one class).
struct MetricError : Error {
  using Error::Error;
};

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

/// Negative log-likelihood of `label` under sigmoid(logit).
inline double logloss_from_logit(double logit, int label) {
  return label != 0 ? softplus(-logit) : softplus(logit);
}

}  // namespace widedeep
