#pragma once

// Joint wide & deep model:
//
//   P(y = 1 | x) = sigmoid(w_wide . [x, cross(x)] + w_deep . a(L) + b)
//
// Both components are trained simultaneously through the one logistic loss:
// the wide side with FTRL-Proximal, the deep side (including w_deep and b)
// with AdaGrad. Mini-batch gradients are means over the batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "widedeep/common.hpp"
#include "widedeep/deep.hpp"
#include "widedeep/feature_pipeline.hpp"
#include "widedeep/wide.hpp"

namespace widedeep {

enum class ModelKind : std::uint8_t { joint = 0, wide_only = 1, deep_only = 2 };

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::joint:
      return "joint";
    case ModelKind::wide_only:
      return "wide_only";
    case ModelKind::deep_only:
      return "deep_only";
  }
  return "unknown";
}

/// Which coordinates of the global sparse space feed the wide component.
enum class WideInputs : std::uint8_t { crosses_only = 0, all = 1 };

struct ModelConfig {
  DeepArchitecture deep;
  std::vector<std::string> deep_features;  // empty: every categorical feature
  WideInputs wide_inputs = WideInputs::crosses_only;
  FtrlParams ftrl;
  AdagradParams adagrad;
};

struct WideDeepModel {
  std::optional<WideState> wide;
  std::optional<DeepState> deep;
  FeatureIndex dimension = 0;
  FeatureIndex cross_offset = 0;
  WideInputs wide_inputs = WideInputs::crosses_only;
  std::vector<double> output_weights;  // w_deep over a(L)
  std::vector<double> output_accum;
  double bias = 0.0;
  double bias_accum = 0.0;
  AdagradParams output_adagrad;

  ModelKind kind() const {
    if (wide && deep) {
      return ModelKind::joint;
    }
    return wide ? ModelKind::wide_only : ModelKind::deep_only;
  }

  /// The part of an example's sparse set routed to the wide component.
  std::span<const FeatureIndex> wide_view(const EncodedExample& ex) const {
    std::span<const FeatureIndex> all(ex.sparse_indices);
    if (wide_inputs == WideInputs::all) {
      return all;
    }
    const auto it = std::lower_bound(all.begin(), all.end(), cross_offset);
    return all.subspan(static_cast<std::size_t>(it - all.begin()));
  }

  void check_example(const EncodedExample& ex) const {
    for (const FeatureIndex i : ex.sparse_indices) {
      if (i >= dimension) {
        throw DimensionError("sparse index " + std::to_string(i) + " >= model dimension " +
                             std::to_string(dimension));
      }
    }
  }
};

inline WideDeepModel make_model(const FeaturePipeline& pipeline, const ModelConfig& config, ModelKind kind,
                                std::uint64_t seed) {
  WideDeepModel model;
  model.dimension = pipeline.dimension();
  model.cross_offset = pipeline.cross_offset();
  model.wide_inputs = config.wide_inputs;
  config.adagrad.validate();
  model.output_adagrad = config.adagrad;
  std::mt19937_64 rng(seed);
  if (kind != ModelKind::deep_only) {
    model.wide.emplace(pipeline.dimension(), config.ftrl);
  }
  if (kind != ModelKind::wide_only) {
    std::vector<std::string> names = config.deep_features;
    if (names.empty()) {
      names = pipeline.categorical_features();
    }
    std::vector<EmbeddingSlot> slots;
    for (const auto& name : names) {
      const auto slot = pipeline.categorical_slot(name);
      if (!slot) {
        throw SchemaError("deep feature '" + name + "' is not a categorical feature of the pipeline");
      }
      slots.push_back({name, pipeline.base_offset(*slot),
                       static_cast<std::uint32_t>(pipeline.vocabularies()[*slot].size())});
    }
    model.deep = make_deep_state(slots, pipeline.dense_width(), config.deep, config.adagrad, rng);
    const std::size_t width = model.deep->output_width();
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    std::uniform_real_distribution<double> dist(-bound, bound);
    model.output_weights.resize(width);
    for (double& w : model.output_weights) {
      w = dist(rng);
    }
    model.output_accum.assign(width, 0.0);
  }
  return model;
}

struct LogitParts {
  double wide = 0.0;
  double deep = 0.0;
  double bias = 0.0;

  double total() const { return wide + deep + bias; }
};

/// Logit contributions of each side. Fills `trace` with the deep forward pass when given.
inline LogitParts logit_parts(const WideDeepModel& model, const EncodedExample& ex, ForwardTrace* trace = nullptr) {
  model.check_example(ex);
  LogitParts parts;
  parts.bias = model.bias;
  if (model.wide) {
    parts.wide = wide_logit(*model.wide, model.wide_view(ex));
  }
  if (model.deep) {
    ForwardTrace local = deep_forward(*model.deep, ex);
    const auto out = local.output();
    if (out.size() != model.output_weights.size()) {
      throw DimensionError("output weights do not match deep output width");
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
      parts.deep += model.output_weights[k] * out[k];
    }
    if (trace != nullptr) {
      *trace = std::move(local);
    }
  }
  return parts;
}

inline double logit(const WideDeepModel& model, const EncodedExample& ex) { return logit_parts(model, ex).total(); }

inline double predict(const WideDeepModel& model, const EncodedExample& ex) { return sigmoid(logit(model, ex)); }

/// Mean-over-batch gradients of the logistic loss for every parameter.
struct JointGradients {
  std::vector<std::pair<FeatureIndex, double>> wide;  // ascending coordinate
  DeepGradients deep;
  std::vector<double> output_weights;
  double bias = 0.0;
  double mean_loss = 0.0;  // before any update
};

inline JointGradients compute_gradients(const WideDeepModel& model, std::span<const EncodedExample> batch) {
  if (batch.empty()) {
    throw Error("train_step needs a nonempty batch");
  }
  JointGradients grads;
  if (model.deep) {
    grads.deep = DeepGradients::zeros_like(*model.deep);
    grads.output_weights.assign(model.output_weights.size(), 0.0);
  }
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  std::map<FeatureIndex, double> wide_grads;
  std::vector<double> grad_final;
  double loss_sum = 0.0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const EncodedExample& ex = batch[e];
    if (ex.label != 0 && ex.label != 1) {
      throw Error("label of example " + std::to_string(e) + " is not 0 or 1");
    }
    ForwardTrace trace;
    const double z = logit_parts(model, ex, &trace).total();
    const double loss = logloss_from_logit(z, ex.label);
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite loss at batch example " + std::to_string(e));
    }
    loss_sum += loss;
    const double g = (sigmoid(z) - ex.label) * inv_batch;
    grads.bias += g;
    if (model.wide) {
      for (const FeatureIndex i : model.wide_view(ex)) {
        wide_grads[i] += g;
      }
    }
    if (model.deep) {
      const auto out = trace.output();
      grad_final.resize(out.size());
      for (std::size_t k = 0; k < out.size(); ++k) {
        grads.output_weights[k] += g * out[k];
        grad_final[k] = g * model.output_weights[k];
      }
      accumulate_deep_backward(*model.deep, trace, grad_final, grads.deep);
    }
  }
  grads.wide.assign(wide_grads.begin(), wide_grads.end());
  grads.mean_loss = loss_sum * inv_batch;
  return grads;
}

/// Simultaneous update of both sides from one set of joint gradients.
inline void apply_gradients(WideDeepModel& model, const JointGradients& grads) {
  if (!std::isfinite(grads.bias)) {
    throw NumericError("non-finite bias gradient");
  }
  for (const double g : grads.output_weights) {
    if (!std::isfinite(g)) {
      throw NumericError("non-finite output-weight gradient");
    }
  }
  if (model.wide) {
    ftrl_apply(*model.wide, grads.wide);
  }
  if (model.deep) {
    adagrad_update(*model.deep, grads.deep);
    for (std::size_t k = 0; k < model.output_weights.size(); ++k) {
      adagrad_step(model.output_weights[k], model.output_accum[k], grads.output_weights[k], model.output_adagrad);
    }
  }
  adagrad_step(model.bias, model.bias_accum, grads.bias, model.output_adagrad);
}

/// One joint step; returns the batch's mean logloss before the update.
inline double train_step(WideDeepModel& model, std::span<const EncodedExample> batch) {
  const JointGradients grads = compute_gradients(model, batch);
  apply_gradients(model, grads);
  return grads.mean_loss;
}

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: no cap
  std::uint64_t seed = 1;
  std::size_t log_every = 0;  // steps per loss-curve point; 0: one point per epoch

  void validate() const {
    if (batch_size < 1) {
      throw ConfigError("batch_size must be >= 1");
    }
  }
};

struct LossPoint {
  std::size_t step = 0;
  double mean_logloss = 0.0;  // mean over the steps since the previous point
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::size_t steps = 0;
};

/// Row order of the first epoch, as `train` will visit it.
inline std::vector<std::size_t> first_epoch_order(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// The examples of the first mini-batch `train` will take from `dataset`.
inline std::vector<EncodedExample> first_batch(std::span<const EncodedExample> dataset, const TrainConfig& config) {
  const auto order = first_epoch_order(dataset.size(), config.seed);
  std::vector<EncodedExample> batch;
  for (std::size_t k = 0; k < std::min(config.batch_size, order.size()); ++k) {
    batch.push_back(dataset[order[k]]);
  }
  return batch;
}

/// Epoch loop over shuffled mini-batches; deterministic given `config.seed`.
inline TrainResult train(WideDeepModel& model, std::span<const EncodedExample> dataset, const TrainConfig& config,
                         const std::function<void(const LossPoint&)>& on_log = {}) {
  config.validate();
  TrainResult result;
  if (config.epochs == 0) {
    return result;
  }
  if (dataset.empty()) {
    throw Error("training dataset is empty");
  }
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::vector<EncodedExample> batch;
  batch.reserve(config.batch_size);
  double interval_loss = 0.0;
  std::size_t interval_steps = 0;
  auto emit = [&] {
    if (interval_steps == 0) {
      return;
    }
    LossPoint p{result.steps, interval_loss / static_cast<double>(interval_steps)};
    result.curve.push_back(p);
    if (on_log) {
      on_log(p);
    }
    interval_loss = 0.0;
    interval_steps = 0;
  };
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps != 0 && result.steps >= config.max_steps) {
        emit();
        return result;
      }
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(dataset[order[k]]);
      }
      interval_loss += train_step(model, batch);
      ++interval_steps;
      ++result.steps;
      if (config.log_every != 0 && interval_steps == config.log_every) {
        emit();
      }
    }
    if (config.log_every == 0) {
      emit();
    }
  }
  emit();
  return result;
}

}  // namespace widedeep
