#pragma once

// Deep component: per-feature embedding lookup, concatenation with the dense
// features, then a stack of fully connected layers
//
//   a(l+1) = f(W(l) a(l) + b(l))
//
// trained with AdaGrad. The output unit (w_deep, bias) belongs to the joint model.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "widedeep/common.hpp"
#include "widedeep/feature_pipeline.hpp"

namespace widedeep {

struct AdagradParams {
  double learning_rate = 0.05;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0) || !(epsilon >= 0.0)) {
      throw ConfigError("AdaGrad requires learning_rate > 0 and epsilon >= 0");
    }
  }

  bool operator==(const AdagradParams&) const = default;
};

/// G += g^2; theta -= lr * g / (sqrt(G) + eps). A zero gradient is a no-op.
inline void adagrad_step(double& theta, double& accum, double g, const AdagradParams& p) {
  if (g == 0.0) {
    return;
  }
  accum += g * g;
  theta -= p.learning_rate * g / (std::sqrt(accum) + p.epsilon);
}

struct EmbeddingTable {
  std::string feature;
  FeatureIndex base_index = 0;  // first global coordinate of the feature's one-hot block
  std::uint32_t vocab_size = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // vocab_size x dim, row-major
  std::vector<double> accum;

  std::span<double> row(std::uint32_t r) { return {weights.data() + std::size_t{r} * dim, dim}; }
  std::span<const double> row(std::uint32_t r) const { return {weights.data() + std::size_t{r} * dim, dim}; }
  std::span<double> row_accum(std::uint32_t r) { return {accum.data() + std::size_t{r} * dim, dim}; }
  std::span<const double> row_accum(std::uint32_t r) const { return {accum.data() + std::size_t{r} * dim, dim}; }

  bool operator==(const EmbeddingTable&) const = default;
};

enum class Activation : std::uint8_t { relu = 0, identity = 1 };

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::relu;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;
  std::vector<double> weight_accum;
  std::vector<double> bias_accum;

  bool operator==(const DenseLayer&) const = default;
};

struct DeepState {
  std::vector<EmbeddingTable> tables;
  std::size_t dense_width = 0;
  std::vector<DenseLayer> layers;
  AdagradParams adagrad;

  std::size_t input_width() const {
    std::size_t w = dense_width;
    for (const auto& t : tables) {
      w += t.dim;
    }
    return w;
  }

  std::size_t output_width() const { return layers.empty() ? input_width() : layers.back().out; }

  void validate() const {
    for (const auto& t : tables) {
      if (t.weights.size() != std::size_t{t.vocab_size} * t.dim || t.accum.size() != t.weights.size()) {
        throw DimensionError("embedding table '" + t.feature + "' has inconsistent shape");
      }
    }
    std::size_t width = input_width();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      if (layer.in != width || layer.weights.size() != layer.in * layer.out || layer.bias.size() != layer.out ||
          layer.weight_accum.size() != layer.weights.size() || layer.bias_accum.size() != layer.out) {
        throw DimensionError("dense layer " + std::to_string(l) + " has inconsistent shape");
      }
      width = layer.out;
    }
  }

  bool operator==(const DeepState&) const = default;
};

/// Where an embedding table sits in the global sparse space.
struct EmbeddingSlot {
  std::string feature;
  FeatureIndex base_index = 0;
  std::uint32_t vocab_size = 0;
};

struct DeepArchitecture {
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> hidden{64, 32, 16};

  bool operator==(const DeepArchitecture&) const = default;
};

/// Uniform in [-1/sqrt(dim), 1/sqrt(dim)] for embeddings and
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)] for layer weights; biases start at 0.
inline void init_embedding_row(std::span<double> row, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(row.size()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : row) {
    x = dist(rng);
  }
}

inline void init_dense_layer(DenseLayer& layer, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(layer.in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  layer.weights.resize(layer.in * layer.out);
  for (double& x : layer.weights) {
    x = dist(rng);
  }
  layer.bias.assign(layer.out, 0.0);
  layer.weight_accum.assign(layer.weights.size(), 0.0);
  layer.bias_accum.assign(layer.out, 0.0);
}

inline DeepState make_deep_state(const std::vector<EmbeddingSlot>& slots, std::size_t dense_width,
                                 const DeepArchitecture& arch, const AdagradParams& adagrad,
                                 std::mt19937_64& rng) {
  adagrad.validate();
  if (arch.embedding_dim == 0) {
    throw ConfigError("embedding_dim must be >= 1");
  }
  DeepState state;
  state.dense_width = dense_width;
  state.adagrad = adagrad;
  for (const auto& slot : slots) {
    EmbeddingTable t;
    t.feature = slot.feature;
    t.base_index = slot.base_index;
    t.vocab_size = slot.vocab_size;
    t.dim = arch.embedding_dim;
    t.weights.resize(std::size_t{t.vocab_size} * t.dim);
    t.accum.assign(t.weights.size(), 0.0);
    for (std::uint32_t r = 0; r < t.vocab_size; ++r) {
      init_embedding_row(t.row(r), rng);
    }
    state.tables.push_back(std::move(t));
  }
  std::size_t width = state.input_width();
  for (const std::size_t h : arch.hidden) {
    if (h == 0) {
      throw ConfigError("hidden layer widths must be >= 1");
    }
    DenseLayer layer;
    layer.in = width;
    layer.out = h;
    layer.activation = Activation::relu;
    init_dense_layer(layer, rng);
    state.layers.push_back(std::move(layer));
    width = h;
  }
  return state;
}

struct ForwardTrace {
  std::vector<std::optional<std::uint32_t>> rows;    // active row per table
  std::vector<std::vector<double>> activations;      // a(0) .. a(L)
  std::vector<std::vector<double>> pre_activations;  // W a + b for layers 1 .. L

  std::span<const double> output() const { return activations.back(); }
};

/// Row of `table` selected by a sorted sparse index set, if any.
inline std::optional<std::uint32_t> active_row(const EmbeddingTable& table,
                                               std::span<const FeatureIndex> sorted_indices) {
  const auto it = std::lower_bound(sorted_indices.begin(), sorted_indices.end(), table.base_index);
  const std::uint64_t end = std::uint64_t{table.base_index} + table.vocab_size;
  if (it == sorted_indices.end() || *it >= end) {
    return std::nullopt;
  }
  if (std::next(it) != sorted_indices.end() && *std::next(it) < end) {
    throw DimensionError("feature '" + table.feature + "' has more than one active value");
  }
  return *it - table.base_index;
}

inline ForwardTrace deep_forward(const DeepState& state, const EncodedExample& example) {
  if (example.dense_values.size() != state.dense_width) {
    throw DimensionError("example has " + std::to_string(example.dense_values.size()) +
                         " dense values, deep component expects " + std::to_string(state.dense_width));
  }
  ForwardTrace trace;
  trace.rows.reserve(state.tables.size());
  trace.activations.reserve(state.layers.size() + 1);
  trace.pre_activations.reserve(state.layers.size());

  std::vector<double> input;
  input.reserve(state.input_width());
  for (const auto& table : state.tables) {
    const auto r = active_row(table, example.sparse_indices);
    trace.rows.push_back(r);
    if (r) {
      const auto row = table.row(*r);
      input.insert(input.end(), row.begin(), row.end());
    } else {
      input.insert(input.end(), table.dim, 0.0);  // out-of-vocabulary
    }
  }
  input.insert(input.end(), example.dense_values.begin(), example.dense_values.end());
  trace.activations.push_back(std::move(input));

  for (const auto& layer : state.layers) {
    const auto& a = trace.activations.back();
    std::vector<double> z(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = layer.weights.data() + o * layer.in;
      double sum = layer.bias[o];
      for (std::size_t i = 0; i < layer.in; ++i) {
        sum += w[i] * a[i];
      }
      z[o] = sum;
    }
    std::vector<double> next = z;
    if (layer.activation == Activation::relu) {
      for (double& x : next) {
        x = x < 0.0 ? 0.0 : x;  // NaN passes through so the loss check sees it
      }
    }
    trace.pre_activations.push_back(std::move(z));
    trace.activations.push_back(std::move(next));
  }
  return trace;
}

/// Dense-layer gradients for every parameter, embedding gradients only for
/// rows that were looked up.
struct DeepGradients {
  std::vector<std::map<std::uint32_t, std::vector<double>>> embedding_rows;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static DeepGradients zeros_like(const DeepState& state) {
    DeepGradients g;
    g.embedding_rows.resize(state.tables.size());
    for (const auto& layer : state.layers) {
      g.weights.emplace_back(layer.weights.size(), 0.0);
      g.biases.emplace_back(layer.out, 0.0);
    }
    return g;
  }

  void scale(double s) {
    for (auto& table : embedding_rows) {
      for (auto& [r, g] : table) {
        for (double& x : g) {
          x *= s;
        }
      }
    }
    for (auto& w : weights) {
      for (double& x : w) {
        x *= s;
      }
    }
    for (auto& b : biases) {
      for (double& x : b) {
        x *= s;
      }
    }
  }
};

/// Adds d(loss)/d(params) for one example into `grads`, given
/// grad_final = d(loss)/d(a(L)). ReLU'(0) is taken as 0.
inline void accumulate_deep_backward(const DeepState& state, const ForwardTrace& trace,
                                     std::span<const double> grad_final, DeepGradients& grads) {
  if (trace.activations.size() != state.layers.size() + 1 || trace.rows.size() != state.tables.size() ||
      trace.activations.front().size() != state.input_width()) {
    throw DimensionError("forward trace does not match deep state");
  }
  if (grad_final.size() != state.output_width()) {
    throw DimensionError("grad_final has width " + std::to_string(grad_final.size()) + ", expected " +
                         std::to_string(state.output_width()));
  }
  if (grads.weights.size() != state.layers.size() || grads.embedding_rows.size() != state.tables.size()) {
    throw DimensionError("gradient buffer does not match deep state");
  }
  std::vector<double> delta(grad_final.begin(), grad_final.end());
  for (std::size_t l = state.layers.size(); l-- > 0;) {
    const auto& layer = state.layers[l];
    const auto& z = trace.pre_activations[l];
    const auto& a = trace.activations[l];
    if (layer.activation == Activation::relu) {
      for (std::size_t o = 0; o < layer.out; ++o) {
        if (!(z[o] > 0.0)) {
          delta[o] = 0.0;
        }
      }
    }
    auto& gw = grads.weights[l];
    auto& gb = grads.biases[l];
    std::vector<double> prev(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) {
        continue;
      }
      gb[o] += d;
      double* gwo = gw.data() + o * layer.in;
      const double* w = layer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) {
        gwo[i] += d * a[i];
        prev[i] += w[i] * d;
      }
    }
    delta = std::move(prev);
  }
  std::size_t offset = 0;
  for (std::size_t t = 0; t < state.tables.size(); ++t) {
    const auto& table = state.tables[t];
    if (const auto r = trace.rows[t]) {
      auto& g = grads.embedding_rows[t][*r];
      g.resize(table.dim, 0.0);
      for (std::size_t k = 0; k < table.dim; ++k) {
        g[k] += delta[offset + k];
      }
    }
    offset += table.dim;
  }
}

inline DeepGradients deep_backward(const DeepState& state, const ForwardTrace& trace,
                                   std::span<const double> grad_final) {
  DeepGradients grads = DeepGradients::zeros_like(state);
  accumulate_deep_backward(state, trace, grad_final, grads);
  return grads;
}

inline void adagrad_update(DeepState& state, const DeepGradients& grads) {
  if (grads.weights.size() != state.layers.size() || grads.biases.size() != state.layers.size() ||
      grads.embedding_rows.size() != state.tables.size()) {
    throw DimensionError("gradients do not match deep state");
  }
  auto check = [](std::span<const double> v, const char* what) {
    for (const double x : v) {
      if (!std::isfinite(x)) {
        throw NumericError(std::string("non-finite gradient in ") + what);
      }
    }
  };
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    if (grads.weights[l].size() != state.layers[l].weights.size() ||
        grads.biases[l].size() != state.layers[l].out) {
      throw DimensionError("layer " + std::to_string(l) + " gradient shape mismatch");
    }
    check(grads.weights[l], "dense weights");
    check(grads.biases[l], "dense bias");
  }
  for (std::size_t t = 0; t < state.tables.size(); ++t) {
    for (const auto& [r, g] : grads.embedding_rows[t]) {
      if (r >= state.tables[t].vocab_size || g.size() != state.tables[t].dim) {
        throw DimensionError("embedding gradient outside table '" + state.tables[t].feature + "'");
      }
      check(g, "embedding");
    }
  }

  const AdagradParams& p = state.adagrad;
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    auto& layer = state.layers[l];
    for (std::size_t k = 0; k < layer.weights.size(); ++k) {
      adagrad_step(layer.weights[k], layer.weight_accum[k], grads.weights[l][k], p);
    }
    for (std::size_t k = 0; k < layer.out; ++k) {
      adagrad_step(layer.bias[k], layer.bias_accum[k], grads.biases[l][k], p);
    }
  }
  for (std::size_t t = 0; t < state.tables.size(); ++t) {
    auto& table = state.tables[t];
    for (const auto& [r, g] : grads.embedding_rows[t]) {
      auto row = table.row(r);
      auto acc = table.row_accum(r);
      for (std::size_t k = 0; k < table.dim; ++k) {
        adagrad_step(row[k], acc[k], g[k], p);
      }
    }
  }
}

}  // namespace widedeep
