#pragma once

// JSON experiment configuration. Every section is optional and falls back to
// the library defaults; unknown keys anywhere are rejected.

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "widedeep/common.hpp"
#include "widedeep/datagen.hpp"
#include "widedeep/evaluation.hpp"
#include "widedeep/feature_pipeline.hpp"
#include "widedeep/io.hpp"
#include "widedeep/joint_model.hpp"
#include "widedeep/serving.hpp"

namespace widedeep {

struct ServingConfig {
  std::vector<std::string> candidate_features{"item_id", "item_category", "item_age"};
  std::size_t candidates = 200;
  std::vector<BenchPoint> grid = default_bench_grid();
  double duration_s = 1.0;
};

/// Model settings for the desk-scale generated data. Wide gradients are batch
/// means, so a rare cross sees per-step gradients near 1/batch_size; a small
/// beta and a larger alpha keep FTRL's steps comparable to AdaGrad's.
inline ModelConfig desk_model_config() {
  ModelConfig m;
  m.ftrl.alpha = 2.0;
  m.ftrl.beta = 0.01;
  return m;
}

struct ExperimentConfig {
  GenConfig datagen;
  PipelineConfig pipeline = datagen_pipeline_config();
  ModelKind kind = ModelKind::joint;
  ModelConfig model = desk_model_config();
  TrainConfig train;
  double tolerance = kDefaultCompareTolerance;
  ServingConfig serving;
};

namespace detail {

using nlohmann::json;

inline void expect_object(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) {
    throw ConfigError(std::string(where) + " must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, std::string_view where) {
  if (const auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
  }
}

inline void read_gen(const json& j, GenConfig& c) {
  expect_object(j, "datagen",
                {"seed", "users", "items", "user_segments", "item_categories", "latent_dim", "latent_scale",
                 "base_logit", "exception_rules", "exception_strength", "exception_rate", "label_noise",
                 "blocked_pair_fraction", "examples", "train_fraction", "holdout_fraction"});
  read_field(j, "seed", c.seed, "datagen");
  read_field(j, "users", c.users, "datagen");
  read_field(j, "items", c.items, "datagen");
  read_field(j, "user_segments", c.user_segments, "datagen");
  read_field(j, "item_categories", c.item_categories, "datagen");
  read_field(j, "latent_dim", c.latent_dim, "datagen");
  read_field(j, "latent_scale", c.latent_scale, "datagen");
  read_field(j, "base_logit", c.base_logit, "datagen");
  read_field(j, "exception_rules", c.exception_rules, "datagen");
  read_field(j, "exception_strength", c.exception_strength, "datagen");
  read_field(j, "exception_rate", c.exception_rate, "datagen");
  read_field(j, "label_noise", c.label_noise, "datagen");
  read_field(j, "blocked_pair_fraction", c.blocked_pair_fraction, "datagen");
  read_field(j, "examples", c.examples, "datagen");
  read_field(j, "train_fraction", c.train_fraction, "datagen");
  read_field(j, "holdout_fraction", c.holdout_fraction, "datagen");
  c.validate();
}

inline PipelineConfig read_pipeline_config(const json& j) {
  expect_object(j, "pipeline", {"features", "crosses", "cross_templates"});
  PipelineConfig cfg;
  if (!j.contains("features") || !j["features"].is_array()) {
    throw ConfigError("pipeline.features must be an array");
  }
  for (const auto& f : j["features"]) {
    expect_object(f, "pipeline.features[]", {"name", "kind", "min_count", "n_q"});
    FeatureConfig fc;
    read_field(f, "name", fc.name, "pipeline.features[]");
    std::string kind = "categorical";
    read_field(f, "kind", kind, "pipeline.features[]");
    try {
      fc.kind = parse_feature_kind(kind);
    } catch (const SchemaError& e) {
      throw ConfigError(e.what());
    }
    read_field(f, "min_count", fc.min_count, "pipeline.features[]");
    read_field(f, "n_q", fc.n_q, "pipeline.features[]");
    cfg.features.push_back(std::move(fc));
  }
  if (const auto it = j.find("crosses"); it != j.end()) {
    for (const auto& c : *it) {
      if (!c.is_object()) {
        throw ConfigError("pipeline.crosses entries must map feature -> value");
      }
      CrossDef def;
      for (const auto& [feature, value] : c.items()) {
        if (!value.is_string()) {
          throw ConfigError("cross value for '" + feature + "' must be a string");
        }
        def.terms.push_back({feature, value.get<std::string>()});
      }
      cfg.crosses.push_back(std::move(def));
    }
  }
  if (const auto it = j.find("cross_templates"); it != j.end()) {
    for (const auto& t : *it) {
      expect_object(t, "pipeline.cross_templates[]", {"features", "min_count"});
      CrossTemplate tmpl;
      read_field(t, "features", tmpl.features, "pipeline.cross_templates[]");
      read_field(t, "min_count", tmpl.min_count, "pipeline.cross_templates[]");
      cfg.cross_templates.push_back(std::move(tmpl));
    }
  }
  return cfg;
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "joint") {
    return ModelKind::joint;
  }
  if (s == "wide_only") {
    return ModelKind::wide_only;
  }
  if (s == "deep_only") {
    return ModelKind::deep_only;
  }
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

inline void read_model(const json& j, ExperimentConfig& cfg) {
  expect_object(j, "model",
                {"kind", "embedding_dim", "hidden", "deep_features", "wide_inputs", "ftrl", "adagrad"});
  std::string kind(to_string(cfg.kind));
  read_field(j, "kind", kind, "model");
  cfg.kind = parse_model_kind(kind);
  ModelConfig& m = cfg.model;
  read_field(j, "embedding_dim", m.deep.embedding_dim, "model");
  read_field(j, "hidden", m.deep.hidden, "model");
  read_field(j, "deep_features", m.deep_features, "model");
  std::string inputs = m.wide_inputs == WideInputs::all ? "all" : "crosses_only";
  read_field(j, "wide_inputs", inputs, "model");
  if (inputs == "all") {
    m.wide_inputs = WideInputs::all;
  } else if (inputs == "crosses_only") {
    m.wide_inputs = WideInputs::crosses_only;
  } else {
    throw ConfigError("model.wide_inputs must be 'all' or 'crosses_only'");
  }
  if (const auto it = j.find("ftrl"); it != j.end()) {
    expect_object(*it, "model.ftrl", {"alpha", "beta", "lambda1", "lambda2"});
    read_field(*it, "alpha", m.ftrl.alpha, "model.ftrl");
    read_field(*it, "beta", m.ftrl.beta, "model.ftrl");
    read_field(*it, "lambda1", m.ftrl.lambda1, "model.ftrl");
    read_field(*it, "lambda2", m.ftrl.lambda2, "model.ftrl");
  }
  if (const auto it = j.find("adagrad"); it != j.end()) {
    expect_object(*it, "model.adagrad", {"learning_rate", "epsilon"});
    read_field(*it, "learning_rate", m.adagrad.learning_rate, "model.adagrad");
    read_field(*it, "epsilon", m.adagrad.epsilon, "model.adagrad");
  }
  m.ftrl.validate();
  m.adagrad.validate();
}

inline void read_train(const json& j, TrainConfig& t) {
  expect_object(j, "train", {"batch_size", "epochs", "max_steps", "seed", "log_every"});
  read_field(j, "batch_size", t.batch_size, "train");
  read_field(j, "epochs", t.epochs, "train");
  read_field(j, "max_steps", t.max_steps, "train");
  read_field(j, "seed", t.seed, "train");
  read_field(j, "log_every", t.log_every, "train");
  t.validate();
}

inline void read_serving(const json& j, ServingConfig& s) {
  expect_object(j, "serving", {"candidate_features", "candidates", "grid", "duration_s"});
  read_field(j, "candidate_features", s.candidate_features, "serving");
  read_field(j, "candidates", s.candidates, "serving");
  read_field(j, "duration_s", s.duration_s, "serving");
  if (const auto it = j.find("grid"); it != j.end()) {
    s.grid.clear();
    for (const auto& p : *it) {
      if (!p.is_array() || p.size() != 2) {
        throw ConfigError("serving.grid entries must be [batch_size, workers]");
      }
      s.grid.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
    }
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::expect_object(j, "config", {"datagen", "pipeline", "model", "train", "eval", "serving"});
  ExperimentConfig cfg;
  if (const auto it = j.find("datagen"); it != j.end()) {
    detail::read_gen(*it, cfg.datagen);
  }
  if (const auto it = j.find("pipeline"); it != j.end()) {
    cfg.pipeline = detail::read_pipeline_config(*it);
  }
  if (const auto it = j.find("model"); it != j.end()) {
    detail::read_model(*it, cfg);
  }
  if (const auto it = j.find("train"); it != j.end()) {
    detail::read_train(*it, cfg.train);
  }
  if (const auto it = j.find("eval"); it != j.end()) {
    detail::expect_object(*it, "eval", {"tolerance"});
    detail::read_field(*it, "tolerance", cfg.tolerance, "eval");
  }
  if (const auto it = j.find("serving"); it != j.end()) {
    detail::read_serving(*it, cfg.serving);
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

}  // namespace widedeep
