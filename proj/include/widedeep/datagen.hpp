#pragma once

// Synthetic impression generator with two planted sources of signal:
//
//  * a low-rank preference term over (user segment, item category), which
//    embeddings can learn and carry over to segment/category pairs that never
//    occur in training;
//  * sparse exception rules on specific (user, item) pairs whose offset
//    contradicts the low-rank term, which only a memorizing cross feature
//    captures.
//
//   logit(u, i) = base + scale * <s(seg(u)), c(cat(i))> / sqrt(r) + offset(u, i)
//   label ~ Bernoulli(sigmoid(logit)), then flipped with probability `label_noise`.
//
// A fraction of (segment, category) pairs is blocked from the training split,
// so the holdout mixes seen and unseen co-occurrences. The data is synthetic
// and makes no claim about any real app store.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "widedeep/common.hpp"
#include "widedeep/feature_pipeline.hpp"
#include "widedeep/io.hpp"
#include "widedeep/raw_format.hpp"

namespace widedeep {

struct GenConfig {
  std::uint64_t seed = 1;
  std::size_t users = 2000;
  std::size_t items = 500;
  std::size_t user_segments = 20;
  std::size_t item_categories = 20;
  std::size_t latent_dim = 2;  // 0 disables the low-rank term
  double latent_scale = 3.0;
  double base_logit = -1.0;
  std::size_t exception_rules = 3000;
  double exception_strength = 5.0;
  double exception_rate = 0.3;  // share of impressions drawn from rule pairs
  double label_noise = 0.0;
  double blocked_pair_fraction = 0.2;
  std::size_t examples = 62500;
  double train_fraction = 0.8;
  double holdout_fraction = 0.2;

  void validate() const {
    if (users < 1 || items < 1 || user_segments < 1 || item_categories < 1 || examples < 1) {
      throw ConfigError("datagen counts must be >= 1");
    }
    if (!(label_noise >= 0.0 && label_noise < 0.5)) {
      throw ConfigError("label_noise must lie in [0, 0.5)");
    }
    if (!(train_fraction >= 0.0 && holdout_fraction >= 0.0) ||
        std::abs(train_fraction + holdout_fraction - 1.0) > 1e-9) {
      throw ConfigError("train_fraction + holdout_fraction must equal 1");
    }
    if (!(exception_rate >= 0.0 && exception_rate <= 1.0) || !(blocked_pair_fraction >= 0.0) ||
        !(blocked_pair_fraction < 1.0)) {
      throw ConfigError("exception_rate must lie in [0, 1] and blocked_pair_fraction in [0, 1)");
    }
    if (exception_rate > 0.0 && exception_rules == 0) {
      throw ConfigError("exception_rate > 0 needs at least one exception rule");
    }
    if (exception_rules > users * items) {
      throw ConfigError("more exception rules than user/item pairs");
    }
  }

  std::size_t train_count() const {
    return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(examples)));
  }
};

struct PlantedRule {
  std::string user;
  std::string item;
  std::string user_segment;
  std::string item_category;
  double offset = 0.0;
};

/// The generative model behind a dataset: per-entity attributes and rules.
class PlantedWorld {
 public:
  explicit PlantedWorld(const GenConfig& config) : config_(config), rng_(config.seed) {
    config.validate();
    std::uniform_int_distribution<std::size_t> seg(0, config.user_segments - 1);
    std::uniform_int_distribution<std::size_t> cat(0, config.item_categories - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::exponential_distribution<double> age(1.0 / 30.0);
    for (std::size_t u = 0; u < config.users; ++u) {
      user_segment_.push_back(seg(rng_));
      user_activity_.push_back(unit(rng_));
    }
    for (std::size_t i = 0; i < config.items; ++i) {
      item_category_.push_back(cat(rng_));
      item_age_.push_back(age(rng_));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    auto vectors = [&](std::size_t count) {
      std::vector<std::vector<double>> v(count, std::vector<double>(config.latent_dim));
      for (auto& row : v) {
        for (double& x : row) {
          x = normal(rng_);
        }
      }
      return v;
    };
    segment_vec_ = vectors(config.user_segments);
    category_vec_ = vectors(config.item_categories);

    std::vector<std::size_t> pairs(config.user_segments * config.item_categories);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      pairs[k] = k;
    }
    std::shuffle(pairs.begin(), pairs.end(), rng_);
    const auto blocked = static_cast<std::size_t>(
        std::floor(config.blocked_pair_fraction * static_cast<double>(pairs.size())));
    blocked_.assign(pairs.size(), false);
    for (std::size_t k = 0; k < blocked; ++k) {
      blocked_[pairs[k]] = true;
    }

    // Rules cycle through shuffled users and items so every user and item
    // carries about the same number of rules: a rule is then visible only in
    // the (user, item) conjunction, never in either marginal.
    std::vector<std::size_t> users(config.users);
    std::vector<std::size_t> items(config.items);
    for (std::size_t u = 0; u < users.size(); ++u) {
      users[u] = u;
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      items[i] = i;
    }
    std::size_t next_item = items.size();
    std::size_t attempts = 0;
    for (std::size_t k = 0; rules_.size() < config.exception_rules; ++k) {
      if (k % users.size() == 0) {
        std::shuffle(users.begin(), users.end(), rng_);
      }
      const std::size_t u = users[k % users.size()];
      for (;;) {
        if (++attempts > 1000 * (config.exception_rules + 1)) {
          throw ConfigError("cannot place exception rules outside blocked pairs");
        }
        if (next_item == items.size()) {
          std::shuffle(items.begin(), items.end(), rng_);
          next_item = 0;
        }
        const std::size_t i = items[next_item++];
        if (is_blocked(u, i) || offsets_.count({u, i}) != 0) {
          continue;
        }
        const double latent = latent_term(u, i);
        const double offset = latent > 0.0 ? -config.exception_strength : config.exception_strength;
        offsets_.emplace(std::make_pair(u, i), offset);
        rules_.emplace_back(u, i);
        break;
      }
    }
  }

  const GenConfig& config() const noexcept { return config_; }

  double latent_term(std::size_t u, std::size_t i) const {
    if (config_.latent_dim == 0) {
      return 0.0;
    }
    const auto& a = segment_vec_[user_segment_[u]];
    const auto& b = category_vec_[item_category_[i]];
    double dot = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      dot += a[k] * b[k];
    }
    return config_.latent_scale * dot / std::sqrt(static_cast<double>(config_.latent_dim));
  }

  double offset(std::size_t u, std::size_t i) const {
    const auto it = offsets_.find({u, i});
    return it == offsets_.end() ? 0.0 : it->second;
  }

  double logit(std::size_t u, std::size_t i) const { return config_.base_logit + latent_term(u, i) + offset(u, i); }

  /// Probability of a positive label after noise.
  double positive_probability(std::size_t u, std::size_t i) const {
    const double p = sigmoid(logit(u, i));
    return p * (1.0 - config_.label_noise) + (1.0 - p) * config_.label_noise;
  }

  bool is_blocked(std::size_t u, std::size_t i) const {
    return blocked_[user_segment_[u] * config_.item_categories + item_category_[i]];
  }

  const std::vector<std::pair<std::size_t, std::size_t>>& rule_pairs() const noexcept { return rules_; }

  RawExample example(std::size_t u, std::size_t i, int label) const {
    RawExample ex;
    ex.label = label;
    ex.features.emplace("user_id", "u" + std::to_string(u));
    ex.features.emplace("user_segment", "s" + std::to_string(user_segment_[u]));
    ex.features.emplace("item_id", "i" + std::to_string(i));
    ex.features.emplace("item_category", "c" + std::to_string(item_category_[i]));
    ex.features.emplace("user_activity", user_activity_[u]);
    ex.features.emplace("item_age", item_age_[i]);
    return ex;
  }

  std::vector<PlantedRule> planted_rules() const {
    std::vector<PlantedRule> out;
    for (const auto& [u, i] : rules_) {
      out.push_back({"u" + std::to_string(u), "i" + std::to_string(i), "s" + std::to_string(user_segment_[u]),
                     "c" + std::to_string(item_category_[i]), offset(u, i)});
    }
    return out;
  }

  /// Draws one impression; the training split never shows blocked pairs.
  std::pair<std::size_t, std::size_t> draw_pair(std::mt19937_64& rng, bool allow_blocked) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_user(0, config_.users - 1);
    std::uniform_int_distribution<std::size_t> pick_item(0, config_.items - 1);
    if (!rules_.empty() && unit(rng) < config_.exception_rate) {
      std::uniform_int_distribution<std::size_t> pick_rule(0, rules_.size() - 1);
      return rules_[pick_rule(rng)];
    }
    for (;;) {
      const std::size_t u = pick_user(rng);
      const std::size_t i = pick_item(rng);
      if (allow_blocked || !is_blocked(u, i)) {
        return {u, i};
      }
    }
  }

  /// Analytic positive rate of the training distribution.
  double expected_train_positive_rate() const {
    double rule_mean = 0.0;
    for (const auto& [u, i] : rules_) {
      rule_mean += positive_probability(u, i);
    }
    if (!rules_.empty()) {
      rule_mean /= static_cast<double>(rules_.size());
    }
    double open_sum = 0.0;
    std::size_t open = 0;
    for (std::size_t u = 0; u < config_.users; ++u) {
      for (std::size_t i = 0; i < config_.items; ++i) {
        if (!is_blocked(u, i)) {
          open_sum += positive_probability(u, i);
          ++open;
        }
      }
    }
    const double rate = rules_.empty() ? 0.0 : config_.exception_rate;
    return rate * rule_mean + (1.0 - rate) * open_sum / static_cast<double>(open);
  }

 private:
  GenConfig config_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> user_segment_;
  std::vector<double> user_activity_;
  std::vector<std::size_t> item_category_;
  std::vector<double> item_age_;
  std::vector<std::vector<double>> segment_vec_;
  std::vector<std::vector<double>> category_vec_;
  std::vector<bool> blocked_;
  std::map<std::pair<std::size_t, std::size_t>, double> offsets_;
  std::vector<std::pair<std::size_t, std::size_t>> rules_;
};

struct GeneratedData {
  std::vector<RawExample> train;
  std::vector<RawExample> holdout;
  std::vector<PlantedRule> rules;
};

inline FeatureSchema datagen_schema() {
  return FeatureSchema({{"user_id", FeatureKind::categorical},
                        {"user_segment", FeatureKind::categorical},
                        {"item_id", FeatureKind::categorical},
                        {"item_category", FeatureKind::categorical},
                        {"user_activity", FeatureKind::continuous},
                        {"item_age", FeatureKind::continuous}});
}

/// Pipeline for generated data: every base feature plus user x item crosses
/// for pairs seen at least `pair_min_count` times in training.
inline PipelineConfig datagen_pipeline_config(std::size_t pair_min_count = 2, std::size_t n_q = 10) {
  PipelineConfig cfg;
  const FeatureSchema schema = datagen_schema();
  for (const auto& def : schema.features()) {
    cfg.features.push_back({def.name, def.kind, 1, n_q});
  }
  cfg.cross_templates.push_back({{"user_id", "item_id"}, pair_min_count});
  return cfg;
}

/// Exception rules only: a flat, very negative background with strongly
/// positive rule pairs.
inline GenConfig exceptions_only_config(std::uint64_t seed = 1) {
  GenConfig c;
  c.seed = seed;
  c.latent_dim = 0;
  c.base_logit = -5.0;
  c.exception_strength = 9.0;
  c.exception_rate = 0.4;
  return c;
}

/// Low-rank structure only, no exception rules.
inline GenConfig latent_only_config(std::uint64_t seed = 1) {
  GenConfig c;
  c.seed = seed;
  c.exception_rules = 0;
  c.exception_rate = 0.0;
  return c;
}

inline GenConfig preset_config(std::string_view name, std::uint64_t seed = 1) {
  if (name == "default") {
    GenConfig c;
    c.seed = seed;
    return c;
  }
  if (name == "exceptions") {
    return exceptions_only_config(seed);
  }
  if (name == "latent") {
    return latent_only_config(seed);
  }
  throw ConfigError("unknown datagen preset '" + std::string(name) + "'");
}

inline GeneratedData generate(const GenConfig& config) {
  const PlantedWorld world(config);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GeneratedData data;
  const std::size_t n_train = config.train_count();
  for (std::size_t k = 0; k < config.examples; ++k) {
    const bool training = k < n_train;
    const auto [u, i] = world.draw_pair(rng, !training);
    int label = unit(rng) < sigmoid(world.logit(u, i)) ? 1 : 0;
    if (unit(rng) < config.label_noise) {
      label = 1 - label;
    }
    (training ? data.train : data.holdout).push_back(world.example(u, i, label));
  }
  data.rules = world.planted_rules();
  return data;
}

inline void to_json(nlohmann::json& j, const GenConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"users", c.users},
                     {"items", c.items},
                     {"user_segments", c.user_segments},
                     {"item_categories", c.item_categories},
                     {"latent_dim", c.latent_dim},
                     {"latent_scale", c.latent_scale},
                     {"base_logit", c.base_logit},
                     {"exception_rules", c.exception_rules},
                     {"exception_strength", c.exception_strength},
                     {"exception_rate", c.exception_rate},
                     {"label_noise", c.label_noise},
                     {"blocked_pair_fraction", c.blocked_pair_fraction},
                     {"examples", c.examples},
                     {"train_fraction", c.train_fraction},
                     {"holdout_fraction", c.holdout_fraction}};
}

inline std::string manifest_json(const GenConfig& config, const GeneratedData& data) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : data.rules) {
    rules.push_back({{"user_id", r.user},
                     {"item_id", r.item},
                     {"user_segment", r.user_segment},
                     {"item_category", r.item_category},
                     {"offset", r.offset}});
  }
  nlohmann::json j{{"generator", config},
                   {"train_examples", data.train.size()},
                   {"holdout_examples", data.holdout.size()},
                   {"planted_rules", rules}};
  return j.dump(2) + "\n";
}

/// Writes train.txt, holdout.txt and manifest.json into an existing
/// directory. Each file is written atomically.
inline void write_dataset(const std::filesystem::path& dir, const GenConfig& config, const GeneratedData& data) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error("output directory " + dir.string() + " does not exist");
  }
  const FeatureSchema schema = datagen_schema();
  const std::string train = format_raw_records(data.train, schema);
  const std::string holdout = format_raw_records(data.holdout, schema);
  const std::string manifest = manifest_json(config, data);
  write_file_atomic(dir / "train.txt", train);
  write_file_atomic(dir / "holdout.txt", holdout);
  write_file_atomic(dir / "manifest.json", manifest);
}

}  // namespace widedeep
