#include <catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include <json.hpp>

#include "widedeep/config.hpp"
#include "widedeep/datagen.hpp"
#include "widedeep/evaluation.hpp"
#include "widedeep/joint_model.hpp"

using namespace widedeep;
namespace fs = std::filesystem;

namespace {

struct Trained {
  FeaturePipeline pipeline;
  WideDeepModel model;
  double holdout_auc = 0.0;
};

Trained train_kind(const GeneratedData& data, ModelKind kind, std::uint64_t seed) {
  auto pipeline = fit_pipeline(datagen_pipeline_config(), data.train);
  auto model = make_model(pipeline, desk_model_config(), kind, seed);
  TrainConfig tc;
  tc.seed = seed;
  train(model, pipeline.encode_all(data.train), tc);
  const double auc = evaluate(model, pipeline.encode_all(data.holdout)).auc;
  return {std::move(pipeline), std::move(model), auc};
}

GenConfig small_config(std::uint64_t seed) {
  GenConfig g;
  g.seed = seed;
  g.users = 200;
  g.items = 80;
  g.exception_rules = 100;
  g.examples = 4000;
  return g;
}

}  // namespace

TEST_CASE("same seed gives byte-identical datasets") {
  const auto a = generate(small_config(3));
  const auto b = generate(small_config(3));
  const auto schema = datagen_schema();
  CHECK(format_raw_records(a.train, schema) == format_raw_records(b.train, schema));
  CHECK(format_raw_records(a.holdout, schema) == format_raw_records(b.holdout, schema));
  CHECK(manifest_json(small_config(3), a) == manifest_json(small_config(3), b));
  const auto c = generate(small_config(4));
  CHECK(format_raw_records(a.train, schema) != format_raw_records(c.train, schema));
}

TEST_CASE("split sizes follow the configured fractions") {
  const auto g = small_config(1);
  const auto d = generate(g);
  CHECK(d.train.size() == 3200);
  CHECK(d.holdout.size() == 800);
  CHECK(d.rules.size() == g.exception_rules);
}

TEST_CASE("training never shows a blocked co-occurrence and the holdout does") {
  const auto d = generate(small_config(2));
  auto pair_of = [](const RawExample& ex) {
    return std::pair(std::get<std::string>(ex.features.at("user_segment")),
                     std::get<std::string>(ex.features.at("item_category")));
  };
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& ex : d.train) {
    seen.insert(pair_of(ex));
  }
  std::size_t unseen = 0;
  for (const auto& ex : d.holdout) {
    unseen += seen.contains(pair_of(ex)) ? 0 : 1;
  }
  CHECK(unseen > 0);
  CHECK(unseen < d.holdout.size());
}

TEST_CASE("planted rules contradict the low-rank term") {
  const auto g = small_config(5);
  const PlantedWorld world(g);
  const auto rules = world.planted_rules();
  REQUIRE(rules.size() == g.exception_rules);
  std::set<std::pair<std::string, std::string>> distinct;
  std::map<std::string, int> per_user;
  for (std::size_t k = 0; k < rules.size(); ++k) {
    const auto [u, i] = world.rule_pairs()[k];
    CHECK(std::fabs(rules[k].offset) == g.exception_strength);
    CHECK((rules[k].offset > 0.0) == (world.latent_term(u, i) <= 0.0));
    CHECK_FALSE(world.is_blocked(u, i));
    distinct.insert({rules[k].user, rules[k].item});
    per_user[rules[k].user]++;
  }
  CHECK(distinct.size() == rules.size());
  // Balanced placement: no user carries more than one rule when rules <= users.
  for (const auto& [user, n] : per_user) {
    CHECK(n == 1);
  }
}

TEST_CASE("label base rate matches its analytic expectation") {
  for (const auto& name : {"default", "exceptions", "latent"}) {
    GenConfig g = preset_config(name, 7);
    g.examples = 25000;
    const auto d = generate(g);
    REQUIRE(d.train.size() >= 10000);
    double positives = 0.0;
    for (const auto& ex : d.train) {
      positives += ex.label;
    }
    const double observed = positives / static_cast<double>(d.train.size());
    const double expected = PlantedWorld(g).expected_train_positive_rate();
    INFO(name << " observed " << observed << " expected " << expected);
    CHECK(std::fabs(observed - expected) <= 0.05 * expected);
  }
}

TEST_CASE("label noise flips toward one half") {
  GenConfig g = small_config(9);
  g.label_noise = 0.3;
  const PlantedWorld world(g);
  const double p = sigmoid(world.logit(0, 0));
  CHECK(world.positive_probability(0, 0) == Catch::Approx(0.7 * p + 0.3 * (1 - p)));
}

TEST_CASE("invalid generator configs are rejected") {
  auto bad = [](auto mutate) {
    GenConfig g;
    mutate(g);
    return g;
  };
  CHECK_THROWS_AS(bad([](GenConfig& g) { g.users = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](GenConfig& g) { g.label_noise = 0.5; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](GenConfig& g) { g.train_fraction = 0.7; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](GenConfig& g) { g.exception_rules = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](GenConfig& g) { g.blocked_pair_fraction = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(generate(bad([](GenConfig& g) { g.items = 0; })), ConfigError);
  CHECK_THROWS_AS(preset_config("nope"), ConfigError);
  CHECK_NOTHROW(GenConfig{}.validate());
}

TEST_CASE("datasets are written with a manifest of planted rules") {
  const fs::path dir = fs::temp_directory_path() / "widedeep_datagen_test";
  fs::remove_all(dir);
  const auto g = small_config(6);
  const auto d = generate(g);
  CHECK_THROWS_AS(write_dataset(dir, g, d), Error);
  fs::create_directories(dir);
  write_dataset(dir, g, d);
  const auto schema = datagen_schema();
  CHECK(read_file(dir / "train.txt") == format_raw_records(d.train, schema));
  const auto reread = read_raw_file(dir / "holdout.txt", schema);
  CHECK(reread.size() == d.holdout.size());
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(manifest["generator"]["seed"] == 6);
  CHECK(manifest["train_examples"] == d.train.size());
  CHECK(manifest["planted_rules"].size() == g.exception_rules);
  CHECK(manifest["planted_rules"][0]["user_id"] == d.rules[0].user);
  fs::remove_all(dir);
}

TEST_CASE("a one-dimensional noiseless latent world is learnable by the deep model") {
  GenConfig g = latent_only_config(1);
  g.latent_dim = 1;
  g.latent_scale = 16.0;
  const auto d = generate(g);
  const auto deep = train_kind(d, ModelKind::deep_only, 1);
  INFO("deep auc " << deep.holdout_auc);
  CHECK(deep.holdout_auc > 0.95);
}

TEST_CASE("exception-only data is memorized by crosses but not by embeddings") {
  const auto d = generate(exceptions_only_config(1));
  const auto wide = train_kind(d, ModelKind::wide_only, 1);
  const auto deep = train_kind(d, ModelKind::deep_only, 1);
  INFO("wide " << wide.holdout_auc << " deep " << deep.holdout_auc);
  CHECK(wide.holdout_auc > 0.95);
  CHECK(deep.holdout_auc < wide.holdout_auc - 0.05);
}

TEST_CASE("the joint model recovers planted rule signs on their crosses") {
  const auto d = generate(preset_config("default", 2));
  const auto joint = train_kind(d, ModelKind::joint, 2);
  std::map<std::pair<std::string, std::string>, FeatureIndex> index;
  const auto& crosses = joint.pipeline.crosses().crosses();
  for (std::size_t k = 0; k < crosses.size(); ++k) {
    std::string user;
    std::string item;
    for (const auto& t : crosses[k].terms) {
      (t.feature == "user_id" ? user : item) = t.value;
    }
    index[{user, item}] = joint.pipeline.cross_offset() + static_cast<FeatureIndex>(k);
  }
  std::size_t present = 0;
  std::size_t agree = 0;
  for (const auto& rule : d.rules) {
    const auto it = index.find({rule.user, rule.item});
    if (it == index.end()) {
      continue;  // rule pair too rare in this training sample to earn a cross
    }
    ++present;
    agree += (joint.model.wide->weight(it->second) > 0.0) == (rule.offset > 0.0) ? 1 : 0;
  }
  const double rate = static_cast<double>(agree) / static_cast<double>(present);
  INFO("rules with crosses " << present << ", sign agreement " << rate);
  CHECK(present >= d.rules.size() / 2);
  CHECK(rate >= 0.9);
}
