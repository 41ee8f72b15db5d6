#include <catch_amalgamated.hpp>

#include <algorithm>

#include "support/toy.hpp"
#include "widedeep/checkpoint.hpp"
#include "widedeep/evaluation.hpp"

using namespace widedeep;

namespace {

Checkpoint trained_on(const std::vector<RawExample>& corpus, const PipelineConfig& pcfg = testing::toy_pipeline_config()) {
  auto pipeline = fit_pipeline(pcfg, corpus);
  ModelConfig mc;
  mc.wide_inputs = WideInputs::all;
  mc.deep.embedding_dim = 3;
  mc.deep.hidden = {5, 4};
  auto model = make_model(pipeline, mc, ModelKind::joint, 21);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 3;
  train(model, pipeline.encode_all(corpus), tc);
  return {kCheckpointVersion, std::move(pipeline), std::move(model), {}};
}

std::vector<RawExample> with_user(std::vector<RawExample> corpus, const std::string& user, std::size_t copies) {
  for (std::size_t k = 0; k < copies; ++k) {
    corpus.push_back(testing::toy_example(user, "i" + std::to_string(k % 4), 30.0, static_cast<int>(k % 2)));
  }
  return corpus;
}

std::span<const double> embedding_of(const WideDeepModel& m, const FeaturePipeline& p, const std::string& feature,
                                     const std::string& value) {
  const auto slot = p.categorical_slot(feature);
  const auto id = p.vocabularies()[*slot].lookup(value);
  REQUIRE(id);
  for (const auto& t : m.deep->tables) {
    if (t.feature == feature) {
      return t.row(*id);
    }
  }
  FAIL("no table for " << feature);
  return {};
}

}  // namespace

TEST_CASE("warm start onto the same vocabulary reproduces predictions exactly") {
  const auto corpus = testing::toy_corpus(400, 6, 4, 3);
  const auto prev = trained_on(corpus);
  WarmStartReport rep;
  const auto next = warm_start(prev, prev.pipeline, {}, &rep);
  CHECK(rep.rows_fresh == 0);
  CHECK(rep.dense_layers_copied);
  CHECK(rep.warnings.empty());
  CHECK(rep.wide_copied == prev.model.wide->coordinates().size());
  for (const auto& ex : prev.pipeline.encode_all(testing::toy_corpus(300, 8, 5, 4))) {
    CHECK(predict(next, ex) == predict(prev.model, ex));
  }
  CHECK(serialize_checkpoint({kCheckpointVersion, prev.pipeline, next, {}}) ==
        serialize_checkpoint({kCheckpointVersion, prev.pipeline, prev.model, {}}));
}

TEST_CASE("one new categorical value gets exactly one fresh row") {
  const auto corpus = testing::toy_corpus(400, 6, 4, 3);
  const auto prev = trained_on(corpus);
  const auto next_pipeline = fit_pipeline(testing::toy_pipeline_config(), with_user(corpus, "u_new", 3));
  WarmStartReport rep;
  const auto next = warm_start(prev, next_pipeline, {}, &rep);
  CHECK(rep.rows_fresh == 1);
  const std::size_t old_rows = prev.pipeline.vocabularies()[0].size() + prev.pipeline.vocabularies()[1].size();
  CHECK(rep.rows_copied == old_rows);
  // Every old wide coordinate still exists under the new layout.
  CHECK(rep.wide_copied == prev.model.wide->coordinates().size());
  for (const auto& [i, c] : prev.model.wide->coordinates()) {
    const auto j = next_pipeline.coordinate_index().at(prev.pipeline.coordinate_key(i));
    CHECK(next.wide->weight(j) == c.w);
  }
}

TEST_CASE("embeddings follow their value when IDs are permuted") {
  // No continuous feature, so refitting cannot move quantile boundaries.
  auto pcfg = testing::toy_pipeline_config();
  pcfg.features.pop_back();
  auto corpus = testing::toy_corpus(400, 6, 4, 3);
  const auto prev = trained_on(corpus, pcfg);
  // Make the previously rarest user the most frequent so IDs reshuffle.
  std::map<std::string, int> counts;
  for (const auto& ex : corpus) {
    counts[std::get<std::string>(ex.features.at("user"))]++;
  }
  const auto rarest = std::min_element(counts.begin(), counts.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; })->first;
  const auto next_pipeline = fit_pipeline(pcfg, with_user(corpus, rarest, 200));
  REQUIRE(next_pipeline.vocabularies()[0].value(0) == rarest);
  REQUIRE(prev.pipeline.vocabularies()[0].lookup(rarest) != std::optional<std::uint32_t>(0));

  WarmStartReport rep;
  const auto next = warm_start(prev, next_pipeline, {}, &rep);
  CHECK(rep.rows_fresh == 0);
  for (const auto& [user, n] : counts) {
    const auto a = embedding_of(prev.model, prev.pipeline, "user", user);
    const auto b = embedding_of(next, next_pipeline, "user", user);
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  // Same raw input, same prediction, even though the encoded indices moved.
  for (const auto& raw : corpus) {
    CHECK(predict(next, next_pipeline.encode(raw)) == predict(prev.model, prev.pipeline.encode(raw)));
  }
}

TEST_CASE("dropping accumulators keeps weights but resets optimizer state") {
  const auto corpus = testing::toy_corpus(400, 6, 4, 3);
  const auto prev = trained_on(corpus);
  const auto next = warm_start(prev, prev.pipeline, {.copy_accumulators = false, .seed = 1});
  for (const auto& [i, c] : next.wide->coordinates()) {
    CHECK(c.n == 0.0);
    CHECK(c.w == Catch::Approx(prev.model.wide->weight(i)).epsilon(1e-12).margin(1e-15));
  }
  const auto fresh = make_model(prev.pipeline, model_config_of(prev.model), ModelKind::joint, 1);
  for (std::size_t t = 0; t < next.deep->tables.size(); ++t) {
    CHECK(next.deep->tables[t].weights == prev.model.deep->tables[t].weights);
    CHECK(next.deep->tables[t].accum == fresh.deep->tables[t].accum);
  }
  for (std::size_t l = 0; l < next.deep->layers.size(); ++l) {
    CHECK(next.deep->layers[l].weights == prev.model.deep->layers[l].weights);
    CHECK(next.deep->layers[l].weight_accum == fresh.deep->layers[l].weight_accum);
  }
  CHECK(next.bias_accum == fresh.bias_accum);
  for (const auto& ex : prev.pipeline.encode_all(corpus)) {
    CHECK(predict(next, ex) == Catch::Approx(predict(prev.model, ex)).epsilon(1e-12));
  }
}

TEST_CASE("a changed dense input width reinitializes the hidden layers with a warning") {
  const auto corpus = testing::toy_corpus(400, 6, 4, 3);
  const auto prev = trained_on(corpus);
  auto pcfg = testing::toy_pipeline_config();
  pcfg.features.pop_back();  // drop the continuous feature
  const auto next_pipeline = fit_pipeline(pcfg, corpus);
  WarmStartReport rep;
  const auto next = warm_start(prev, next_pipeline, {}, &rep);
  CHECK_FALSE(rep.dense_layers_copied);
  REQUIRE(rep.warnings.size() == 1);
  CHECK(rep.warnings[0].find("dense layer") != std::string::npos);
  CHECK(rep.rows_fresh == 0);
  CHECK(next.deep->layers.front().in != prev.model.deep->layers.front().in);
  // Embeddings are still carried over.
  const auto a = embedding_of(prev.model, prev.pipeline, "item", "i1");
  const auto b = embedding_of(next, next_pipeline, "item", "i1");
  CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
}

TEST_CASE("coordinates missing from the new pipeline are dropped") {
  const auto corpus = testing::toy_corpus(400, 6, 4, 3);
  const auto prev = trained_on(corpus);
  auto pcfg = testing::toy_pipeline_config();
  pcfg.cross_templates.clear();
  const auto next_pipeline = fit_pipeline(pcfg, corpus);
  WarmStartReport rep;
  const auto next = warm_start(prev, next_pipeline, {}, &rep);
  std::size_t base_coords = 0;
  for (const auto& [i, c] : prev.model.wide->coordinates()) {
    base_coords += i < prev.pipeline.cross_offset() ? 1 : 0;
  }
  CHECK(rep.wide_copied == base_coords);
  CHECK(next.wide->dimension() == next_pipeline.dimension());
}

TEST_CASE("the first warm-started batch scores exactly like the previous model") {
  const auto corpus = testing::toy_corpus(400, 6, 4, 3);
  const auto prev = trained_on(corpus);
  auto next = warm_start(prev, prev.pipeline);
  const auto data = prev.pipeline.encode_all(corpus);
  TrainConfig tc;
  tc.batch_size = 32;
  tc.seed = 77;
  tc.max_steps = 1;
  tc.log_every = 1;
  const auto batch = first_batch(data, tc);
  REQUIRE(batch.size() == 32);
  const double previous_loss = evaluate(prev.model, batch).mean_logloss;
  const auto r = train(next, data, tc);
  REQUIRE(r.curve.size() == 1);
  CHECK(r.curve[0].mean_logloss == Catch::Approx(previous_loss).epsilon(1e-14));
}
