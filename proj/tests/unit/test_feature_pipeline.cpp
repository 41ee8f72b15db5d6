#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <limits>
#include <random>
#include <set>

#include "support/toy.hpp"
#include "widedeep/feature_pipeline.hpp"

using namespace widedeep;

namespace {

RawExample cat_example(std::initializer_list<std::pair<const char*, const char*>> kv, int label = 0) {
  RawExample ex;
  for (const auto& [k, v] : kv) {
    ex.features.emplace(k, std::string(v));
  }
  ex.label = label;
  return ex;
}

FeatureSchema single(const char* name) { return FeatureSchema({{name, FeatureKind::categorical}}); }

std::vector<RawExample> counted(const char* feature, std::initializer_list<std::pair<const char*, int>> counts) {
  std::vector<RawExample> out;
  for (const auto& [value, n] : counts) {
    for (int k = 0; k < n; ++k) {
      out.push_back(cat_example({{feature, value}}));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("schema rejects duplicate names and resolves positions") {
  CHECK_THROWS_AS(FeatureSchema({{"a", FeatureKind::categorical}, {"a", FeatureKind::continuous}}), SchemaError);
  const FeatureSchema s({{"a", FeatureKind::categorical}, {"b", FeatureKind::continuous}});
  CHECK(s.position("b") == 1u);
  CHECK_FALSE(s.position("c"));
  CHECK_THROWS_AS(s.at("c"), SchemaError);
}

TEST_CASE("vocabulary applies the min_count threshold") {
  const auto corpus = counted("f", {{"c", 1}, {"b", 2}, {"a", 5}});
  const Vocabulary v = build_vocabulary(corpus, single("f"), "f", 2);
  REQUIRE(v.size() == 2);
  CHECK(v.lookup("a") == 0u);
  CHECK(v.lookup("b") == 1u);
  CHECK_FALSE(v.lookup("c"));
}

TEST_CASE("vocabulary of an empty corpus is empty") {
  const std::vector<RawExample> corpus;
  CHECK(build_vocabulary(corpus, single("f"), "f", 1).size() == 0);
}

TEST_CASE("vocabulary breaks count ties lexicographically") {
  const auto corpus = counted("f", {{"b", 3}, {"a", 3}});
  const Vocabulary v = build_vocabulary(corpus, single("f"), "f", 1);
  CHECK(v.lookup("a") == 0u);
  CHECK(v.lookup("b") == 1u);
}

TEST_CASE("vocabulary errors") {
  const std::vector<RawExample> corpus;
  const FeatureSchema s({{"f", FeatureKind::categorical}, {"x", FeatureKind::continuous}});
  CHECK_THROWS_AS(build_vocabulary(corpus, s, "missing", 1), SchemaError);
  CHECK_THROWS_AS(build_vocabulary(corpus, s, "x", 1), SchemaError);
  CHECK_THROWS_AS(build_vocabulary(corpus, s, "f", 0), FitError);
}

TEST_CASE("vocabulary matches a counting oracle on a random corpus") {
  std::mt19937_64 rng(11);
  std::geometric_distribution<int> value(0.15);
  std::vector<RawExample> corpus;
  for (int k = 0; k < 3000; ++k) {
    corpus.push_back(cat_example({{"f", ("v" + std::to_string(value(rng))).c_str()}}));
  }
  for (const std::size_t min_count : {1u, 3u, 20u}) {
    std::map<std::string, std::size_t> counts;
    for (const auto& ex : corpus) {
      ++counts[std::get<std::string>(ex.features.at("f"))];
    }
    const Vocabulary v = build_vocabulary(corpus, single("f"), "f", min_count);
    std::size_t expected_size = 0;
    for (const auto& [val, n] : counts) {
      CHECK(v.lookup(val).has_value() == (n >= min_count));
      expected_size += n >= min_count ? 1 : 0;
    }
    REQUIRE(v.size() == expected_size);
    for (std::uint32_t id = 0; id + 1 < v.size(); ++id) {
      const auto& a = v.value(id);
      const auto& b = v.value(id + 1);
      CHECK((counts[a] > counts[b] || (counts[a] == counts[b] && a < b)));
    }
    for (std::uint32_t id = 0; id < v.size(); ++id) {
      CHECK(v.lookup(v.value(id)) == id);
    }
  }
}

TEST_CASE("quantiles of 1..100 with four buckets") {
  std::vector<double> values;
  for (int k = 1; k <= 100; ++k) {
    values.push_back(k);
  }
  const auto q = fit_quantiles(values, 4);
  CHECK(q.boundaries() == std::vector<double>{25.0, 50.0, 75.0});
}

TEST_CASE("quantiles of a constant corpus collapse") {
  const std::vector<double> values{5, 5, 5};
  for (const std::size_t n_q : {2u, 3u, 7u}) {
    const auto q = fit_quantiles(values, n_q);
    for (const double b : q.boundaries()) {
      CHECK(b == 5.0);
    }
  }
}

TEST_CASE("quantiles of two values give one boundary inside the range") {
  const auto q = fit_quantiles(std::vector<double>{2.0, 1.0}, 2);
  REQUIRE(q.boundaries().size() == 1);
  CHECK(q.boundaries()[0] == 1.0);
}

TEST_CASE("quantile fitting errors") {
  CHECK_THROWS_AS(fit_quantiles(std::vector<double>{}, 4), FitError);
  CHECK_THROWS_AS(fit_quantiles(std::vector<double>{1.0}, 1), FitError);
  CHECK_THROWS_AS(fit_quantiles(std::vector<double>{1.0, NAN}, 2), FitError);
}

TEST_CASE("quantiles match a sorted-index oracle") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(3.0, 2.0);
  for (const std::size_t n : {1u, 7u, 100u, 1001u}) {
    std::vector<double> values(n);
    for (double& x : values) {
      x = std::round(dist(rng) * 4.0) / 4.0;  // force ties
    }
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    for (const std::size_t n_q : {2u, 3u, 10u}) {
      const auto q = fit_quantiles(values, n_q);
      for (std::size_t j = 1; j < n_q; ++j) {
        const auto rank = static_cast<std::size_t>(std::ceil(static_cast<double>(j * n) / static_cast<double>(n_q)));
        CHECK(q.boundaries()[j - 1] == sorted[rank - 1]);
      }
    }
  }
}

TEST_CASE("normalization at the edges and inside") {
  const QuantileBoundaries q("x", 4, {25.0, 50.0, 75.0});
  CHECK(normalize_continuous(-1e9, q) == 0.0);
  CHECK(normalize_continuous(10.0, q) == 0.0);
  CHECK(normalize_continuous(80.0, q) == 1.0);
  CHECK(normalize_continuous(1e300, q) == 1.0);
  CHECK(normalize_continuous(30.0, q) == 1.0 / 3.0);
}

TEST_CASE("a value on a boundary goes to the lower bucket") {
  const QuantileBoundaries q("x", 4, {25.0, 50.0, 75.0});
  CHECK(q.bucket(25.0) == 1);
  CHECK(q.bucket(50.0) == 2);
  CHECK(q.bucket(75.0) == 3);
  CHECK(q.bucket(75.0000001) == 4);
}

TEST_CASE("normalization is monotone with outputs on the exact grid") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> dist(0.0, 10.0);
  std::vector<double> fit(500);
  for (double& x : fit) {
    x = dist(rng);
  }
  for (const std::size_t n_q : {2u, 5u, 10u}) {
    const auto q = fit_quantiles(fit, n_q);
    std::set<double> grid;
    for (std::size_t i = 1; i <= n_q; ++i) {
      grid.insert(static_cast<double>(i - 1) / static_cast<double>(n_q - 1));
    }
    std::vector<double> xs(10000);
    for (double& x : xs) {
      x = dist(rng) * 1.5;
    }
    std::sort(xs.begin(), xs.end());
    double prev = -1.0;
    for (const double x : xs) {
      const double y = q.normalize(x);
      CHECK(grid.count(y) == 1);
      CHECK(y >= prev);
      prev = y;
    }
  }
}

TEST_CASE("cross fires only when every constituent matches") {
  const FeatureSchema schema({{"gender", FeatureKind::categorical}, {"language", FeatureKind::categorical}});
  const CrossSpec spec({{{{"gender", "female"}, {"language", "en"}}}}, schema);
  CHECK(cross_product(cat_example({{"gender", "female"}, {"language", "en"}}), spec) == std::vector<std::uint32_t>{0});
  CHECK(cross_product(cat_example({{"gender", "female"}, {"language", "fr"}}), spec).empty());
  CHECK(cross_product(cat_example({{"gender", "female"}}), spec).empty());
}

TEST_CASE("cross definitions are validated") {
  const FeatureSchema schema({{"a", FeatureKind::categorical}, {"b", FeatureKind::categorical},
                              {"x", FeatureKind::continuous}});
  CHECK_THROWS_AS(CrossSpec({{{{"a", "1"}}}}, schema), SchemaError);
  CHECK_THROWS_AS(CrossSpec({{{{"a", "1"}, {"a", "2"}}}}, schema), SchemaError);
  CHECK_THROWS_AS(CrossSpec({{{{"a", "1"}, {"x", "2"}}}}, schema), SchemaError);
  CHECK_THROWS_AS(CrossSpec({{{{"a", "1"}, {"zz", "2"}}}}, schema), SchemaError);
  // Term order in the definition does not matter.
  const CrossSpec spec({{{{"b", "2"}, {"a", "1"}}}}, schema);
  CHECK(spec.at(0).terms.front().feature == "a");
  CHECK(cross_product(cat_example({{"a", "1"}, {"b", "2"}}), spec).size() == 1);
}

TEST_CASE("cross product equals brute-force product of indicators over an enumerated schema") {
  const std::vector<std::string> features{"f0", "f1", "f2"};
  const std::vector<std::string> values{"v0", "v1", "v2", "v3"};
  std::vector<FeatureDef> defs;
  for (const auto& f : features) {
    defs.push_back({f, FeatureKind::categorical});
  }
  const FeatureSchema schema(defs);

  // Every conjunction over two or three features.
  std::vector<CrossDef> crosses;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      for (const auto& va : values) {
        for (const auto& vb : values) {
          crosses.push_back({{{features[a], va}, {features[b], vb}}});
        }
      }
    }
  }
  for (const auto& v0 : values) {
    for (const auto& v1 : values) {
      for (const auto& v2 : values) {
        crosses.push_back({{{features[2], v2}, {features[0], v0}, {features[1], v1}}});
      }
    }
  }
  const CrossSpec spec(crosses, schema);

  // c[k][i] over the 12 binary indicators i = feature * 4 + value.
  std::vector<std::array<int, 12>> c(crosses.size());
  for (std::size_t k = 0; k < crosses.size(); ++k) {
    c[k].fill(0);
    for (const auto& t : crosses[k].terms) {
      const auto f = std::find(features.begin(), features.end(), t.feature) - features.begin();
      const auto v = std::find(values.begin(), values.end(), t.value) - values.begin();
      c[k][static_cast<std::size_t>(f * 4 + v)] = 1;
    }
  }

  // Value index 4 stands for "feature absent".
  std::size_t checked = 0;
  for (int a = 0; a <= 4; ++a) {
    for (int b = 0; b <= 4; ++b) {
      for (int d = 0; d <= 4; ++d) {
        const int chosen[3] = {a, b, d};
        RawExample ex;
        std::array<double, 12> x{};
        for (int f = 0; f < 3; ++f) {
          if (chosen[f] < 4) {
            ex.features.emplace(features[static_cast<std::size_t>(f)], values[static_cast<std::size_t>(chosen[f])]);
            x[static_cast<std::size_t>(f * 4 + chosen[f])] = 1.0;
          }
        }
        std::vector<std::uint32_t> expected;
        for (std::size_t k = 0; k < c.size(); ++k) {
          double phi = 1.0;
          for (std::size_t i = 0; i < 12; ++i) {
            phi *= std::pow(x[i], c[k][i]);
          }
          if (phi == 1.0) {
            expected.push_back(static_cast<std::uint32_t>(k));
          }
        }
        CHECK(cross_product(ex, spec) == expected);
        ++checked;
      }
    }
  }
  CHECK(checked == 125);
}

TEST_CASE("cross templates expand to conjunctions seen often enough") {
  std::vector<RawExample> corpus;
  for (int k = 0; k < 3; ++k) {
    corpus.push_back(cat_example({{"u", "a"}, {"i", "x"}}));
  }
  corpus.push_back(cat_example({{"u", "b"}, {"i", "x"}}));
  corpus.push_back(cat_example({{"u", "b"}}));
  const FeatureSchema schema({{"u", FeatureKind::categorical}, {"i", FeatureKind::categorical}});
  const auto all = expand_cross_template(corpus, schema, {{"u", "i"}, 1});
  REQUIRE(all.size() == 2);
  CHECK(all[0].terms == std::vector<CrossTerm>{{"u", "a"}, {"i", "x"}});
  const auto frequent = expand_cross_template(corpus, schema, {{"u", "i"}, 2});
  CHECK(frequent.size() == 1);
  CHECK_THROWS_AS(expand_cross_template(corpus, schema, {{"u"}, 1}), SchemaError);
}

TEST_CASE("global index layout and the worked cross example") {
  PipelineConfig cfg;
  cfg.features = {{"gender", FeatureKind::categorical, 1, 2},
                  {"language", FeatureKind::categorical, 1, 2},
                  {"age", FeatureKind::continuous, 1, 4}};
  cfg.crosses.push_back({{{"gender", "female"}, {"language", "en"}}});
  std::vector<RawExample> corpus;
  auto add = [&](const char* g, const char* l, double age) {
    RawExample ex = cat_example({{"gender", g}, {"language", l}});
    ex.features.emplace("age", age);
    corpus.push_back(ex);
  };
  add("female", "en", 10);
  add("female", "fr", 20);
  add("male", "en", 30);
  add("female", "de", 40);
  const FeaturePipeline p = fit_pipeline(cfg, corpus);
  // gender: female(3) male(1); language: en(2) de(1) fr(1); then one cross.
  REQUIRE(p.dimension() == 6);
  CHECK(p.cross_offset() == 5);
  const EncodedExample e = p.encode(corpus[0]);
  CHECK(e.sparse_indices == std::vector<FeatureIndex>{0, 2, 5});
  CHECK(e.dense_values == std::vector<double>{0.0});
  CHECK(p.encode(corpus[1]).sparse_indices == std::vector<FeatureIndex>{0, 4});
  CHECK(p.describe(5) == "gender=female&language=en");
  CHECK(p.describe(3) == "language=de");
}

TEST_CASE("out-of-vocabulary values are dropped") {
  const auto corpus = testing::toy_corpus(200, 5, 5, 1);
  const FeaturePipeline p = fit_pipeline(testing::toy_pipeline_config(), corpus);
  const EncodedExample e = p.encode(testing::toy_example("nobody", "nothing", 50.0, 1));
  CHECK(e.sparse_indices.empty());
  CHECK(e.dense_values.size() == 1);
}

TEST_CASE("crosses are evaluated on raw values, even when a constituent is OOV") {
  PipelineConfig cfg;
  cfg.features = {{"u", FeatureKind::categorical, 5, 2}, {"i", FeatureKind::categorical, 1, 2}};
  cfg.crosses.push_back({{{"u", "rare"}, {"i", "x"}}});
  const std::vector<RawExample> corpus{cat_example({{"u", "rare"}, {"i", "x"}})};
  const FeaturePipeline p = fit_pipeline(cfg, corpus);
  CHECK(p.vocabularies()[0].size() == 0);
  CHECK(p.encode(corpus[0]).sparse_indices == std::vector<FeatureIndex>{0, 1});
}

TEST_CASE("encoding matches offsets re-derived from the vocabulary tables") {
  const auto corpus = testing::toy_corpus(2000, 30, 20, 3);
  PipelineConfig cfg = testing::toy_pipeline_config();
  cfg.features[0].min_count = 40;  // leave some users out of vocabulary
  cfg.cross_templates[0].min_count = 3;
  const FeaturePipeline p = fit_pipeline(cfg, corpus);
  const auto& vu = p.vocabularies()[0];
  const auto& vi = p.vocabularies()[1];
  std::map<std::pair<std::string, std::string>, FeatureIndex> cross_ids;
  for (std::size_t k = 0; k < p.crosses().size(); ++k) {
    const auto& t = p.crosses().at(k).terms;
    cross_ids[{t[0].value, t[1].value}] = static_cast<FeatureIndex>(vu.size() + vi.size() + k);
  }
  const auto test = testing::toy_corpus(500, 35, 25, 4);
  for (const auto& ex : test) {
    const auto& u = std::get<std::string>(ex.features.at("user"));
    const auto& i = std::get<std::string>(ex.features.at("item"));
    std::vector<FeatureIndex> expected;
    if (const auto id = vu.lookup(u)) {
      expected.push_back(*id);
    }
    if (const auto id = vi.lookup(i)) {
      expected.push_back(static_cast<FeatureIndex>(vu.size()) + *id);
    }
    if (const auto it = cross_ids.find({u, i}); it != cross_ids.end()) {
      expected.push_back(it->second);
    }
    const EncodedExample e = p.encode(ex);
    CHECK(e.sparse_indices == expected);
    CHECK(e.dense_values[0] == p.quantiles()[0].normalize(std::get<double>(ex.features.at("age"))));
  }
}

TEST_CASE("one-hot and cross indices never collide") {
  const auto corpus = testing::toy_corpus(10000, 50, 40, 8);
  const FeaturePipeline p = fit_pipeline(testing::toy_pipeline_config(), corpus);
  for (const auto& ex : corpus) {
    const auto e = p.encode(ex);
    REQUIRE(std::is_sorted(e.sparse_indices.begin(), e.sparse_indices.end()));
    REQUIRE(std::adjacent_find(e.sparse_indices.begin(), e.sparse_indices.end()) == e.sparse_indices.end());
    std::set<std::string> kinds;
    for (const FeatureIndex i : e.sparse_indices) {
      REQUIRE(i < p.dimension());
      const std::string key = p.coordinate_key(i);
      const std::string feature = key[0] == 'X' ? "cross" : key.substr(2, key.find('\x1f') - 2);
      REQUIRE(kinds.insert(feature).second);
    }
  }
}

TEST_CASE("encoding never reads the label and fitting is deterministic") {
  const auto corpus = testing::toy_corpus(1000, 20, 10, 2);
  const FeaturePipeline a = fit_pipeline(testing::toy_pipeline_config(), corpus);
  const FeaturePipeline b = fit_pipeline(testing::toy_pipeline_config(), corpus);
  CHECK(a == b);
  for (std::size_t k = 0; k < 100; ++k) {
    RawExample flipped = corpus[k];
    flipped.label = 1 - flipped.label;
    const auto e0 = a.encode(corpus[k]);
    const auto e1 = a.encode(flipped);
    CHECK(e0.sparse_indices == e1.sparse_indices);
    CHECK(e0.dense_values == e1.dense_values);
    CHECK(e0 == b.encode(corpus[k]));
  }
}

TEST_CASE("missing continuous features and wrong value types are schema errors") {
  const auto corpus = testing::toy_corpus(100, 5, 5, 1);
  const FeaturePipeline p = fit_pipeline(testing::toy_pipeline_config(), corpus);
  RawExample ex = cat_example({{"user", "u1"}, {"item", "i1"}});
  CHECK_THROWS_AS(p.encode(ex), SchemaError);
  ex.features.emplace("age", std::string("old"));
  CHECK_THROWS_AS(p.encode(ex), SchemaError);
  ex.features.insert_or_assign("age", std::nan(""));
  CHECK_THROWS_AS(p.encode(ex), SchemaError);
  ex.features.insert_or_assign("age", std::numeric_limits<double>::infinity());
  CHECK(p.encode(ex).dense_values == std::vector<double>{1.0});
}

TEST_CASE("coordinate keys are unique and round-trip through the index") {
  const auto corpus = testing::toy_corpus(500, 10, 10, 6);
  const FeaturePipeline p = fit_pipeline(testing::toy_pipeline_config(), corpus);
  const auto index = p.coordinate_index();
  CHECK(index.size() == p.dimension());
  for (FeatureIndex i = 0; i < p.dimension(); ++i) {
    CHECK(index.at(p.coordinate_key(i)) == i);
  }
  CHECK_THROWS_AS(p.coordinate_key(p.dimension()), DimensionError);
}
