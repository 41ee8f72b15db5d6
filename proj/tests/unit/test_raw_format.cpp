#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "support/toy.hpp"
#include "widedeep/raw_format.hpp"
#include "widedeep/reports.hpp"

using namespace widedeep;

namespace {

FeatureSchema toy_schema() { return testing::toy_pipeline_config().schema(); }

}  // namespace

TEST_CASE("records parse into typed features") {
  const RawExample ex = parse_raw_record("1\tuser=u7\titem=i3\tage=41.5", toy_schema());
  CHECK(ex.label == 1);
  CHECK(std::get<std::string>(ex.features.at("user")) == "u7");
  CHECK(std::get<double>(ex.features.at("age")) == 41.5);
}

TEST_CASE("fields outside the schema are kept as strings") {
  const RawExample ex = parse_raw_record("0\textra=42\tage=1", toy_schema());
  CHECK(std::get<std::string>(ex.features.at("extra")) == "42");
}

TEST_CASE("malformed records are rejected") {
  const auto s = toy_schema();
  CHECK_THROWS_AS(parse_raw_record("2\tuser=a", s), SchemaError);
  CHECK_THROWS_AS(parse_raw_record("\tuser=a", s), SchemaError);
  CHECK_THROWS_AS(parse_raw_record("1\tuser", s), SchemaError);
  CHECK_THROWS_AS(parse_raw_record("1\t=a", s), SchemaError);
  CHECK_THROWS_AS(parse_raw_record("1\tage=old", s), SchemaError);
  CHECK_THROWS_AS(parse_raw_record("1\tage=inf", s), SchemaError);
  CHECK_THROWS_AS(parse_raw_record("1\tuser=a\tuser=b", s), SchemaError);
}

TEST_CASE("format and parse round-trip exactly, including real values") {
  const auto s = toy_schema();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1e6, 1e6);
  for (int k = 0; k < 500; ++k) {
    RawExample ex = testing::toy_example("u" + std::to_string(k), "i" + std::to_string(k % 7), dist(rng), k % 2);
    const RawExample back = parse_raw_record(format_raw_record(ex, s), s);
    CHECK(back == ex);
  }
}

TEST_CASE("schema features are written in schema order") {
  const auto line = format_raw_record(testing::toy_example("a", "b", 2.0, 1), toy_schema());
  CHECK(line == "1\tuser=a\titem=b\tage=2");
}

TEST_CASE("file reader skips comments and blank lines and reports line numbers") {
  const auto dir = std::filesystem::temp_directory_path() / "widedeep_raw_format_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "data.txt";
  {
    std::ofstream out(path);
    out << "# header\n\n1\tuser=a\titem=b\tage=3\r\n0\tuser=c\titem=d\tage=4\n";
  }
  const auto rows = read_raw_file(path, toy_schema());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].label == 1);
  {
    std::ofstream out(path);
    out << "1\tuser=a\titem=b\tage=3\nx\tuser=a\n";
  }
  try {
    read_raw_file(path, toy_schema());
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(read_raw_file(dir / "absent.txt", toy_schema()), SchemaError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("report records round-trip") {
  const std::string line = format_record("eval", {{"auc", "0.75"}, {"count", "10"}});
  CHECK(line == "eval auc=0.75 count=10");
  const ReportRecord r = parse_record(line);
  CHECK(r.kind == "eval");
  CHECK(r.real("auc") == 0.75);
  CHECK(r.at("count") == "10");
  CHECK_THROWS_AS(r.at("missing"), SchemaError);
  CHECK_THROWS_AS(parse_record("eval auc"), SchemaError);
  CHECK_THROWS_AS(parse_record("eval a=1 a=2"), SchemaError);
  CHECK_THROWS_AS(parse_record(""), SchemaError);
}
