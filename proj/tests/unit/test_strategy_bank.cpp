#include <gtest/gtest.h>

#include <random>

#include "lean_refactor/bank_pipeline.hpp"
#include "lean_refactor/strategy_bank.hpp"
#include "test_support.hpp"

using namespace lean_refactor;

namespace {

ToolchainRegistry registry3() { return ToolchainRegistry({{"v4.9.0", {}}, {"v4.15.0", {}}, {"v4.19.0", {}}}); }

Strategy sample_strategy(const std::string& id = "s1") {
  Strategy s;
  s.id = id;
  s.title = "Collapse rewrites";
  s.description = "Merge a chain of rw calls into one simp call.";
  s.when_to_apply = "Several consecutive rw steps on the same goal.";
  s.application_guide = {"Collect the lemmas", "Call simp only with them"};
  s.abstract_example = {"rw [a]\nrw [b]", "simp only [a, b]"};
  s.potential_reduction = Reduction::medium;
  s.member_pair_ids = {"p1"};
  return s;
}

ProofPair sample_pair(const std::string& id = "p1") {
  ProofPair p;
  p.id = id;
  p.statement = "theorem t : True :=";
  p.long_proof = "theorem t : True := by\n  have : True := trivial\n  exact this";
  p.short_proof = "theorem t : True := trivial";
  p.long_verified = p.short_verified = true;
  return p;
}

nlohmann::json strategy_json() { return nlohmann::json::parse(to_json(sample_strategy()).dump()); }

std::string schema_field(const nlohmann::json& j) {
  try {
    strategy_from_json(j, registry3(), 3);
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line(), 3u);
    return e.field();
  }
  return "<accepted>";
}

}  // namespace

TEST(AggregationTest, MedianOddEvenAndEmpty) {
  const double odd[] = {0.3, -0.1, 0.9};
  EXPECT_DOUBLE_EQ(aggregate_compile_reduction(odd), 0.3);
  const double even[] = {0.4, 0.1, 0.2, 0.8};
  EXPECT_DOUBLE_EQ(aggregate_compile_reduction(even), 0.3);
  EXPECT_THROW(aggregate_compile_reduction(std::span<const double>{}), EmptyCluster);
}

TEST(AggregationTest, MedianMatchesSortOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n(1, 40);
  std::uniform_real_distribution<double> x(-3.0, 1.0);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> v(static_cast<std::size_t>(n(rng)));
    for (auto& e : v) e = x(rng);
    if (t % 5 == 0) v.push_back(v.front());
    EXPECT_EQ(aggregate_compile_reduction(v), lr_test::oracle::median(v));
  }
}

TEST(AggregationTest, IntersectionMatchesCountingOracle) {
  std::mt19937_64 rng(12);
  const std::vector<std::string> universe{"a", "b", "c", "d", "e"};
  std::uniform_int_distribution<int> n(1, 6), coin(0, 3);
  for (int t = 0; t < 2000; ++t) {
    std::vector<VersionSet> sets(static_cast<std::size_t>(n(rng)));
    for (auto& s : sets) {
      for (const auto& u : universe) {
        if (coin(rng) != 0) s.insert(u);
      }
    }
    EXPECT_EQ(aggregate_compatibility(sets), lr_test::oracle::intersection(sets));
  }
  EXPECT_THROW(aggregate_compatibility(std::span<const VersionSet>{}), EmptyCluster);
}

TEST(MetadataTest, RecomputeSkipsMathlibAndUntested) {
  StrategyBank bank;
  bank.registry = registry3();
  auto p1 = sample_pair("p1");
  p1.compile_reduction = 0.5;
  p1.version_status = {{"v4.9.0", VersionStatus::compiles}, {"v4.15.0", VersionStatus::compiles}};
  auto p2 = sample_pair("p2");
  p2.compile_reduction = 0.1;
  p2.version_status = {{"v4.9.0", VersionStatus::compiles}, {"v4.15.0", VersionStatus::fails}};
  auto p3 = sample_pair("p3");
  p3.source_corpus = SourceCorpus::mathlib;
  p3.compile_reduction = 0.2;
  auto p4 = sample_pair("p4");
  p4.version_status = {{"v4.9.0", VersionStatus::untested}};
  bank.pairs = {p1, p2, p3, p4};
  auto s = sample_strategy();
  s.member_pair_ids = {"p1", "p2", "p3", "p4"};
  bank.strategies = {s};

  const auto md = recompute_metadata(s, bank);
  ASSERT_TRUE(md.median_compile_reduction);
  EXPECT_DOUBLE_EQ(*md.median_compile_reduction, 0.2);
  EXPECT_EQ(md.compatibility_set, (VersionSet{"v4.9.0"}));

  const auto discrepancies = recheck(bank);
  ASSERT_EQ(discrepancies.size(), 2u);
  EXPECT_EQ(discrepancies[0].field, "median_compile_reduction");
  EXPECT_EQ(discrepancies[1].field, "compatibility_set");

  const auto rebuilt = rebuild_metadata(bank);
  EXPECT_TRUE(recheck(rebuilt).empty());
  EXPECT_EQ(rebuild_metadata(rebuilt).strategies, rebuilt.strategies);
}

TEST(MetadataTest, RecheckFlagsMissingMembers) {
  StrategyBank bank;
  bank.registry = registry3();
  auto s = sample_strategy();
  s.member_pair_ids = {"ghost"};
  bank.strategies = {s};
  const auto d = recheck(bank);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].field, "member_pair_ids");
}

TEST(RegistryTest, LoadsAndResolves) {
  lr_test::TempDir dir;
  lr_test::write_text(dir / "tc.json",
                      R"({"schema_version": 1, "toolchains": [{"version": "v4.9.0", "root": "env9"},
                          {"version": "v4.19.0"}]})");
  const auto reg = ToolchainRegistry::load(dir / "tc.json");
  EXPECT_EQ(reg.native(), "v4.9.0");
  EXPECT_EQ(reg.at("v4.9.0").root, dir.path() / "env9");
  EXPECT_EQ(reg.non_native_versions(), std::vector<std::string>{"v4.19.0"});
  EXPECT_THROW(reg.at("v5"), UnknownVersion);
  EXPECT_THROW(ToolchainRegistry({{"a", {}}, {"a", {}}}), ConfigError);
  lr_test::write_text(dir / "bad.json", R"({"schema_version": 2, "toolchains": []})");
  EXPECT_THROW(ToolchainRegistry::load(dir / "bad.json"), ConfigError);
}

TEST(BankIoTest, RoundTripsRandomBanks) {
  std::mt19937_64 rng(5);
  lr_test::TempDir dir;
  for (int i = 0; i < 50; ++i) {
    const auto bank = lr_test::random_bank(rng);
    const auto path = dir / ("b" + std::to_string(i));
    save_bank(bank, path);
    const auto loaded = load_bank(path, bank.registry);
    EXPECT_EQ(loaded.strategies, bank.strategies);
    EXPECT_EQ(loaded.pairs, bank.pairs);
  }
}

TEST(BankIoTest, LoadWithoutPairsFile) {
  lr_test::TempDir dir;
  lr_test::write_text(dir / "strategies.jsonl", strategy_json().dump() + "\n");
  const auto bank = load_bank(dir.path(), registry3());
  EXPECT_EQ(bank.strategies.size(), 1u);
  EXPECT_TRUE(bank.pairs.empty());
}

TEST(BankIoTest, DuplicateIdsRejected) {
  lr_test::TempDir dir;
  lr_test::write_text(dir / "strategies.jsonl", strategy_json().dump() + "\n" + strategy_json().dump() + "\n");
  try {
    load_bank(dir.path(), registry3());
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.field(), "id");
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(BankIoTest, InvalidJsonLineNamesRecord) {
  lr_test::TempDir dir;
  lr_test::write_text(dir / "strategies.jsonl", strategy_json().dump() + "\n{oops\n");
  try {
    load_bank(dir.path(), registry3());
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("record 2"), std::string::npos);
  }
}

TEST(StrategySchemaTest, NamesOffendingField) {
  auto j = strategy_json();
  j.erase("title");
  EXPECT_EQ(schema_field(j), "title");

  j = strategy_json();
  j["extra"] = 1;
  EXPECT_EQ(schema_field(j), "extra");

  j = strategy_json();
  j["potential_reduction"] = "huge";
  EXPECT_EQ(schema_field(j), "potential_reduction");

  j = strategy_json();
  j["median_compile_reduction"] = 1.5;
  EXPECT_EQ(schema_field(j), "median_compile_reduction");

  j = strategy_json();
  j["median_compile_reduction"] = "fast";
  EXPECT_EQ(schema_field(j), "median_compile_reduction");

  j = strategy_json();
  j["compatibility_set"] = {"v9.9.9"};
  EXPECT_EQ(schema_field(j), "compatibility_set");

  j = strategy_json();
  j["compatibility_set"] = {"v4.9.0", "v4.9.0"};
  EXPECT_EQ(schema_field(j), "compatibility_set");

  j = strategy_json();
  j["application_guide"] = nlohmann::json::array();
  EXPECT_EQ(schema_field(j), "application_guide");

  j = strategy_json();
  j["abstract_example"] = {{"before", "x"}};
  EXPECT_EQ(schema_field(j), "abstract_example");

  j = strategy_json();
  j["member_pair_ids"] = {1, 2};
  EXPECT_EQ(schema_field(j), "member_pair_ids");

  j = strategy_json();
  j["median_compile_reduction"] = -4.0;
  EXPECT_EQ(schema_field(j), "<accepted>");
}

TEST(PairSchemaTest, NamesOffendingField) {
  const auto base = nlohmann::json::parse(to_json(sample_pair()).dump());
  auto field_of = [](const nlohmann::json& j) -> std::string {
    try {
      pair_from_json(j, registry3(), 1);
    } catch (const SchemaError& e) {
      return e.field();
    }
    return "<accepted>";
  };
  EXPECT_EQ(field_of(base), "<accepted>");
  auto j = base;
  j["source_corpus"] = "arxiv";
  EXPECT_EQ(field_of(j), "source_corpus");
  j = base;
  j["version_status"] = {{"v4.9.0", "maybe"}};
  EXPECT_EQ(field_of(j), "version_status");
  j = base;
  j["grounded_spans"] = {{{"strategy_id", "s"}, {"line_start", 2}, {"line_end", 9}}};
  EXPECT_EQ(field_of(j), "grounded_spans");
  j = base;
  j["long_verified"] = "yes";
  EXPECT_EQ(field_of(j), "long_verified");
  j = base;
  j["compile_reduction"] = 2.0;
  EXPECT_EQ(field_of(j), "compile_reduction");
}

TEST(ContentIdTest, StableAndSensitive) {
  const auto a = sample_strategy("x");
  auto b = sample_strategy("y");
  EXPECT_EQ(strategy_content_id(a), strategy_content_id(b));
  b.application_guide.push_back("one more");
  EXPECT_NE(strategy_content_id(a), strategy_content_id(b));
  EXPECT_EQ(pair_content_id(sample_pair("a")), pair_content_id(sample_pair("b")));
}

TEST(EnumTest, ParseRoundTrips) {
  for (auto r : {Reduction::high, Reduction::medium, Reduction::low}) EXPECT_EQ(parse_reduction(to_string(r)), r);
  for (auto s : {VersionStatus::compiles, VersionStatus::fails, VersionStatus::untested}) {
    EXPECT_EQ(parse_version_status(to_string(s)), s);
  }
  EXPECT_FALSE(parse_reduction("High"));
  EXPECT_GT(reduction_weight(Reduction::high), reduction_weight(Reduction::medium));
  EXPECT_GT(reduction_weight(Reduction::medium), reduction_weight(Reduction::low));
}
