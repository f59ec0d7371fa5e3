#include <gtest/gtest.h>

#include <random>

#include "lean_refactor/retrieval.hpp"
#include "test_support.hpp"

using namespace lean_refactor;

namespace {

EmbeddingVector ev(std::vector<double> v) { return {std::move(v)}; }

StrategyBank bank_with(const std::vector<std::tuple<std::string, std::optional<double>, VersionSet>>& rows) {
  StrategyBank bank;
  bank.registry = ToolchainRegistry({{"v4.9.0", {}}, {"v4.15.0", {}}});
  for (const auto& [id, red, compat] : rows) {
    Strategy s;
    s.id = id;
    s.median_compile_reduction = red;
    s.compatibility_set = compat;
    bank.strategies.push_back(s);
  }
  return bank;
}

std::vector<std::string> ids(const std::vector<RankedStrategy>& list) {
  std::vector<std::string> out;
  for (const auto& r : list) out.push_back(r.strategy_id);
  return out;
}

}  // namespace

TEST(CosineTest, BasicValuesAndErrors) {
  EXPECT_DOUBLE_EQ(cosine(ev({1, 0}), ev({0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(cosine(ev({1, 1}), ev({2, 2})), 1.0);
  EXPECT_DOUBLE_EQ(cosine(ev({1, 0}), ev({-3, 0})), -1.0);
  EXPECT_THROW(cosine(ev({1, 0}), ev({1, 0, 0})), DimensionMismatch);
  EXPECT_THROW(cosine(ev({0, 0}), ev({1, 0})), DegenerateVector);
  EXPECT_THROW(cosine(ev({std::nan(""), 0}), ev({1, 0})), Error);
}

TEST(CosineTest, MatchesOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 500; ++t) {
    const auto u = lr_test::random_vector(rng, 1 + t % 16);
    const auto v = lr_test::random_vector(rng, 1 + t % 16);
    EXPECT_NEAR(cosine(ev(u), ev(v)), static_cast<double>(lr_test::oracle::cosine(u, v)), 1e-12);
  }
}

TEST(FlatIndexTest, TopKMatchesExhaustiveSort) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const std::size_t dim = 1 + t % 8, n = 1 + static_cast<std::size_t>(rng() % 300);
    FlatIndex index(dim);
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (std::size_t i = 0; i < n; ++i) {
      auto v = lr_test::random_vector(rng, dim);
      entries.emplace_back("s" + std::to_string(i), v);
      index.add(entries.back().first, ev(v));
    }
    const auto q = lr_test::random_vector(rng, dim);
    const auto want = lr_test::oracle::exhaustive_rank(entries, q);
    const std::size_t k = 1 + static_cast<std::size_t>(rng() % (n + 3));
    const auto got = index.top_k(ev(q), k);
    ASSERT_EQ(got.size(), std::min(k, n));
    for (std::size_t r = 0; r < got.size(); ++r) {
      EXPECT_EQ(got[r].strategy_id, want[r].id);
      EXPECT_NEAR(got[r].similarity, want[r].sim, 1e-12);
      EXPECT_EQ(got[r].rank, static_cast<int>(r) + 1);
    }
  }
}

TEST(FlatIndexTest, TiesBreakById) {
  FlatIndex index(2);
  index.add("b", ev({1, 0}));
  index.add("a", ev({2, 0}));
  index.add("c", ev({0, 1}));
  EXPECT_EQ(ids(index.top_k(ev({1, 0}), 3)), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(FlatIndexTest, Errors) {
  EXPECT_THROW(FlatIndex(0), DimensionMismatch);
  FlatIndex index(2);
  EXPECT_THROW(index.top_k(ev({1, 0}), 1), EmptyIndex);
  EXPECT_THROW(index.add("x", ev({1, 0, 0})), DimensionMismatch);
  EXPECT_THROW(index.add("x", ev({0, 0})), DegenerateVector);
  index.add("x", ev({1, 0}));
  EXPECT_THROW(index.top_k(ev({0, 0}), 1), DegenerateVector);
  EXPECT_THROW(index.top_k(ev({1}), 1), DimensionMismatch);
  EXPECT_TRUE(index.top_k(ev({1, 0}), 0).empty());
}

TEST(RerankTest, StableDescendingAbsentLast) {
  const auto bank = bank_with({{"a", 0.1, {}}, {"b", std::nullopt, {}}, {"c", 0.5, {}}, {"d", 0.1, {}}, {"e", 0.5, {}}});
  std::vector<RankedStrategy> pool;
  for (const char* id : {"a", "b", "c", "d", "e", "zz"}) pool.push_back({id, 0.0, 0, {}});
  const auto out = rerank_by_compile_reduction(pool, bank);
  EXPECT_EQ(ids(out), (std::vector<std::string>{"c", "e", "a", "d", "b", "zz"}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].rank, static_cast<int>(i) + 1);
}

TEST(FilterTest, KeepsOnlyCompatible) {
  const auto bank = bank_with({{"a", 0.1, {"v4.9.0"}}, {"b", 0.2, {}}, {"c", 0.3, {"v4.9.0", "v4.15.0"}}});
  std::vector<RankedStrategy> pool{{"a", .9, 1, {}}, {"b", .8, 2, {}}, {"c", .7, 3, {}}};
  EXPECT_EQ(ids(filter_by_version(pool, "v4.15.0", bank)), std::vector<std::string>{"c"});
  EXPECT_EQ(ids(filter_by_version(pool, "v4.9.0", bank)), (std::vector<std::string>{"a", "c"}));
  EXPECT_THROW(filter_by_version(pool, "v5", bank), UnknownVersion);
}

TEST(ObjectiveSpecTest, Parse) {
  auto s = ObjectiveSpec::parse("length");
  EXPECT_EQ(s.mode, ObjectiveMode::length);
  s = ObjectiveSpec::parse("compile-time", 20, 4);
  EXPECT_EQ(s.mode, ObjectiveMode::compile_time);
  EXPECT_EQ(s.pool_size, 20u);
  s = ObjectiveSpec::parse("compile-time,version:v4.9.0");
  EXPECT_EQ(s.mode, ObjectiveMode::version);
  EXPECT_TRUE(s.reranks());
  EXPECT_EQ(s.target_version, "v4.9.0");
  EXPECT_THROW(ObjectiveSpec::parse("speed"), ConfigError);
  EXPECT_THROW(ObjectiveSpec::parse("length,compile-time"), ConfigError);
  EXPECT_THROW(ObjectiveSpec::parse("length", 4, 8), ConfigError);
  EXPECT_THROW(ObjectiveSpec::parse("version:"), ConfigError);
}

TEST(RetrieveTest, ComposedFilterThenRerankThenTruncate) {
  std::mt19937_64 rng(3);
  auto bank = bank_with({});
  FlatIndex index(4);
  std::vector<std::pair<std::string, std::vector<double>>> entries;
  std::uniform_real_distribution<double> red(-0.5, 0.9);
  for (int i = 0; i < 60; ++i) {
    Strategy s;
    s.id = "s" + std::to_string(i);
    if (i % 4 != 0) s.median_compile_reduction = std::round(red(rng) * 10) / 10;
    if (i % 3 != 0) s.compatibility_set.insert("v4.15.0");
    bank.strategies.push_back(s);
    entries.emplace_back(s.id, lr_test::random_vector(rng, 4));
    index.add(s.id, ev(entries.back().second));
  }
  const auto q = lr_test::random_vector(rng, 4);
  auto spec = ObjectiveSpec::parse("compile-time,version:v4.15.0", 25, 6);
  const auto got = retrieve(index, bank, ev(q), spec);

  auto pool = lr_test::oracle::exhaustive_rank(entries, q);
  pool.resize(25);
  std::vector<lr_test::oracle::Scored> kept;
  for (const auto& p : pool) {
    if (bank.find_strategy(p.id)->compatibility_set.contains("v4.15.0")) kept.push_back(p);
  }
  std::stable_sort(kept.begin(), kept.end(), [&](const auto& a, const auto& b) {
    const auto ra = bank.find_strategy(a.id)->median_compile_reduction.value_or(-1e300);
    const auto rb = bank.find_strategy(b.id)->median_compile_reduction.value_or(-1e300);
    return ra > rb;
  });
  kept.resize(std::min<std::size_t>(6, kept.size()));
  ASSERT_EQ(got.size(), kept.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].strategy_id, kept[i].id);

  spec = ObjectiveSpec::parse("length", 25, 6);
  EXPECT_EQ(retrieve(index, bank, ev(q), spec), index.top_k(ev(q), 6));
}

TEST(ContrastiveLossTest, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 300; ++t) {
    const std::size_t b = 1 + t % 8, dim = 1 + t % 16;
    ContrastiveBatch batch;
    std::vector<std::vector<double>> q, c;
    for (std::size_t i = 0; i < b; ++i) {
      q.push_back(lr_test::random_vector(rng, dim));
      c.push_back(lr_test::random_vector(rng, dim));
      batch.queries.push_back(ev(q.back()));
      batch.positives.push_back(ev(c.back()));
    }
    EXPECT_NEAR(contrastive_loss(batch), lr_test::oracle::contrastive_loss(q, c, 0.01, 0.1), 1e-9);
  }
}

TEST(ContrastiveLossTest, SingleItemIsZeroAndMaskingApplies) {
  ContrastiveBatch one{{ev({1, 2})}, {ev({3, -1})}};
  EXPECT_EQ(contrastive_loss(one), 0.0);

  // Query 0 prefers candidate 1 (cos 1) over its positive (cos 0): masked.
  ContrastiveBatch masked{{ev({1, 0}), ev({0, 1})}, {ev({0, 1}), ev({1, 0})}};
  const double l = contrastive_loss(masked);
  EXPECT_NEAR(l, 0.0, 1e-12);
  masked.margin = 1.5;
  EXPECT_NEAR(contrastive_loss(masked), 100.0, 1e-9);

  ContrastiveBatch bad = one;
  bad.temperature = 0.0;
  EXPECT_THROW(contrastive_loss(bad), InvalidTemperature);
  bad = one;
  bad.positives.clear();
  EXPECT_THROW(contrastive_loss(bad), Error);
}

TEST(EmbeddingProviderTest, MockIsDeterministicUnitNorm) {
  MockEmbeddingProvider a(16, 7), b(16, 7), c(16, 8);
  const std::string texts[] = {"alpha", "beta"};
  const auto va = embed(a, texts), vb = embed(b, texts), vc = embed(c, texts);
  EXPECT_EQ(va[0].values, vb[0].values);
  EXPECT_NE(va[0].values, vc[0].values);
  EXPECT_NE(va[0].values, va[1].values);
  EXPECT_NEAR(detail::norm(va[0].values), 1.0, 1e-12);
}

TEST(EmbeddingProviderTest, ContractViolationsDetected) {
  struct Short : EmbeddingProvider {
    std::size_t dimension() const override { return 3; }
    std::vector<EmbeddingVector> embed_batch(std::span<const std::string>) override { return {ev({1, 2})}; }
  } p;
  const std::string one[] = {"x"};
  const std::string two[] = {"x", "y"};
  EXPECT_THROW(embed(p, one), ProviderContractViolation);
  EXPECT_THROW(embed(p, two), ProviderContractViolation);
}

TEST(EmbeddingProviderTest, FixtureTableOverridesAndCounts) {
  FixtureEmbeddingProvider p(2, {{"known", ev({0.6, 0.8})}});
  const std::string texts[] = {"known", "other"};
  const auto out = embed(p, texts);
  EXPECT_EQ(out[0].values, (std::vector<double>{0.6, 0.8}));
  EXPECT_EQ(out[1].dimension(), 2u);
  EXPECT_EQ(p.calls(), 1u);
}

TEST(BuildIndexTest, KeysOnWhenToApply) {
  StrategyBank bank;
  Strategy s;
  s.id = "x";
  s.when_to_apply = "key text";
  bank.strategies = {s};
  FixtureEmbeddingProvider p(2, {{"key text", ev({1, 0})}});
  const auto index = build_strategy_index(bank, p);
  EXPECT_EQ(index.size(), 1u);
  EXPECT_EQ(index.vector_at(0).values, (std::vector<double>{1, 0}));
}
