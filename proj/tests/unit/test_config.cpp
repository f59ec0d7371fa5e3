#include <gtest/gtest.h>

#include "lean_refactor/config.hpp"
#include "test_support.hpp"

using namespace lean_refactor;

TEST(RunConfigTest, LoadsGoldenConfigWithAbsolutePaths) {
  const auto c = RunConfig::load(lr_test::data_path("agent_golden/config.json"));
  const auto base = std::filesystem::absolute(lr_test::data_path("agent_golden")).lexically_normal();
  EXPECT_EQ(c.path_of("toolchains"), base / "toolchains.json");
  EXPECT_EQ(c.raw["llm"]["script"], (base / "llm.json").string());
  EXPECT_EQ(c.registry().native(), "v4.9.0");

  const auto a = c.agent();
  EXPECT_EQ(a.budget, 30);
  EXPECT_EQ(a.target_length, 5u);
  EXPECT_EQ(a.max_debug_rounds, 3);
  EXPECT_EQ(a.objective.k, 3u);
  EXPECT_EQ(a.objective.mode, ObjectiveMode::length);
  EXPECT_EQ(a.chunk_sizes, (std::vector<int>{5, 10, 20}));
  EXPECT_EQ(c.make_embedder()->dimension(), 16u);
  EXPECT_NE(c.make_llm(), nullptr);
  EXPECT_NE(c.make_compiler_backend(), nullptr);
}

TEST(RunConfigTest, SectionsMergeOverDefaults) {
  lr_test::TempDir dir;
  lr_test::write_text(dir / "c.json", R"({"schema_version": 1, "agent": {"budget": 7},
    "pipeline": {"dedup_candidates": 3}, "objective": "compile-time,version:v4.15.0", "pool": 20, "k": 4})");
  const auto c = RunConfig::load(dir / "c.json");
  const auto a = c.agent();
  EXPECT_EQ(a.budget, 7);
  EXPECT_EQ(a.max_debug_rounds, 3);
  EXPECT_EQ(a.objective.mode, ObjectiveMode::version);
  EXPECT_TRUE(a.objective.rerank_compile_time);
  EXPECT_EQ(a.objective.target_version, "v4.15.0");
  EXPECT_EQ(a.objective.pool_size, 20u);
  const auto p = c.pipeline();
  EXPECT_EQ(p.dedup_candidates, 3u);
  EXPECT_DOUBLE_EQ(p.dedup_shortcut_threshold, 0.9);
  EXPECT_DOUBLE_EQ(p.decontamination_threshold, 0.8);
  EXPECT_EQ(c.registry().native(), "native");
  EXPECT_EQ(c.jobs(), 1u);
}

TEST(RunConfigTest, RejectsBadFiles) {
  lr_test::TempDir dir;
  EXPECT_THROW(RunConfig::load(dir / "missing.json"), ConfigError);
  lr_test::write_text(dir / "a.json", "[1]");
  EXPECT_THROW(RunConfig::load(dir / "a.json"), ConfigError);
  lr_test::write_text(dir / "b.json", R"({"schema_version": 2})");
  EXPECT_THROW(RunConfig::load(dir / "b.json"), ConfigError);
  lr_test::write_text(dir / "c.json", "{not json");
  EXPECT_THROW(RunConfig::load(dir / "c.json"), ConfigError);
}

TEST(RunConfigTest, RejectsBadSettings) {
  auto c = RunConfig::defaults();
  c.set_agent("budget", -1);
  EXPECT_THROW(c.agent(), ConfigError);
  c = RunConfig::defaults();
  c.set_agent("chunk_sizes", nlohmann::ordered_json::array({5, 0}));
  EXPECT_THROW(c.agent(), ConfigError);
  c = RunConfig::defaults();
  c.set_agent("budget", "many");
  EXPECT_THROW(c.agent(), ConfigError);
  c = RunConfig::defaults();
  c.set("objective", "length,compile-time");
  EXPECT_THROW(c.agent(), ConfigError);
  c = RunConfig::defaults();
  c.set("k", 60);
  EXPECT_THROW(c.agent(), ConfigError);
  c = RunConfig::defaults();
  c.raw["pipeline"]["profile_runs"] = 0;
  EXPECT_THROW(c.pipeline(), ConfigError);
  c = RunConfig::defaults();
  EXPECT_THROW(c.path_of("bank"), ConfigError);
}

TEST(RunConfigTest, ProviderSelection) {
  auto c = RunConfig::defaults();
  EXPECT_THROW(c.make_llm(), ConfigError);  // mock without a script
  c.set("llm", {{"provider", "carrier-pigeon"}});
  EXPECT_THROW(c.make_llm(), ConfigError);
  c.set("llm", {{"provider", "openai"}, {"base_url", "http://h"}, {"model", "m"}, {"api_key", "inline"}});
  EXPECT_THROW(c.make_llm(), ConfigError);
  ::unsetenv("LR_TEST_UNSET_KEY");
  c.set("llm", {{"provider", "openai"}, {"base_url", "http://h"}, {"model", "m"}, {"api_key_env", "LR_TEST_UNSET_KEY"}});
  EXPECT_THROW(c.make_llm(), ConfigError);
  c.set("llm", {{"provider", "openai"}, {"base_url", "http://h"}, {"model", "m"}});
  EXPECT_NE(c.make_llm(), nullptr);

  c.set("embedding", {{"provider", "openai"}, {"base_url", "http://h"}, {"model", "m"}});
  EXPECT_THROW(c.make_embedder(), ConfigError);
  c.set("embedding", {{"provider", "unknown"}});
  EXPECT_THROW(c.make_embedder(), ConfigError);
  c.set("compiler", {{"provider", "mock"}});
  EXPECT_THROW(c.make_compiler_backend(), ConfigError);
  c.set("compiler", {{"provider", "gcc"}});
  EXPECT_THROW(c.make_compiler_backend(), ConfigError);
}

TEST(RunConfigTest, FixtureEmbeddingsFallBackToMock) {
  lr_test::TempDir dir;
  lr_test::write_text(dir / "v.json", R"({"dimension": 2, "vectors": {"a": [1, 0]}})");
  lr_test::write_text(dir / "c.json", R"({"schema_version": 1, "embedding": {"provider": "fixture", "path": "v.json"}})");
  const auto e = RunConfig::load(dir / "c.json").make_embedder();
  const std::vector<std::string> texts{"a", "b"};
  const auto out = e->embed_batch(texts);
  EXPECT_EQ(out[0].values, (std::vector<double>{1, 0}));
  EXPECT_EQ(out[1].values.size(), 2u);
}
