#pragma once

// Run configuration for the command-line driver. The file is JSON with a
// "schema_version"; relative paths resolve against the file's directory.
//
//   {
//     "schema_version": 1,
//     "bank": "bank/",
//     "toolchains": "toolchains.json",
//     "prompts": "prompts/",                         (optional override)
//     "llm":       {"provider": "mock", "script": "llm.json"}
//                | {"provider": "openai", "base_url", "model", "api_key_env", ...},
//     "embedding": {"provider": "mock", "dimension": 64}
//                | {"provider": "fixture", "path": "vectors.json"}
//                | {"provider": "openai", "base_url", "model", "dimension", ...},
//     "compiler":  {"provider": "lean", "lake_command": "lake"}
//                | {"provider": "mock", "script": "compiler.json"},
//     "agent": {"budget", "target_length", "max_debug_rounds", "chunk_sizes",
//               "preamble", "compile_timeout", "temperature", "toolchain"},
//     "objective": "length", "k": 8, "pool": 50,
//     "pipeline": {"decontamination_threshold", "dedup_shortcut_threshold",
//                  "dedup_candidates", "routing_threshold", "profile_runs"},
//     "max_concurrent_compiles": 4,
//     "seed": 0,
//     "jobs": 1
//   }

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "lean_refactor/agent.hpp"
#include "lean_refactor/bank_pipeline.hpp"
#include "lean_refactor/compiler_interface.hpp"
#include "lean_refactor/http_providers.hpp"
#include "lean_refactor/llm.hpp"
#include "lean_refactor/prompts.hpp"
#include "lean_refactor/retrieval.hpp"
#include "lean_refactor/strategy_bank.hpp"

namespace lean_refactor {

inline constexpr int kRunConfigSchemaVersion = 1;

struct RunConfig {
  nlohmann::ordered_json raw = nlohmann::ordered_json::object();  // effective config, paths absolute
  std::filesystem::path base_dir;

  static RunConfig defaults() {
    RunConfig c;
    c.raw = {{"schema_version", kRunConfigSchemaVersion},
             {"llm", {{"provider", "mock"}}},
             {"embedding", {{"provider", "mock"}, {"dimension", 64}}},
             {"compiler", {{"provider", "lean"}, {"lake_command", "lake"}}},
             {"agent", nlohmann::ordered_json::object()},
             {"objective", "length"},
             {"k", 8},
             {"pool", 50},
             {"pipeline", nlohmann::ordered_json::object()},
             {"max_concurrent_compiles", 4},
             {"seed", 0},
             {"jobs", 1}};
    c.base_dir = std::filesystem::current_path();
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    auto j = nlohmann::ordered_json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config " + path.string() + " is not a JSON object");
    if (j.value("schema_version", 0) != kRunConfigSchemaVersion) {
      throw ConfigError("config " + path.string() + ": schema_version must be " +
                        std::to_string(kRunConfigSchemaVersion));
    }
    RunConfig c = defaults();
    c.base_dir = std::filesystem::absolute(path).parent_path();
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.value().is_object() && c.raw.contains(it.key()) && c.raw[it.key()].is_object() &&
          it.key() != "llm" && it.key() != "embedding" && it.key() != "compiler") {
        for (auto inner = it.value().begin(); inner != it.value().end(); ++inner) {
          c.raw[it.key()][inner.key()] = inner.value();
        }
      } else {
        c.raw[it.key()] = it.value();
      }
    }
    c.absolutize();
    return c;
  }

  void set(const std::string& key, nlohmann::ordered_json value) { raw[key] = std::move(value); }
  void set_agent(const std::string& key, nlohmann::ordered_json value) { raw["agent"][key] = std::move(value); }

  std::filesystem::path path_of(const std::string& key) const {
    if (!raw.contains(key) || !raw[key].is_string()) throw ConfigError("config needs '" + key + "'");
    return raw[key].get<std::string>();
  }

  std::optional<std::filesystem::path> optional_path(const std::string& key) const {
    if (!raw.contains(key) || raw[key].is_null()) return std::nullopt;
    return path_of(key);
  }

  std::uint64_t seed() const { return raw.value("seed", std::uint64_t{0}); }
  std::size_t jobs() const { return std::max<std::size_t>(1, raw.value("jobs", std::size_t{1})); }

  ToolchainRegistry registry() const {
    if (!raw.contains("toolchains")) {
      return ToolchainRegistry({{raw.value("native_version", std::string("native")), {}}});
    }
    return ToolchainRegistry::load(path_of("toolchains"));
  }

  PromptLibrary prompts() const {
    if (auto p = optional_path("prompts")) return PromptLibrary::from_directory(*p);
    return PromptLibrary{};
  }

  ObjectiveSpec objective() const {
    try {
      return ObjectiveSpec::parse(raw.value("objective", std::string("length")), raw.value("pool", std::size_t{50}),
                                  raw.value("k", std::size_t{8}));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("objective settings: ") + e.what());
    }
  }

  AgentConfig agent() const {
    AgentConfig a;
    const auto& j = raw["agent"];
    try {
      a.budget = j.value("budget", a.budget);
      a.target_length = j.value("target_length", a.target_length);
      a.max_debug_rounds = j.value("max_debug_rounds", a.max_debug_rounds);
      if (j.contains("chunk_sizes")) a.chunk_sizes = j["chunk_sizes"].get<std::vector<int>>();
      a.preamble = j.value("preamble", a.preamble);
      a.compile_timeout = j.value("compile_timeout", a.compile_timeout);
      a.sampling.temperature = j.value("temperature", a.sampling.temperature);
      if (j.contains("max_tokens")) a.sampling.max_tokens = j["max_tokens"].get<int>();
      a.toolchain_version = j.value("toolchain", std::string{});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("agent settings: ") + e.what());
    }
    a.objective = objective();
    a.validate();
    return a;
  }

  PipelineSettings pipeline() const {
    PipelineSettings p;
    const auto& j = raw["pipeline"];
    try {
      p.decontamination_threshold = j.value("decontamination_threshold", p.decontamination_threshold);
      p.dedup_shortcut_threshold = j.value("dedup_shortcut_threshold", p.dedup_shortcut_threshold);
      p.dedup_candidates = j.value("dedup_candidates", p.dedup_candidates);
      p.routing_threshold = j.value("routing_threshold", p.routing_threshold);
      p.profile_runs = j.value("profile_runs", p.profile_runs);
      p.compile_timeout = raw["agent"].value("compile_timeout", p.compile_timeout);
      p.preamble = raw["agent"].value("preamble", p.preamble);
      p.sampling.temperature = j.value("temperature", p.sampling.temperature);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("pipeline settings: ") + e.what());
    }
    if (p.dedup_candidates == 0) throw ConfigError("pipeline: dedup_candidates must be positive");
    if (p.profile_runs < 1) throw ConfigError("pipeline: profile_runs must be >= 1");
    return p;
  }

  std::unique_ptr<ChatModel> make_llm() const {
    const auto& j = raw["llm"];
    const std::string provider = j.value("provider", std::string("mock"));
    if (provider == "mock") {
      if (!j.contains("script")) throw ConfigError("mock llm needs a 'script'");
      return std::make_unique<ScriptedChatModel>(read_json(j["script"].get<std::string>()));
    }
    if (provider == "openai") {
      return std::make_unique<HttpChatModel>(HttpEndpoint::from_json(j, "/v1/chat/completions"));
    }
    throw ConfigError("unknown llm provider '" + provider + "'");
  }

  std::unique_ptr<EmbeddingProvider> make_embedder() const {
    const auto& j = raw["embedding"];
    const std::string provider = j.value("provider", std::string("mock"));
    if (provider == "mock") {
      return std::make_unique<MockEmbeddingProvider>(j.value("dimension", std::size_t{64}), seed());
    }
    if (provider == "fixture") {
      std::ifstream in(j.at("path").get<std::string>());
      if (!in) throw ConfigError("cannot open embedding fixture " + j.at("path").get<std::string>());
      const auto f = nlohmann::json::parse(in);
      std::map<std::string, EmbeddingVector> vectors;
      for (const auto& [text, v] : f.at("vectors").items()) vectors[text] = {v.get<std::vector<double>>()};
      return std::make_unique<FixtureEmbeddingProvider>(f.at("dimension").get<std::size_t>(), std::move(vectors),
                                                        seed());
    }
    if (provider == "openai") {
      if (!j.contains("dimension")) throw ConfigError("openai embedding needs a 'dimension'");
      return std::make_unique<HttpEmbeddingProvider>(HttpEndpoint::from_json(j, "/v1/embeddings"),
                                                     j["dimension"].get<std::size_t>(),
                                                     j.value("batch_size", std::size_t{64}));
    }
    throw ConfigError("unknown embedding provider '" + provider + "'");
  }

  std::shared_ptr<CompilerBackend> make_compiler_backend() const {
    const auto& j = raw["compiler"];
    const std::string provider = j.value("provider", std::string("lean"));
    if (provider == "mock") {
      if (!j.contains("script")) throw ConfigError("mock compiler needs a 'script'");
      return std::make_shared<MockCompiler>(read_json(j["script"].get<std::string>()));
    }
    if (provider == "lean") {
      LeanCompiler::Options o;
      o.lake_command = j.value("lake_command", o.lake_command);
      o.keep_scratch = j.value("keep_scratch", o.keep_scratch);
      return std::make_shared<LeanCompiler>(registry(), o);
    }
    throw ConfigError("unknown compiler provider '" + provider + "'");
  }

 private:
  static nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + " is not valid JSON");
    return j;
  }

  void absolutize() {
    auto fix = [&](nlohmann::ordered_json& node, const char* key) {
      if (!node.contains(key) || !node[key].is_string()) return;
      std::filesystem::path p = node[key].get<std::string>();
      if (p.is_relative()) node[key] = (base_dir / p).lexically_normal().string();
    };
    for (const char* k : {"bank", "toolchains", "prompts"}) fix(raw, k);
    fix(raw["llm"], "script");
    fix(raw["embedding"], "path");
    fix(raw["compiler"], "script");
  }
};

}  // namespace lean_refactor
