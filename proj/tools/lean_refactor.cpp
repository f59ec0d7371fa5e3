// lean-refactor: command-line driver.
//
// Exit codes: 0 success, 1 domain failure, 2 usage or configuration error.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "lean_refactor/agent.hpp"
#include "lean_refactor/bank_build.hpp"
#include "lean_refactor/bank_pipeline.hpp"
#include "lean_refactor/config.hpp"
#include "lean_refactor/lean_tokenizer.hpp"
#include "lean_refactor/metrics.hpp"
#include "lean_refactor/retrieval.hpp"
#include "lean_refactor/strategy_bank.hpp"

namespace fs = std::filesystem;
using namespace lean_refactor;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::string> bank;
  std::optional<std::string> toolchains;
  std::optional<std::string> objective;
  std::optional<std::size_t> k;
  std::optional<std::size_t> pool;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "Run configuration file (JSON)");
  app->add_option("--bank", f.bank, "Strategy bank directory");
  app->add_option("--toolchains", f.toolchains, "Toolchain registry file");
  app->add_option("--seed", f.seed, "Seed for every random choice");
  app->add_option("--jobs", f.jobs, "Parallel workers");
}

void add_objective(CLI::App* app, CommonFlags& f) {
  app->add_option("--objective", f.objective, "length | compile-time | version:<id> | compile-time,version:<id>");
  app->add_option("--k", f.k, "Strategies passed to the planner (default 8)");
  app->add_option("--pool", f.pool, "Candidate pool for rerank/filter (default 50)");
}

RunConfig effective_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig::defaults() : RunConfig::load(f.config);
  auto abs = [](const std::string& p) { return fs::absolute(p).lexically_normal().string(); };
  if (f.bank) c.set("bank", abs(*f.bank));
  if (f.toolchains) c.set("toolchains", abs(*f.toolchains));
  if (f.objective) c.set("objective", *f.objective);
  if (f.k) c.set("k", *f.k);
  if (f.pool) c.set("pool", *f.pool);
  if (f.seed) c.set("seed", *f.seed);
  if (f.jobs) c.set("jobs", *f.jobs);
  return c;
}

std::string slurp(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  detail::replace_file(p, content);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

StrategyBank open_bank(const RunConfig& c) { return load_bank(c.path_of("bank"), c.registry()); }

// ---------------------------------------------------------------------------
// refactor

struct Theorem {
  std::string id;
  SessionInput input;
  std::string preamble;  // file header above the declaration
};

std::vector<Theorem> read_theorems(const std::vector<std::string>& paths) {
  std::vector<Theorem> out;
  for (const auto& p : paths) {
    const std::string text = slurp(p);
    if (fs::path(p).extension() == ".jsonl") {
      std::size_t n = 0;
      std::istringstream in(text);
      std::string line;
      while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("proof")) {
          throw SchemaError("proof", n, p + ": records need 'id' and 'proof'");
        }
        out.push_back({j["id"].get<std::string>(),
                       {j["proof"].get<std::string>(), j.value("dependencies", std::string{}),
                        j.value("signature", std::string{}), j.value("documentation", std::string{})},
                       j.value("preamble", std::string{})});
      }
      continue;
    }
    Theorem t;
    t.id = fs::path(p).stem().string();
    std::size_t cut = 0;
    try {
      const auto b = find_declaration(text);
      cut = text.rfind('\n', b.header_start);
      cut = cut == std::string::npos ? 0 : cut + 1;
    } catch (const MalformedDeclaration&) {
      cut = 0;
    }
    t.preamble = text.substr(0, cut);
    t.input.proof = text.substr(cut);
    out.push_back(std::move(t));
  }
  std::set<std::string> ids;
  for (const auto& t : out) {
    if (!ids.insert(t.id).second) throw ConfigError("duplicate theorem id '" + t.id + "'");
  }
  return out;
}

int cmd_refactor(const CommonFlags& f, const std::vector<std::string>& inputs, std::optional<int> budget,
                 std::optional<int> debug_rounds, std::optional<std::size_t> target_length,
                 std::optional<std::vector<int>> chunks, std::optional<std::string> toolchain,
                 const std::string& out_dir) {
  RunConfig c = effective_config(f);
  if (budget) c.set_agent("budget", *budget);
  if (debug_rounds) c.set_agent("max_debug_rounds", *debug_rounds);
  if (target_length) c.set_agent("target_length", *target_length);
  if (chunks) c.set_agent("chunk_sizes", *chunks);
  if (toolchain) c.set_agent("toolchain", *toolchain);
  const AgentConfig base = c.agent();
  const auto theorems = read_theorems(inputs);

  const StrategyBank bank = open_bank(c);
  auto embedder = c.make_embedder();
  auto llm = c.make_llm();
  CompilerService compiler(c.make_compiler_backend(), c.raw.value("max_concurrent_compiles", 4));
  const PromptLibrary prompts = c.prompts();
  const FlatIndex index = build_strategy_index(bank, *embedder);

  const fs::path run = fs::absolute(out_dir);
  fs::create_directories(run);
  write_file(run / "config.json", c.raw.dump(2) + "\n");

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::vector<int> codes(theorems.size(), kExitOk);
  std::vector<std::string> lines(theorems.size());
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= theorems.size()) return;
      const auto& t = theorems[i];
      AgentConfig cfg = base;
      cfg.preamble = base.preamble + t.preamble;
      const fs::path dir = run / t.id;
      try {
        RefactorAgent agent(cfg, bank, index, *embedder, *llm, compiler, prompts);
        const auto r = agent.run(t.input);
        nlohmann::ordered_json result{{"theorem_id", t.id}, {"status", "ok"}};
        result.update(r.to_json());
        write_file(dir / "result.json", result.dump(2) + "\n");
        write_file(dir / "trace.json", r.trace.to_json().dump(2) + "\n");
        lines[i] = t.id + ": " + std::to_string(r.initial_length) + " -> " + std::to_string(r.final_length) +
                   " tokens (" + fixed(100.0 * r.reduction(), 2) + "%), " + std::string(to_string(r.termination)) +
                   ", " + std::to_string(r.calls_used) + " calls";
      } catch (const PreconditionFailed& e) {
        nlohmann::ordered_json result{{"theorem_id", t.id}, {"status", "precondition_failed"}, {"error", e.what()}};
        write_file(dir / "result.json", result.dump(2) + "\n");
        lines[i] = t.id + ": precondition failed: " + e.what();
        codes[i] = kExitDomain;
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        nlohmann::ordered_json result{{"theorem_id", t.id}, {"status", "error"}, {"error", e.what()}};
        write_file(dir / "result.json", result.dump(2) + "\n");
        lines[i] = t.id + ": error: " + e.what();
        codes[i] = kExitDomain;
      }
    }
  };
  const std::size_t jobs = std::min(c.jobs(), std::max<std::size_t>(1, theorems.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) {
      pool.emplace_back([&, j] {
        try {
          worker();
        } catch (...) {
          std::lock_guard lock(mu);
          errors[j] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << "run directory: " << run.string() << "\n";
  for (int code : codes) {
    if (code != kExitOk) return code;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// retrieve

int cmd_retrieve(const CommonFlags& f, const std::string& query) {
  const RunConfig c = effective_config(f);
  const ObjectiveSpec objective = c.objective();
  const StrategyBank bank = open_bank(c);
  if (bank.strategies.empty()) {
    std::cerr << "error: the strategy bank is empty\n";
    return kExitDomain;
  }
  auto embedder = c.make_embedder();
  const FlatIndex index = build_strategy_index(bank, *embedder);
  const auto rows = retrieve(index, bank, embed_one(*embedder, query), objective);
  std::cout << "objective: " << to_string(objective.mode);
  if (objective.target_version) std::cout << " (target " << *objective.target_version << ")";
  if (objective.reranks()) std::cout << " [compile-time rerank]";
  std::cout << "\n";
  for (const auto& r : rows) {
    const Strategy* s = bank.find_strategy(r.strategy_id);
    std::string compat;
    for (const auto& v : s->compatibility_set) compat += (compat.empty() ? "" : ",") + v;
    std::cout << r.rank << "\t" << r.strategy_id << "\t" << fixed(r.similarity) << "\t"
              << (s->median_compile_reduction ? fixed(*s->median_compile_reduction) : std::string("-")) << "\t"
              << (compat.empty() ? "-" : compat) << "\t" << s->title << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// tokenize

int cmd_tokenize(const std::vector<std::string>& files, bool show_lines) {
  int code = kExitOk;
  for (const auto& p : files.empty() ? std::vector<std::string>{"-"} : files) {
    const std::string text = slurp(p);
    const std::size_t len = proof_length(text);
    std::cout << (files.size() > 1 ? p + "\t" : std::string{}) << len << "\n";
    if (len == kProofLengthSentinel) code = kExitDomain;
    if (show_lines && len != kProofLengthSentinel) {
      const auto tp = lex(proof_slice(text));
      for (const auto& line : tp.lines) {
        std::string joined;
        for (const auto& tok : line) joined += (joined.empty() ? "" : " ") + tok;
        std::cout << "  " << TokenizedProof::line_weight(line) << "\t" << joined << "\n";
      }
    }
  }
  return code;
}

// ---------------------------------------------------------------------------
// bank

int cmd_bank_build(const CommonFlags& f, const std::string& stage, const std::string& workdir) {
  const RunConfig c = effective_config(f);
  auto embedder = c.make_embedder();
  auto llm = c.make_llm();
  CompilerService compiler(c.make_compiler_backend(), c.raw.value("max_concurrent_compiles", 4));
  const PromptLibrary prompts = c.prompts();
  BankBuilder builder(workdir, c.registry(), c.pipeline(), {embedder.get(), llm.get(), &compiler, &prompts},
                      stage == "annotate" ? 1 : c.jobs());
  std::vector<StageReport> reports;
  if (stage == "all") {
    reports = builder.run_all();
  } else {
    reports.push_back(builder.run(stage));
  }
  bool partial = false;
  for (const auto& r : reports) {
    std::cout << r.stage << ": " << (r.up_to_date ? "up to date" : r.status.status) << ", items " << r.status.items
              << ", kept " << r.status.kept << ", dropped " << r.status.dropped << ", quarantined "
              << r.status.quarantined;
    if (r.stage == "dedup" && !r.up_to_date) std::cout << ", changes " << r.changes;
    std::cout << "\n";
    for (const auto& w : r.warnings) std::cerr << "  warning: " << w << "\n";
    partial = partial || r.status.status == "partial";
  }
  return partial ? kExitDomain : kExitOk;
}

int cmd_bank_dedup(const CommonFlags& f, const std::string& input) {
  const RunConfig c = effective_config(f);
  std::vector<RawExtraction> stream;
  for (const auto& rec : detail::read_json_lines(input)) stream.push_back(extraction_from_record(rec));
  auto embedder = c.make_embedder();
  auto llm = c.make_llm();
  const PromptLibrary prompts = c.prompts();
  Judge judge(*llm, prompts, c.pipeline().sampling);
  const auto stats = dedup_bank_dir(c.path_of("bank"), c.registry(), stream, *embedder, judge, c.pipeline());
  std::cout << "processed " << stats.processed << ", new " << stats.new_entries << ", shortcut "
            << stats.shortcut_duplicates << ", judged " << stats.judge_duplicates << ", already assigned "
            << stats.already_assigned << ", quarantined " << stats.quarantined << "\n";
  std::cout << "changes: " << stats.changes() << "\n";
  return stats.quarantined == 0 ? kExitOk : kExitDomain;
}

int cmd_bank_annotate(const CommonFlags& f) {
  const RunConfig c = effective_config(f);
  StrategyBank bank = open_bank(c);
  CompilerService compiler(c.make_compiler_backend(), 1);
  const auto settings = c.pipeline();
  std::size_t warnings = 0;
  for (auto& p : bank.pairs) {
    auto a = annotate_pair(p, compiler, bank.registry, settings);
    for (const auto& w : a.warnings) std::cerr << "warning: " << w << "\n";
    warnings += a.warnings.size();
    p = std::move(a.pair);
  }
  bank = rebuild_metadata(std::move(bank));
  save_bank(bank, c.path_of("bank"));
  std::cout << "annotated " << bank.pairs.size() << " pairs, " << warnings << " warnings\n";
  return kExitOk;
}

int cmd_bank_stats(const CommonFlags& f) {
  const RunConfig c = effective_config(f);
  const StrategyBank bank = open_bank(c);
  std::size_t clusters = 0, members = 0, with_reduction = 0, with_compat = 0, grounded = 0;
  for (const auto& s : bank.strategies) {
    if (!s.member_pair_ids.empty()) ++clusters;
    members += s.member_pair_ids.size();
    if (s.median_compile_reduction) ++with_reduction;
    if (!s.compatibility_set.empty()) ++with_compat;
  }
  for (const auto& p : bank.pairs) grounded += p.grounded_spans.size();
  const double n = static_cast<double>(std::max<std::size_t>(1, bank.strategies.size()));
  std::cout << "strategies: " << bank.strategies.size() << "\n"
            << "pairs: " << bank.pairs.size() << "\n"
            << "clusters: " << clusters << "\n"
            << "cluster members: " << members << "\n"
            << "grounded spans: " << grounded << "\n"
            << "with compile reduction: " << with_reduction << " (" << fixed(100.0 * with_reduction / n, 1) << "%)\n"
            << "with compatibility set: " << with_compat << " (" << fixed(100.0 * with_compat / n, 1) << "%)\n";
  return kExitOk;
}

int cmd_bank_recheck(const CommonFlags& f) {
  const RunConfig c = effective_config(f);
  const auto found = recheck(open_bank(c));
  for (const auto& d : found) {
    std::cout << d.strategy_id << "\t" << d.field << "\tstored " << d.stored << "\trecomputed " << d.recomputed << "\n";
  }
  std::cout << found.size() << " discrepancies\n";
  return found.empty() ? kExitOk : kExitDomain;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& run_dir, const std::string& records_path, const std::string& out_dir) {
  std::map<std::string, EvalRecord> records;
  if (!run_dir.empty()) {
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      const auto result = entry.path() / "result.json";
      if (!entry.is_directory() || !fs::exists(result)) continue;
      const auto j = nlohmann::json::parse(slurp(result.string()));
      if (j.value("status", std::string{}) != "ok") continue;
      EvalRecord r;
      r.theorem_id = j.at("theorem_id").get<std::string>();
      r.initial_length = j.at("initial_length").get<std::size_t>();
      r.final_length = j.at("final_length").get<std::size_t>();
      records[r.theorem_id] = std::move(r);
    }
  }
  if (!records_path.empty()) {
    for (const auto& j : detail::read_json_lines(records_path)) {
      EvalRecord extra = eval_record_from_json(j);
      auto it = records.find(extra.theorem_id);
      if (it == records.end()) {
        records[extra.theorem_id] = std::move(extra);
        continue;
      }
      extra.initial_length = it->second.initial_length;
      extra.final_length = it->second.final_length;
      it->second = std::move(extra);
    }
  }
  if (records.empty()) {
    std::cerr << "error: no evaluation records found\n";
    return kExitDomain;
  }
  std::vector<EvalRecord> list;
  for (auto& [_, r] : records) list.push_back(std::move(r));
  const auto report = summarize(list);
  const std::string table = render_table(report);
  std::cout << table;
  const fs::path out = out_dir.empty() ? (run_dir.empty() ? fs::current_path() : fs::path(run_dir)) : fs::path(out_dir);
  write_file(out / "report.json", to_json(report).dump(2) + "\n");
  write_file(out / "report.txt", table);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented refactoring of Lean 4 proofs"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* refactor = app.add_subcommand("refactor", "Shorten proofs with the planner/refactorer/debugger loop");
  add_common(refactor, flags);
  add_objective(refactor, flags);
  std::vector<std::string> inputs;
  std::optional<int> budget, debug_rounds;
  std::optional<std::size_t> target_length;
  std::optional<std::vector<int>> chunks;
  std::optional<std::string> toolchain;
  std::string out_dir = "runs/latest";
  refactor->add_option("inputs", inputs, ".lean files (one theorem each) or .jsonl records")->required();
  refactor->add_option("--budget", budget, "LLM call budget per theorem (default 30)");
  refactor->add_option("--debug-rounds", debug_rounds, "Repair rounds per step (default 3)");
  refactor->add_option("--target-length", target_length, "Stop at this many tokens (default 5)");
  refactor->add_option("--chunks", chunks, "Segment sizes in lines (default 5,10,20)")->delimiter(',');
  refactor->add_option("--toolchain", toolchain, "Toolchain to compile under");
  refactor->add_option("--out", out_dir, "Run directory");

  auto* retrieve_cmd = app.add_subcommand("retrieve", "Rank bank strategies for a query");
  add_common(retrieve_cmd, flags);
  add_objective(retrieve_cmd, flags);
  std::string query;
  retrieve_cmd->add_option("query", query, "Query text")->required();

  auto* tokenize = app.add_subcommand("tokenize", "Print the proof length of declarations");
  std::vector<std::string> token_files;
  bool show_lines = false;
  tokenize->add_option("files", token_files, "Files to measure ('-' for stdin)");
  tokenize->add_flag("--lines", show_lines, "Show the tokens of every line");

  auto* bank = app.add_subcommand("bank", "Strategy bank construction and maintenance");
  bank->require_subcommand(1);
  auto* build = bank->add_subcommand("build", "Run construction stages");
  add_common(build, flags);
  std::string stage = "all", workdir;
  build->add_option("--stage", stage, "Stage name or 'all'")
      ->check(CLI::IsMember({"all", "decontaminate", "select", "pairs", "annotate", "distill", "filter", "dedup",
                             "metadata"}));
  build->add_option("--workdir", workdir, "Build work directory")->required();
  auto* dedup = bank->add_subcommand("dedup", "Deduplicate an extraction stream into the bank");
  add_common(dedup, flags);
  std::string dedup_input;
  dedup->add_option("--input", dedup_input, "Accepted extractions (.jsonl)")->required();
  auto* annotate = bank->add_subcommand("annotate", "Re-profile every pair and rebuild metadata");
  add_common(annotate, flags);
  auto* stats = bank->add_subcommand("stats", "Print bank counts and metadata coverage");
  add_common(stats, flags);
  auto* recheck_cmd = bank->add_subcommand("recheck", "Compare stored metadata with a recomputation");
  add_common(recheck_cmd, flags);

  auto* eval = app.add_subcommand("eval", "Summarize a run directory");
  std::string eval_run, eval_records, eval_out;
  eval->add_option("--run", eval_run, "Run directory written by 'refactor'");
  eval->add_option("--records", eval_records, "Evaluation records (.jsonl) with compile samples");
  eval->add_option("--out", eval_out, "Report directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*refactor) {
      return cmd_refactor(flags, inputs, budget, debug_rounds, target_length, chunks, toolchain, out_dir);
    }
    if (*retrieve_cmd) return cmd_retrieve(flags, query);
    if (*tokenize) return cmd_tokenize(token_files, show_lines);
    if (*build) return cmd_bank_build(flags, stage, workdir);
    if (*dedup) return cmd_bank_dedup(flags, dedup_input);
    if (*annotate) return cmd_bank_annotate(flags);
    if (*stats) return cmd_bank_stats(flags);
    if (*recheck_cmd) return cmd_bank_recheck(flags);
    if (*eval) {
      if (eval_run.empty() && eval_records.empty()) {
        std::cerr << "error: eval needs --run or --records\n";
        return kExitUsage;
      }
      return cmd_eval(eval_run, eval_records, eval_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UnknownVersion& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
