#pragma once

// Resumable stage driver for bank construction.
//
// Work directory layout:
//   input/theorems.jsonl         {"id", "statement", "candidates": [...],
//                                 "source_corpus", "dependencies"}
//   input/eval_statements.jsonl  {"statement"} per line (optional)
//   stages/<stage>.log.jsonl     per-item outcomes, appended as they finish
//   stages/<stage>.jsonl         stage output, in input order
//   quarantine/<stage>.jsonl     items whose judge or provider failed
//   bank/                        strategies.jsonl, pairs.jsonl,
//                                dedup_assignments.json
//   manifest.json                stage status and content hashes
//
// A stage is up to date when the manifest holds it as complete for the
// current input hash. Re-running a stage skips items already logged as ok or
// dropped and retries quarantined ones.

#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lean_refactor/bank_pipeline.hpp"
#include "lean_refactor/detail/hash.hpp"

namespace lean_refactor {

inline constexpr std::array<std::string_view, 8> kBuildStages{"decontaminate", "select",  "pairs", "annotate",
                                                              "distill",       "filter", "dedup", "metadata"};

inline constexpr std::string_view kDedupAssignmentsFile = "dedup_assignments.json";

struct StageStatus {
  std::string status;  // "complete" or "partial"
  std::string input_sha256;
  std::string output_sha256;
  std::size_t items = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::size_t quarantined = 0;
};

struct StageReport {
  std::string stage;
  bool up_to_date = false;
  StageStatus status;
  std::size_t processed = 0;  // items handled in this run
  std::size_t changes = 0;    // dedup only: new entries plus assignments
  std::vector<std::string> warnings;
};

struct BuildServices {
  EmbeddingProvider* embedder = nullptr;
  ChatModel* llm = nullptr;
  CompilerService* compiler = nullptr;
  const PromptLibrary* prompts = nullptr;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_sha256(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) return sha256_hex("");
  return sha256_hex(read_file(p));
}

inline std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& p, bool tolerate_torn_tail = false) {
  std::vector<nlohmann::json> out;
  if (!std::filesystem::exists(p)) return out;
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      // A crash mid-append leaves at most one torn final line.
      if (tolerate_torn_tail && in.peek() == std::char_traits<char>::eof()) break;
      throw SchemaError("line", n, "invalid JSON in " + p.string());
    }
    out.push_back(std::move(j));
  }
  return out;
}

inline std::string dump_lines(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + '\n';
  return out;
}

}  // namespace detail

class BankBuilder {
 public:
  BankBuilder(std::filesystem::path workdir, ToolchainRegistry registry, PipelineSettings settings,
              BuildServices services, std::size_t jobs = 1)
      : dir_(std::move(workdir)),
        registry_(std::move(registry)),
        settings_(std::move(settings)),
        svc_(services),
        jobs_(std::max<std::size_t>(1, jobs)) {
    load_manifest();
  }

  const std::filesystem::path& workdir() const noexcept { return dir_; }
  std::filesystem::path bank_dir() const { return dir_ / "bank"; }
  const std::map<std::string, StageStatus>& manifest() const noexcept { return manifest_; }

  StageReport run(std::string_view stage) {
    const auto it = std::find(kBuildStages.begin(), kBuildStages.end(), stage);
    if (it == kBuildStages.end()) throw ConfigError("unknown stage '" + std::string(stage) + "'");
    const std::string input_sha = input_hash(stage);
    if (auto m = manifest_.find(std::string(stage));
        m != manifest_.end() && m->second.status == "complete" && m->second.input_sha256 == input_sha) {
      StageReport r;
      r.stage = std::string(stage);
      r.up_to_date = true;
      r.status = m->second;
      return r;
    }
    StageReport r;
    if (stage == "decontaminate") r = stage_decontaminate();
    else if (stage == "select") r = stage_select();
    else if (stage == "pairs") r = stage_pairs();
    else if (stage == "annotate") r = stage_annotate();
    else if (stage == "distill") r = stage_distill();
    else if (stage == "filter") r = stage_filter();
    else if (stage == "dedup") r = stage_dedup();
    else r = stage_metadata();
    r.stage = std::string(stage);
    r.status.input_sha256 = input_sha;
    manifest_[r.stage] = r.status;
    save_manifest();
    return r;
  }

  std::vector<StageReport> run_all() {
    std::vector<StageReport> out;
    for (auto s : kBuildStages) out.push_back(run(s));
    return out;
  }

 private:
  // --- manifest ------------------------------------------------------------

  void load_manifest() {
    const auto path = dir_ / "manifest.json";
    if (!std::filesystem::exists(path)) return;
    auto j = nlohmann::json::parse(detail::read_file(path), nullptr, false);
    auto corrupt = [&](const std::string& why) { throw ConfigError("corrupt manifest " + path.string() + ": " + why); };
    if (j.is_discarded() || !j.is_object()) corrupt("not JSON");
    if (j.value("schema_version", 0) != 1) corrupt("unsupported schema_version");
    if (!j.contains("stages") || !j["stages"].is_object()) corrupt("missing stages");
    for (const auto& [name, v] : j["stages"].items()) {
      if (std::find(kBuildStages.begin(), kBuildStages.end(), name) == kBuildStages.end()) {
        corrupt("unknown stage '" + name + "'");
      }
      StageStatus s;
      try {
        s.status = v.at("status").get<std::string>();
        s.input_sha256 = v.at("input_sha256").get<std::string>();
        s.output_sha256 = v.at("output_sha256").get<std::string>();
        s.items = v.at("items").get<std::size_t>();
        s.kept = v.at("kept").get<std::size_t>();
        s.dropped = v.at("dropped").get<std::size_t>();
        s.quarantined = v.at("quarantined").get<std::size_t>();
      } catch (const nlohmann::json::exception& e) {
        corrupt("stage '" + name + "': " + e.what());
      }
      if (s.status != "complete" && s.status != "partial") corrupt("stage '" + name + "' has status " + s.status);
      if (output_hash(name) != s.output_sha256) corrupt("output of stage '" + name + "' changed outside the pipeline");
      manifest_[name] = s;
    }
  }

  void save_manifest() const {
    nlohmann::ordered_json stages = nlohmann::ordered_json::object();
    for (auto name : kBuildStages) {
      auto it = manifest_.find(std::string(name));
      if (it == manifest_.end()) continue;
      const auto& s = it->second;
      stages[std::string(name)] = {{"status", s.status},           {"input_sha256", s.input_sha256},
                                   {"output_sha256", s.output_sha256}, {"items", s.items},
                                   {"kept", s.kept},               {"dropped", s.dropped},
                                   {"quarantined", s.quarantined}};
    }
    nlohmann::ordered_json j{{"schema_version", 1}, {"stages", stages}};
    std::filesystem::create_directories(dir_);
    detail::replace_file(dir_ / "manifest.json", j.dump(2) + "\n");
  }

  std::filesystem::path stage_output(std::string_view stage) const {
    return dir_ / "stages" / (std::string(stage) + ".jsonl");
  }

  std::string output_hash(std::string_view stage) const {
    if (stage == "metadata") {
      const auto b = bank_dir();
      return detail::sha256_hex(detail::file_sha256(b / "strategies.jsonl") + detail::file_sha256(b / "pairs.jsonl") +
                                detail::file_sha256(b / kDedupAssignmentsFile));
    }
    return detail::file_sha256(stage_output(stage));
  }

  std::string input_hash(std::string_view stage) const {
    if (stage == "decontaminate") {
      return detail::sha256_hex(detail::file_sha256(dir_ / "input" / "theorems.jsonl") +
                                detail::file_sha256(dir_ / "input" / "eval_statements.jsonl"));
    }
    const auto it = std::find(kBuildStages.begin(), kBuildStages.end(), stage);
    const std::string prev(*(it - 1));
    if (!manifest_.contains(prev)) {
      throw ConfigError("stage '" + std::string(stage) + "' needs stage '" + prev + "' to run first");
    }
    std::string h = manifest_.at(prev).output_sha256;
    if (stage == "dedup") h += manifest_.contains("annotate") ? manifest_.at("annotate").output_sha256 : "";
    return detail::sha256_hex(h);
  }

  // --- generic per-item stage ----------------------------------------------

  struct ItemOutcome {
    std::string status;  // ok, dropped, quarantined
    std::vector<nlohmann::json> records;
    std::string note;
  };

  using ItemFn = std::function<ItemOutcome(const nlohmann::json&)>;

  StageReport run_items(std::string_view stage, const std::vector<std::pair<std::string, nlohmann::json>>& items,
                        const ItemFn& fn) {
    std::filesystem::create_directories(dir_ / "stages");
    std::filesystem::create_directories(dir_ / "quarantine");
    const auto log_path = dir_ / "stages" / (std::string(stage) + ".log.jsonl");

    std::map<std::string, ItemOutcome> done;
    for (const auto& e : detail::read_json_lines(log_path, true)) {
      ItemOutcome o{e.at("status").get<std::string>(), {}, e.value("note", std::string{})};
      for (const auto& r : e.at("records")) o.records.push_back(r);
      done[e.at("input_id").get<std::string>()] = std::move(o);
    }

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto it = done.find(items[i].first);
      if (it == done.end() || it->second.status == "quarantined") todo.push_back(i);
    }

    std::mutex mu;
    std::ofstream log(log_path, std::ios::app);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    auto worker = [&] {
      while (true) {
        const std::size_t t = next.fetch_add(1);
        if (t >= todo.size()) return;
        const auto& [id, payload] = items[todo[t]];
        ItemOutcome o;
        try {
          o = fn(payload);
        } catch (const JudgeUnavailable& e) {
          o = {"quarantined", {}, e.what()};
        } catch (const RetryableProviderError& e) {
          o = {"quarantined", {}, e.what()};
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          return;
        }
        nlohmann::json entry{{"input_id", id}, {"status", o.status}, {"records", o.records}, {"note", o.note}};
        std::lock_guard lock(mu);
        log << entry.dump() << '\n' << std::flush;
        done[id] = std::move(o);
      }
    };
    if (jobs_ == 1 || todo.size() < 2) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t j = 0; j < std::min(jobs_, todo.size()); ++j) pool.emplace_back(worker);
    }
    log.close();
    if (failure) std::rethrow_exception(failure);

    StageReport rep;
    rep.processed = todo.size();
    std::vector<nlohmann::json> output, quarantine;
    for (const auto& [id, _] : items) {
      const auto& o = done.at(id);
      if (o.status == "ok") {
        ++rep.status.kept;
        for (const auto& r : o.records) output.push_back(r);
      } else if (o.status == "dropped") {
        ++rep.status.dropped;
        if (!o.note.empty()) rep.warnings.push_back(id + ": " + o.note);
      } else {
        ++rep.status.quarantined;
        quarantine.push_back({{"input_id", id}, {"reason", o.note}});
      }
    }
    detail::replace_file(stage_output(stage), detail::dump_lines(output));
    detail::replace_file(dir_ / "quarantine" / (std::string(stage) + ".jsonl"), detail::dump_lines(quarantine));
    rep.status.items = items.size();
    rep.status.status = rep.status.quarantined == 0 ? "complete" : "partial";
    rep.status.output_sha256 = output_hash(stage);
    return rep;
  }

  std::vector<std::pair<std::string, nlohmann::json>> keyed(const std::vector<nlohmann::json>& records,
                                                            const std::function<std::string(const nlohmann::json&)>& key) {
    std::vector<std::pair<std::string, nlohmann::json>> out;
    for (const auto& r : records) out.emplace_back(key(r), r);
    return out;
  }

  void need(bool ok, const char* what) const {
    if (!ok) throw ConfigError(std::string("bank build: ") + what + " is not configured");
  }

  // --- stages --------------------------------------------------------------

  StageReport stage_decontaminate() {
    need(svc_.embedder && svc_.llm && svc_.prompts, "embedder/judge");
    const auto theorems = detail::read_json_lines(dir_ / "input" / "theorems.jsonl");
    if (!std::filesystem::exists(dir_ / "input" / "theorems.jsonl")) {
      throw ConfigError("missing " + (dir_ / "input" / "theorems.jsonl").string());
    }
    std::vector<std::string> eval;
    for (const auto& e : detail::read_json_lines(dir_ / "input" / "eval_statements.jsonl")) {
      eval.push_back(e.at("statement").get<std::string>());
    }
    const auto index = EvalStatementIndex::build(eval, *svc_.embedder);
    Judge judge(*svc_.llm, *svc_.prompts, settings_.sampling);
    for (std::size_t i = 0; i < theorems.size(); ++i) {
      const auto& t = theorems[i];
      if (!t.is_object() || !t.contains("id") || !t["id"].is_string()) throw SchemaError("id", i + 1, "missing");
      if (!t.contains("statement") || !t["statement"].is_string()) throw SchemaError("statement", i + 1, "missing");
    }
    return run_items("decontaminate", keyed(theorems, [](const auto& r) { return r["id"].template get<std::string>(); }),
                     [&](const nlohmann::json& t) -> ItemOutcome {
                       const auto v = decontaminate(t["statement"].get<std::string>(), index, *svc_.embedder, judge,
                                                    settings_.decontamination_threshold);
                       if (!v.kept()) return {"dropped", {}, std::string(to_string(v.outcome))};
                       auto rec = t;
                       rec["decontamination"] = std::string(to_string(v.outcome));
                       return {"ok", {rec}, {}};
                     });
  }

  StageReport stage_select() {
    need(svc_.compiler != nullptr, "compiler");
    const auto in = detail::read_json_lines(stage_output("decontaminate"));
    const std::string native = registry_.native();
    return run_items("select", keyed(in, [](const auto& r) { return r["id"].template get<std::string>(); }),
                     [&](const nlohmann::json& t) -> ItemOutcome {
                       std::vector<ProofCandidate> cands;
                       for (const auto& c : t.value("candidates", nlohmann::json::array())) {
                         const auto proof = c.get<std::string>();
                         const auto r = svc_.compiler->check(
                             {compile_source(settings_.preamble, proof), native, false, false, settings_.compile_timeout});
                         cands.push_back({proof, r.verdict});
                       }
                       try {
                         const auto& best = select_longest_valid(cands);
                         nlohmann::json rec{{"id", t["id"]},
                                            {"proof", best},
                                            {"source_corpus", t.value("source_corpus", std::string("other"))},
                                            {"dependencies", t.value("dependencies", std::string{})}};
                         return {"ok", {rec}, {}};
                       } catch (const NoValidProof& e) {
                         return {"dropped", {}, e.what()};
                       }
                     });
  }

  StageReport stage_pairs() {
    need(svc_.llm && svc_.prompts && svc_.compiler, "rewriter/compiler");
    const auto in = detail::read_json_lines(stage_output("select"));
    const std::string native = registry_.native();
    return run_items(
        "pairs", keyed(in, [](const auto& r) { return r["id"].template get<std::string>(); }),
        [&](const nlohmann::json& t) -> ItemOutcome {
          const auto corpus = parse_source_corpus(t["source_corpus"].get<std::string>());
          if (!corpus) return {"dropped", {}, "unknown source corpus"};
          const auto deps = t["dependencies"].get<std::string>();
          PairAttempt a;
          try {
            a = construct_pair(t["id"].get<std::string>(), t["proof"].get<std::string>(), *corpus, deps, *svc_.llm,
                               *svc_.prompts, *svc_.compiler, native, settings_);
          } catch (const RoutingError& e) {
            return {"dropped", {}, e.what()};
          }
          if (!a.pair) return {"dropped", {}, a.reason};
          a.pair->id = pair_content_id(*a.pair);
          return {"ok", {{{"pair", to_json(*a.pair)}, {"dependencies", deps}}}, {}};
        });
  }

  StageReport stage_annotate() {
    need(svc_.compiler != nullptr, "compiler");
    const auto in = detail::read_json_lines(stage_output("pairs"));
    std::mutex warn_mu;
    std::vector<std::string> warnings;
    auto rep = run_items("annotate", keyed(in, [](const auto& r) { return r["pair"]["id"].template get<std::string>(); }),
                         [&](const nlohmann::json& rec) -> ItemOutcome {
                           const auto pair = pair_from_json(rec["pair"], registry_);
                           auto a = annotate_pair(pair, *svc_.compiler, registry_, settings_);
                           {
                             std::lock_guard lock(warn_mu);
                             warnings.insert(warnings.end(), a.warnings.begin(), a.warnings.end());
                           }
                           return {"ok", {{{"pair", to_json(a.pair)}, {"dependencies", rec["dependencies"]}}}, {}};
                         });
    rep.warnings.insert(rep.warnings.end(), warnings.begin(), warnings.end());
    return rep;
  }

  StageReport stage_distill() {
    need(svc_.llm && svc_.prompts, "distiller");
    const auto in = detail::read_json_lines(stage_output("annotate"));
    return run_items("distill", keyed(in, [](const auto& r) { return r["pair"]["id"].template get<std::string>(); }),
                     [&](const nlohmann::json& rec) -> ItemOutcome {
                       const auto pair = pair_from_json(rec["pair"], registry_);
                       auto d = distill(pair, *svc_.llm, *svc_.prompts, rec["dependencies"].get<std::string>(),
                                        settings_.sampling);
                       ItemOutcome o{d.extractions.empty() ? "dropped" : "ok", {}, {}};
                       for (const auto& x : d.extractions) o.records.push_back(to_json(x));
                       for (const auto& w : d.warnings) o.note += (o.note.empty() ? "" : "; ") + w;
                       return o;
                     });
  }

  std::map<std::string, ProofPair> annotated_pairs() const {
    std::map<std::string, ProofPair> out;
    for (const auto& rec : detail::read_json_lines(stage_output("annotate"))) {
      auto p = pair_from_json(rec["pair"], registry_);
      out.emplace(p.id, std::move(p));
    }
    return out;
  }

  StageReport stage_filter() {
    need(svc_.llm && svc_.prompts, "judge");
    const auto in = detail::read_json_lines(stage_output("distill"));
    const auto pairs = annotated_pairs();
    Judge judge(*svc_.llm, *svc_.prompts, settings_.sampling);
    return run_items("filter", keyed(in, [](const auto& r) { return r["extraction_id"].template get<std::string>(); }),
                     [&](const nlohmann::json& rec) -> ItemOutcome {
                       const auto x = extraction_from_record(rec);
                       const auto it = pairs.find(x.pair_id);
                       if (it == pairs.end()) return {"dropped", {}, "pair " + x.pair_id + " not annotated"};
                       if (!judge_filter(x, it->second, judge)) return {"dropped", {}, {}};
                       return {"ok", {rec}, {}};
                     });
  }

  StageReport stage_dedup() {
    need(svc_.embedder && svc_.llm && svc_.prompts, "embedder/judge");
    std::vector<RawExtraction> stream;
    for (const auto& rec : detail::read_json_lines(stage_output("filter"))) stream.push_back(extraction_from_record(rec));

    StrategyBank bank = open_bank();
    for (auto& [id, p] : annotated_pairs()) {
      if (bank.find_pair(id) == nullptr) bank.pairs.push_back(p);
    }
    DedupAssignments assignments = load_assignments();
    Judge judge(*svc_.llm, *svc_.prompts, settings_.sampling);
    const auto stats = run_dedup(bank, assignments, stream, *svc_.embedder, judge, settings_);
    save_bank(bank, bank_dir());
    detail::replace_file(bank_dir() / kDedupAssignmentsFile, assignments.to_json().dump(2) + "\n");
    // Snapshot for the manifest; the metadata stage rewrites the bank files.
    std::vector<nlohmann::json> snapshot;
    for (const auto& s : bank.strategies) snapshot.push_back({{"strategy", nlohmann::json::parse(to_json(s).dump())}});
    for (const auto& p : bank.pairs) snapshot.push_back({{"pair", nlohmann::json::parse(to_json(p).dump())}});
    snapshot.push_back({{"assignments", nlohmann::json::parse(assignments.to_json().dump())}});
    std::filesystem::create_directories(dir_ / "stages");
    detail::replace_file(stage_output("dedup"), detail::dump_lines(snapshot));

    std::vector<nlohmann::json> quarantine;
    for (const auto& id : stats.quarantined_ids) quarantine.push_back({{"input_id", id}, {"reason", "judge unavailable"}});
    std::filesystem::create_directories(dir_ / "quarantine");
    detail::replace_file(dir_ / "quarantine" / "dedup.jsonl", detail::dump_lines(quarantine));

    StageReport rep;
    rep.processed = stats.processed;
    rep.changes = stats.changes();
    rep.status.items = stream.size();
    rep.status.kept = stream.size() - stats.quarantined;
    rep.status.quarantined = stats.quarantined;
    rep.status.status = stats.quarantined == 0 ? "complete" : "partial";
    rep.status.output_sha256 = output_hash("dedup");
    return rep;
  }

  StageReport stage_metadata() {
    StrategyBank bank = rebuild_metadata(open_bank());
    save_bank(bank, bank_dir());
    StageReport rep;
    rep.status.items = bank.strategies.size();
    rep.status.kept = bank.strategies.size();
    rep.status.status = "complete";
    rep.status.output_sha256 = output_hash("metadata");
    return rep;
  }

  StrategyBank open_bank() const {
    if (std::filesystem::exists(bank_dir() / "strategies.jsonl")) return load_bank(bank_dir(), registry_);
    StrategyBank bank;
    bank.registry = registry_;
    return bank;
  }

  DedupAssignments load_assignments() const {
    const auto p = bank_dir() / kDedupAssignmentsFile;
    if (!std::filesystem::exists(p)) return {};
    auto j = nlohmann::json::parse(detail::read_file(p), nullptr, false);
    if (j.is_discarded()) throw SchemaError("assignments", 0, "invalid JSON in " + p.string());
    return DedupAssignments::from_json(j);
  }

  std::filesystem::path dir_;
  ToolchainRegistry registry_;
  PipelineSettings settings_;
  BuildServices svc_;
  std::size_t jobs_;
  std::map<std::string, StageStatus> manifest_;
};

// Standalone dedup over a bank directory and an extraction stream. The
// assignment file sits inside the bank directory.
inline DedupRunStats dedup_bank_dir(const std::filesystem::path& bank_dir, const ToolchainRegistry& registry,
                                    const std::vector<RawExtraction>& stream, EmbeddingProvider& embedder,
                                    Judge& judge, const PipelineSettings& settings = {}) {
  StrategyBank bank;
  bank.registry = registry;
  if (std::filesystem::exists(bank_dir / "strategies.jsonl")) bank = load_bank(bank_dir, registry);
  DedupAssignments assignments;
  if (const auto p = bank_dir / kDedupAssignmentsFile; std::filesystem::exists(p)) {
    assignments = DedupAssignments::from_json(nlohmann::json::parse(detail::read_file(p)));
  }
  const auto stats = run_dedup(bank, assignments, stream, embedder, judge, settings);
  save_bank(bank, bank_dir);
  detail::replace_file(bank_dir / kDedupAssignmentsFile, assignments.to_json().dump(2) + "\n");
  return stats;
}

}  // namespace lean_refactor
