#pragma once

// Strategy-bank construction steps: decontamination, pair routing and
// construction, distillation, judge filtering, the dedup cascade and
// metadata annotation. The stage driver lives in bank_build.hpp.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lean_refactor/compiler_interface.hpp"
#include "lean_refactor/errors.hpp"
#include "lean_refactor/lean_tokenizer.hpp"
#include "lean_refactor/llm.hpp"
#include "lean_refactor/prompts.hpp"
#include "lean_refactor/retrieval.hpp"
#include "lean_refactor/strategy_bank.hpp"

namespace lean_refactor {

struct PipelineSettings {
  double decontamination_threshold = 0.8;
  double dedup_shortcut_threshold = 0.9;
  std::size_t dedup_candidates = 10;
  std::size_t routing_threshold = 50;  // tokens; strictly more goes forward
  int profile_runs = 1;
  double compile_timeout = 300.0;
  std::string preamble;
  SamplingParams sampling;
};

// Comment-free, whitespace-collapsed statement. Declarations are cut at
// their top-level `:=`; anything else is taken whole.
inline std::string normalize_statement(std::string_view text) {
  std::string decl = normalized_statement(text);
  if (!decl.empty()) return decl;
  const std::string stripped = remove_comments(text);
  std::string out;
  bool space = false;
  for (char c : stripped) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Judge port

// One call per question; a transport error or an answer that does not parse
// into the expected shape raises JudgeUnavailable so the item can be
// quarantined and retried.
class Judge {
 public:
  Judge(ChatModel& llm, const PromptLibrary& prompts, SamplingParams sampling = {})
      : llm_(llm), prompts_(prompts), sampling_(sampling) {}

  nlohmann::json ask(std::string_view template_name, const std::map<std::string, std::string>& values) {
    const std::string prompt = prompts_.render(template_name, values);
    std::string response;
    try {
      response = llm_.complete({{"user", prompt}}, sampling_);
    } catch (const RetryableProviderError& e) {
      throw JudgeUnavailable(std::string(template_name) + ": " + e.what());
    }
    auto parsed = last_json_block(response);
    if (!parsed || !parsed->is_object()) {
      throw JudgeUnavailable(std::string(template_name) + ": answer is not a JSON object");
    }
    return *parsed;
  }

  bool ask_flag(std::string_view template_name, const std::map<std::string, std::string>& values,
                std::string_view key) {
    const auto answer = ask(template_name, values);
    if (!answer.contains(key) || !answer[std::string(key)].is_boolean()) {
      throw JudgeUnavailable(std::string(template_name) + ": answer lacks boolean '" + std::string(key) + "'");
    }
    return answer[std::string(key)].get<bool>();
  }

  ChatModel& model() noexcept { return llm_; }
  const PromptLibrary& prompts() const noexcept { return prompts_; }
  const SamplingParams& sampling() const noexcept { return sampling_; }

 private:
  ChatModel& llm_;
  const PromptLibrary& prompts_;
  SamplingParams sampling_;
};

// ---------------------------------------------------------------------------
// Decontamination

enum class DecontaminationOutcome { dropped_exact, kept_low_sim, kept_judge, dropped_judge };

inline std::string_view to_string(DecontaminationOutcome o) {
  switch (o) {
    case DecontaminationOutcome::dropped_exact: return "dropped_exact";
    case DecontaminationOutcome::kept_low_sim: return "kept_low_sim";
    case DecontaminationOutcome::kept_judge: return "kept_judge";
    case DecontaminationOutcome::dropped_judge: return "dropped_judge";
  }
  return "kept_low_sim";
}

struct DecontaminationVerdict {
  DecontaminationOutcome outcome = DecontaminationOutcome::kept_low_sim;
  std::optional<double> top1_similarity;
  std::optional<std::size_t> matched_eval;  // index into the evaluation set

  bool kept() const noexcept {
    return outcome == DecontaminationOutcome::kept_low_sim || outcome == DecontaminationOutcome::kept_judge;
  }
};

class EvalStatementIndex {
 public:
  static EvalStatementIndex build(std::vector<std::string> statements, EmbeddingProvider& embedder) {
    EvalStatementIndex idx(embedder.dimension());
    idx.statements_ = std::move(statements);
    std::vector<std::string> normalized;
    for (const auto& s : idx.statements_) {
      normalized.push_back(normalize_statement(s));
      idx.exact_.emplace(normalized.back(), idx.exact_.size());
    }
    const auto vectors = embed(embedder, normalized);
    for (std::size_t i = 0; i < vectors.size(); ++i) idx.index_.add(std::to_string(i), vectors[i]);
    return idx;
  }

  std::optional<std::size_t> exact_match(const std::string& normalized) const {
    auto it = exact_.find(normalized);
    if (it == exact_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<RankedStrategy> nearest(const EmbeddingVector& v) const {
    if (index_.size() == 0) return std::nullopt;
    return index_.top_k(v, 1).front();
  }

  const std::string& statement(std::size_t i) const { return statements_.at(i); }
  std::size_t size() const noexcept { return statements_.size(); }
  std::size_t dimension() const noexcept { return index_.dimension(); }

 private:
  explicit EvalStatementIndex(std::size_t dim) : index_(dim) {}

  std::vector<std::string> statements_;
  std::map<std::string, std::size_t> exact_;
  FlatIndex index_;
};

inline DecontaminationVerdict decontaminate(const std::string& candidate_statement, const EvalStatementIndex& eval,
                                            EmbeddingProvider& embedder, Judge& judge,
                                            double threshold = 0.8) {
  const std::string normalized = normalize_statement(candidate_statement);
  if (auto hit = eval.exact_match(normalized)) return {DecontaminationOutcome::dropped_exact, std::nullopt, hit};

  const auto nearest = eval.nearest(embed_one(embedder, normalized));
  if (!nearest) return {DecontaminationOutcome::kept_low_sim, std::nullopt, std::nullopt};
  const double sim = nearest->similarity;
  const std::size_t match = std::stoul(nearest->strategy_id);
  if (sim < threshold) return {DecontaminationOutcome::kept_low_sim, sim, match};

  const bool duplicate = judge.ask_flag("judge_decontamination",
                                        {{"candidate", candidate_statement}, {"eval_statement", eval.statement(match)}},
                                        "duplicate");
  return {duplicate ? DecontaminationOutcome::dropped_judge : DecontaminationOutcome::kept_judge, sim, match};
}

// ---------------------------------------------------------------------------
// Proof selection and pair construction

enum class PairRoute { forward_simplify, reverse_complexify };

inline std::string_view to_string(PairRoute r) {
  return r == PairRoute::forward_simplify ? "forward_simplify" : "reverse_complexify";
}

inline PairRoute route_pair_construction(std::string_view proof, std::size_t threshold = 50) {
  const std::size_t len = proof_length(proof);
  if (len == kProofLengthSentinel) throw RoutingError("proof has no measurable length");
  return len > threshold ? PairRoute::forward_simplify : PairRoute::reverse_complexify;
}

struct ProofCandidate {
  std::string proof;
  Verdict verdict = Verdict::failure;
};

// Longest compiling candidate by the token metric; ties keep input order.
inline std::size_t select_longest_valid_index(const std::vector<ProofCandidate>& candidates) {
  std::optional<std::size_t> best;
  std::size_t best_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].verdict != Verdict::success) continue;
    const std::size_t len = proof_length(candidates[i].proof);
    if (len == kProofLengthSentinel) continue;
    if (!best || len > best_len) {
      best = i;
      best_len = len;
    }
  }
  if (!best) throw NoValidProof();
  return *best;
}

inline const std::string& select_longest_valid(const std::vector<ProofCandidate>& candidates) {
  return candidates[select_longest_valid_index(candidates)].proof;
}

inline std::string compile_source(std::string_view preamble, std::string_view decl) {
  if (preamble.empty()) return std::string(decl);
  std::string src(preamble);
  if (src.back() != '\n') src += '\n';
  src.append(decl);
  return src;
}

struct PairAttempt {
  std::optional<ProofPair> pair;
  std::string reason;  // why no pair was produced
};

// One rewrite in the routed direction. The rewrite must keep the statement,
// compile, and move the length the right way.
inline PairAttempt construct_pair(const std::string& id, const std::string& proof, SourceCorpus corpus,
                                  const std::string& dependencies, ChatModel& llm, const PromptLibrary& prompts,
                                  CompilerService& compiler, const std::string& toolchain,
                                  const PipelineSettings& settings) {
  const PairRoute route = route_pair_construction(proof, settings.routing_threshold);
  const std::string response = llm.complete(
      {{"user", prompts.render(route == PairRoute::forward_simplify ? "forward_simplify" : "reverse_complexify",
                               {{"proof", proof}, {"dependencies", dependencies.empty() ? "None." : dependencies}})}},
      settings.sampling);
  auto rewritten = last_lean_block(response);
  if (!rewritten) return {std::nullopt, "no lean code block"};
  if (normalized_statement(*rewritten) != normalized_statement(proof)) return {std::nullopt, "statement changed"};
  const auto r = compiler.check({compile_source(settings.preamble, *rewritten), toolchain, false, false,
                                 settings.compile_timeout});
  if (!r.ok()) return {std::nullopt, "rewrite does not compile"};
  const std::size_t before = proof_length(proof), after = proof_length(*rewritten);
  ProofPair pair;
  pair.id = id;
  pair.statement = normalized_statement(proof);
  pair.source_corpus = corpus;
  pair.long_verified = pair.short_verified = true;
  if (route == PairRoute::forward_simplify) {
    if (after >= before) return {std::nullopt, "rewrite is not shorter"};
    pair.long_proof = proof;
    pair.short_proof = *rewritten;
  } else {
    if (after <= before) return {std::nullopt, "rewrite is not longer"};
    pair.long_proof = *rewritten;
    pair.short_proof = proof;
  }
  return {std::move(pair), {}};
}

// ---------------------------------------------------------------------------
// Metadata annotation

struct AnnotationReport {
  ProofPair pair;
  std::vector<std::string> warnings;
};

inline std::optional<double> mean_elaboration(CompilerService& compiler, const CompileRequest& req, int runs,
                                              std::string& problem) {
  try {
    const auto stats = compiler.profile_repeated(req, runs);
    for (const auto& s : stats.samples) {
      if (!s.ok()) {
        problem = "profiled compile did not succeed";
        return std::nullopt;
      }
    }
    return stats.mean_elaboration;
  } catch (const ProfileParseError& e) {
    problem = e.what();
  } catch (const EnvironmentError& e) {
    problem = e.what();
  }
  return std::nullopt;
}

// Elaboration-time reduction on the native toolchain plus a recompile of the
// short proof under every other registered toolchain. Mathlib pairs skip the
// cross-version check. Proof text is never touched.
inline AnnotationReport annotate_pair(const ProofPair& pair, CompilerService& compiler,
                                      const ToolchainRegistry& registry, const PipelineSettings& settings = {}) {
  AnnotationReport rep{pair, {}};
  ProofPair& out = rep.pair;
  const std::string native = registry.native();

  std::string problem;
  CompileRequest req{{}, native, true, false, settings.compile_timeout};
  req.source = compile_source(settings.preamble, pair.long_proof);
  const auto t_long = mean_elaboration(compiler, req, settings.profile_runs, problem);
  std::optional<double> t_short;
  if (t_long) {
    req.source = compile_source(settings.preamble, pair.short_proof);
    t_short = mean_elaboration(compiler, req, settings.profile_runs, problem);
  }
  if (t_long && t_short && *t_long > 0.0) {
    out.compile_reduction = (*t_long - *t_short) / *t_long;
  } else {
    out.compile_reduction.reset();
    rep.warnings.push_back("pair " + pair.id + ": no compile reduction (" +
                           (problem.empty() ? std::string("zero elaboration time") : problem) + ")");
  }

  out.version_status.clear();
  if (pair.source_corpus == SourceCorpus::mathlib) return rep;
  if (pair.short_verified) out.version_status[native] = VersionStatus::compiles;
  const auto others = registry.non_native_versions();
  const auto matrix =
      compiler.cross_version_matrix(compile_source(settings.preamble, pair.short_proof), others,
                                    settings.compile_timeout);
  for (const auto& [version, verdict] : matrix) {
    switch (verdict) {
      case MatrixVerdict::success: out.version_status[version] = VersionStatus::compiles; break;
      case MatrixVerdict::failure:
      case MatrixVerdict::timeout: out.version_status[version] = VersionStatus::fails; break;
      case MatrixVerdict::environment_error:
        out.version_status[version] = VersionStatus::untested;
        rep.warnings.push_back("pair " + pair.id + ": toolchain " + version + " unavailable");
        break;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Distillation and judging

struct RawExtraction {
  std::string extraction_id;
  std::string pair_id;
  Strategy strategy;  // schema fields only; metadata stays empty
  int line_start = 1;
  int line_end = 1;
  bool operator==(const RawExtraction&) const = default;
};

inline nlohmann::ordered_json to_json(const RawExtraction& x) {
  nlohmann::ordered_json j;
  j["extraction_id"] = x.extraction_id;
  j["pair_id"] = x.pair_id;
  j["line_start"] = x.line_start;
  j["line_end"] = x.line_end;
  j["title"] = x.strategy.title;
  j["description"] = x.strategy.description;
  j["when_to_apply"] = x.strategy.when_to_apply;
  j["application_guide"] = x.strategy.application_guide;
  j["abstract_example"] = {{"before", x.strategy.abstract_example.before},
                           {"after", x.strategy.abstract_example.after}};
  j["potential_reduction"] = std::string(to_string(x.strategy.potential_reduction));
  return j;
}

namespace detail {

inline std::optional<std::string> string_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) return std::nullopt;
  auto s = j[key].get<std::string>();
  if (s.empty()) return std::nullopt;
  return s;
}

}  // namespace detail

inline std::string extraction_id(const std::string& pair_id, const Strategy& s, int line_start, int line_end) {
  return detail::content_id(pair_id + '\x1f' + strategy_content_id(s) + '\x1f' + std::to_string(line_start) + '-' +
                            std::to_string(line_end));
}

// Raises SchemaError naming the first bad field.
inline RawExtraction extraction_from_json(const nlohmann::json& j, const std::string& pair_id, int long_lines) {
  if (!j.is_object()) throw SchemaError("strategy", 0, "not an object");
  RawExtraction x;
  x.pair_id = pair_id;
  Strategy& s = x.strategy;
  auto req = [&](const char* key) {
    auto v = detail::string_field(j, key);
    if (!v) throw SchemaError(key, 0, "missing or empty");
    return *v;
  };
  s.title = req("title");
  s.description = req("description");
  s.when_to_apply = req("when_to_apply");
  if (!j.contains("application_guide") || !j["application_guide"].is_array() || j["application_guide"].empty()) {
    throw SchemaError("application_guide", 0, "must be a non-empty list");
  }
  for (const auto& step : j["application_guide"]) {
    if (!step.is_string()) throw SchemaError("application_guide", 0, "steps must be strings");
    s.application_guide.push_back(step.get<std::string>());
  }
  if (!j.contains("abstract_example") || !j["abstract_example"].is_object()) {
    throw SchemaError("abstract_example", 0, "must be an object");
  }
  const auto before = detail::string_field(j["abstract_example"], "before");
  const auto after = detail::string_field(j["abstract_example"], "after");
  if (!before || !after) throw SchemaError("abstract_example", 0, "needs before and after");
  s.abstract_example = {*before, *after};
  const auto red = parse_reduction(req("potential_reduction"));
  if (!red) throw SchemaError("potential_reduction", 0, "must be high, medium or low");
  s.potential_reduction = *red;
  if (!j.contains("line_start") || !j["line_start"].is_number_integer() || !j.contains("line_end") ||
      !j["line_end"].is_number_integer()) {
    throw SchemaError("line_start", 0, "line span missing");
  }
  x.line_start = j["line_start"].get<int>();
  x.line_end = j["line_end"].get<int>();
  if (x.line_start < 1 || x.line_end < x.line_start || x.line_end > long_lines) {
    throw SchemaError("line_end", 0,
                      "span " + std::to_string(x.line_start) + "-" + std::to_string(x.line_end) +
                          " outside the long proof (1-" + std::to_string(long_lines) + ")");
  }
  x.extraction_id = extraction_id(pair_id, s, x.line_start, x.line_end);
  s.id = x.extraction_id;
  return x;
}

inline RawExtraction extraction_from_record(const nlohmann::json& j) {
  const int line_end = j.at("line_end").get<int>();
  auto x = extraction_from_json(j, j.at("pair_id").get<std::string>(), line_end);
  if (j.contains("extraction_id") && j["extraction_id"] != x.extraction_id) {
    throw SchemaError("extraction_id", 0, "does not match the record content");
  }
  return x;
}

struct DistillResult {
  std::vector<RawExtraction> extractions;
  std::vector<std::string> warnings;
};

inline DistillResult distill(const ProofPair& pair, ChatModel& llm, const PromptLibrary& prompts,
                             const std::string& dependencies = {}, const SamplingParams& sampling = {}) {
  DistillResult out;
  const std::string response = llm.complete(
      {{"user", prompts.render("distill", {{"long_proof_numbered", numbered_listing(pair.long_proof)},
                                           {"short_proof", pair.short_proof},
                                           {"dependencies", dependencies.empty() ? "None." : dependencies}})}},
      sampling);
  auto parsed = last_json_block(response);
  if (!parsed || !parsed->is_array()) {
    out.warnings.push_back("pair " + pair.id + ": distiller answer is not a JSON list");
    return out;
  }
  const int nlines = static_cast<int>(line_count(pair.long_proof));
  std::set<std::string> seen;
  for (std::size_t i = 0; i < parsed->size(); ++i) {
    try {
      auto x = extraction_from_json((*parsed)[i], pair.id, nlines);
      if (!seen.insert(x.extraction_id).second) continue;
      out.extractions.push_back(std::move(x));
    } catch (const SchemaError& e) {
      out.warnings.push_back("pair " + pair.id + ": strategy " + std::to_string(i + 1) + " dropped: " + e.what());
    }
  }
  return out;
}

inline std::string render_strategy_record(const Strategy& s) {
  std::string out = "Title: " + s.title + "\nDescription: " + s.description + "\nWhen to apply: " + s.when_to_apply +
                    "\nApplication guide:\n";
  for (std::size_t i = 0; i < s.application_guide.size(); ++i) {
    out += "  " + std::to_string(i + 1) + ". " + s.application_guide[i] + "\n";
  }
  out += "Abstract example (before):\n" + s.abstract_example.before + "\nAbstract example (after):\n" +
         s.abstract_example.after + "\nPotential reduction: " + std::string(to_string(s.potential_reduction));
  return out;
}

// Correctness first; schema fidelity is only asked when correctness passes.
inline bool judge_filter(const RawExtraction& x, const ProofPair& pair, Judge& judge) {
  const std::string record = render_strategy_record(x.strategy);
  if (!judge.ask_flag("judge_correctness",
                      {{"line_start", std::to_string(x.line_start)},
                       {"line_end", std::to_string(x.line_end)},
                       {"strategy", record},
                       {"long_proof_numbered", numbered_listing(pair.long_proof)},
                       {"short_proof", pair.short_proof}},
                      "pass")) {
    return false;
  }
  return judge.ask_flag("judge_schema",
                        {{"strategy", record}, {"long_proof", pair.long_proof}, {"short_proof", pair.short_proof}},
                        "pass");
}

// ---------------------------------------------------------------------------
// Dedup cascade

enum class DedupOutcome { shortcut_duplicate, judge_duplicate, new_entry };

inline std::string_view to_string(DedupOutcome o) {
  switch (o) {
    case DedupOutcome::shortcut_duplicate: return "shortcut_duplicate";
    case DedupOutcome::judge_duplicate: return "judge_duplicate";
    case DedupOutcome::new_entry: return "new_entry";
  }
  return "new_entry";
}

struct DedupDecision {
  DedupOutcome outcome = DedupOutcome::new_entry;
  std::optional<std::string> matched_id;
  double top1_similarity = 0.0;
};

// Canonical strategies and their description embeddings, in insertion order.
class UniqueSet {
 public:
  explicit UniqueSet(std::size_t dimension) : index_(dimension) {}

  static UniqueSet from_bank(const StrategyBank& bank, EmbeddingProvider& embedder) {
    UniqueSet set(embedder.dimension());
    std::vector<std::string> texts;
    for (const auto& s : bank.strategies) texts.push_back(s.description);
    const auto vectors = embed(embedder, texts);
    for (std::size_t i = 0; i < vectors.size(); ++i) set.add(bank.strategies[i], vectors[i]);
    return set;
  }

  void add(const Strategy& s, EmbeddingVector v) {
    index_.add(s.id, std::move(v));
    records_.push_back(s);
  }

  std::size_t size() const noexcept { return records_.size(); }
  const FlatIndex& index() const noexcept { return index_; }

  const Strategy& record(std::string_view id) const {
    for (const auto& r : records_) {
      if (r.id == id) return r;
    }
    throw Error("unique set has no strategy " + std::string(id));
  }

 private:
  FlatIndex index_;
  std::vector<Strategy> records_;
};

inline DedupDecision dedup_step(const Strategy& strategy, const EmbeddingVector& description_embedding,
                                const UniqueSet& unique, Judge& judge, const PipelineSettings& settings = {}) {
  if (unique.size() == 0) return {};
  const auto hits = unique.index().top_k(description_embedding, settings.dedup_candidates);
  DedupDecision d;
  d.top1_similarity = hits.front().similarity;
  if (d.top1_similarity >= settings.dedup_shortcut_threshold) {
    d.outcome = DedupOutcome::shortcut_duplicate;
    d.matched_id = hits.front().strategy_id;
    return d;
  }
  std::string candidates;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    candidates += "### " + std::to_string(i + 1) + "\n" + render_strategy_record(unique.record(hits[i].strategy_id)) +
                  "\n\n";
  }
  candidates.pop_back();
  const auto answer =
      judge.ask("judge_dedup", {{"strategy", render_strategy_record(strategy)}, {"candidates", candidates}});
  if (!answer.contains("duplicate") || !answer["duplicate"].is_boolean()) {
    throw JudgeUnavailable("judge_dedup: answer lacks boolean 'duplicate'");
  }
  if (!answer["duplicate"].get<bool>()) return d;
  if (!answer.contains("match") || !answer["match"].is_number_integer()) {
    throw JudgeUnavailable("judge_dedup: duplicate without an integer 'match'");
  }
  const auto m = answer["match"].get<long long>();
  if (m < 1 || m > static_cast<long long>(hits.size())) {
    throw JudgeUnavailable("judge_dedup: match " + std::to_string(m) + " is not a listed candidate");
  }
  d.outcome = DedupOutcome::judge_duplicate;
  d.matched_id = hits[static_cast<std::size_t>(m - 1)].strategy_id;
  return d;
}

// Extraction id -> canonical strategy id. Persisted next to the bank so a
// re-run skips everything already placed.
struct DedupAssignments {
  std::map<std::string, std::string> by_extraction;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json a = nlohmann::ordered_json::object();
    for (const auto& [x, s] : by_extraction) a[x] = s;
    return {{"schema_version", 1}, {"assignments", a}};
  }

  static DedupAssignments from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("schema_version", 0) != 1 || !j.contains("assignments") ||
        !j["assignments"].is_object()) {
      throw SchemaError("assignments", 0, "not a version 1 dedup assignment file");
    }
    DedupAssignments out;
    for (const auto& [x, s] : j["assignments"].items()) {
      if (!s.is_string()) throw SchemaError("assignments", 0, "strategy ids must be strings");
      out.by_extraction[x] = s.get<std::string>();
    }
    return out;
  }
};

struct DedupRunStats {
  std::size_t processed = 0;
  std::size_t new_entries = 0;
  std::size_t shortcut_duplicates = 0;
  std::size_t judge_duplicates = 0;
  std::size_t already_assigned = 0;
  std::size_t quarantined = 0;
  std::vector<std::string> quarantined_ids;

  std::size_t changes() const noexcept { return new_entries + shortcut_duplicates + judge_duplicates; }
};

// Places `x` in the bank: a new canonical entry (id = extraction id) or a
// member of the matched one. The pair gains a grounded span either way.
inline void apply_dedup(StrategyBank& bank, const RawExtraction& x, const DedupDecision& d) {
  std::string target;
  if (d.outcome == DedupOutcome::new_entry) {
    Strategy s = x.strategy;
    s.id = x.extraction_id;
    s.median_compile_reduction.reset();
    s.compatibility_set.clear();
    s.member_pair_ids = {x.pair_id};
    bank.strategies.push_back(std::move(s));
    target = x.extraction_id;
  } else {
    Strategy* s = bank.find_strategy(*d.matched_id);
    if (s == nullptr) throw Error("dedup matched unknown strategy " + *d.matched_id);
    if (std::find(s->member_pair_ids.begin(), s->member_pair_ids.end(), x.pair_id) == s->member_pair_ids.end()) {
      s->member_pair_ids.push_back(x.pair_id);
    }
    target = *d.matched_id;
  }
  if (ProofPair* p = bank.find_pair(x.pair_id)) {
    GroundedSpan span{target, x.line_start, x.line_end};
    if (std::find(p->grounded_spans.begin(), p->grounded_spans.end(), span) == p->grounded_spans.end()) {
      p->grounded_spans.push_back(span);
    }
  }
}

// Sequential cascade over `stream`. Judge failures leave the extraction
// unassigned (quarantined) and processing continues.
inline DedupRunStats run_dedup(StrategyBank& bank, DedupAssignments& assignments,
                               const std::vector<RawExtraction>& stream, EmbeddingProvider& embedder, Judge& judge,
                               const PipelineSettings& settings = {}) {
  DedupRunStats stats;
  UniqueSet unique = UniqueSet::from_bank(bank, embedder);
  for (const auto& x : stream) {
    if (assignments.by_extraction.contains(x.extraction_id) || bank.find_strategy(x.extraction_id) != nullptr) {
      ++stats.already_assigned;
      continue;
    }
    ++stats.processed;
    const auto v = embed_one(embedder, x.strategy.description);
    DedupDecision d;
    try {
      d = dedup_step(x.strategy, v, unique, judge, settings);
    } catch (const JudgeUnavailable&) {
      ++stats.quarantined;
      stats.quarantined_ids.push_back(x.extraction_id);
      continue;
    }
    apply_dedup(bank, x, d);
    switch (d.outcome) {
      case DedupOutcome::new_entry:
        ++stats.new_entries;
        unique.add(bank.strategies.back(), v);
        assignments.by_extraction[x.extraction_id] = x.extraction_id;
        break;
      case DedupOutcome::shortcut_duplicate:
        ++stats.shortcut_duplicates;
        assignments.by_extraction[x.extraction_id] = *d.matched_id;
        break;
      case DedupOutcome::judge_duplicate:
        ++stats.judge_duplicates;
        assignments.by_extraction[x.extraction_id] = *d.matched_id;
        break;
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Strategy-level metadata

inline StrategyBank rebuild_metadata(StrategyBank bank) {
  for (auto& s : bank.strategies) {
    const auto md = recompute_metadata(s, bank);
    s.median_compile_reduction = md.median_compile_reduction;
    s.compatibility_set = md.compatibility_set;
  }
  return bank;
}

}  // namespace lean_refactor
