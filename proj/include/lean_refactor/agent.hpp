#pragma once

// Planner / refactorer / debugger session over a chat model and a compiler.

#include <algorithm>
#include <cctype>
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

struct AgentConfig {
  int budget = 30;  // LLM calls
  std::size_t target_length = 5;
  int max_debug_rounds = 3;
  ObjectiveSpec objective;  // objective.k is the retrieval k
  std::vector<int> chunk_sizes{5, 10, 20};
  std::string toolchain_version;  // empty: objective target, else registry native
  std::string preamble;           // prepended to every compiled candidate
  double compile_timeout = 300.0;
  SamplingParams sampling;

  void validate() const {
    if (budget < 0) throw ConfigError("budget must be non-negative");
    if (target_length == 0) throw ConfigError("target length must be positive");
    if (max_debug_rounds < 0) throw ConfigError("max debug rounds must be non-negative");
    if (chunk_sizes.empty()) throw ConfigError("chunk sizes must not be empty");
    for (int c : chunk_sizes) {
      if (c <= 0) throw ConfigError("chunk sizes must be positive");
    }
    if (!(compile_timeout > 0)) throw ConfigError("compile timeout must be positive");
    objective.validate();
  }
};

struct PlanStep {
  int line_start = 0;
  int line_end = 0;
  std::string title;
  Reduction reduction = Reduction::medium;
  std::string description;
  bool operator==(const PlanStep&) const = default;
};

inline nlohmann::ordered_json to_json(const PlanStep& s) {
  return {{"line_start", s.line_start},
          {"line_end", s.line_end},
          {"title", s.title},
          {"reduction", std::string(to_string(s.reduction))},
          {"description", s.description}};
}

enum class Termination { budget_exhausted, target_reached, no_viable_plan, converged };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::budget_exhausted: return "budget_exhausted";
    case Termination::target_reached: return "target_reached";
    case Termination::no_viable_plan: return "no_viable_plan";
    case Termination::converged: return "converged";
  }
  return "converged";
}

struct TraceEvent {
  std::string kind;  // session_start, retrieval, warning, plan_issued, step_attempted, ...
  std::size_t calls_used = 0;
  nlohmann::ordered_json detail = nlohmann::ordered_json::object();
};

struct SessionTrace {
  std::vector<TraceEvent> events;

  std::vector<const TraceEvent*> of_kind(std::string_view kind) const {
    std::vector<const TraceEvent*> out;
    for (const auto& e : events) {
      if (e.kind == kind) out.push_back(&e);
    }
    return out;
  }

  nlohmann::ordered_json to_json() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : events) {
      nlohmann::ordered_json j;
      j["kind"] = e.kind;
      j["calls_used"] = e.calls_used;
      j["detail"] = e.detail;
      arr.push_back(std::move(j));
    }
    return {{"events", std::move(arr)}};
  }
};

struct SessionResult {
  std::string final_proof;
  std::size_t initial_length = 0;
  std::size_t final_length = 0;
  std::size_t calls_used = 0;
  Termination termination = Termination::no_viable_plan;
  SessionTrace trace;

  double reduction() const {
    if (initial_length == 0) return 0.0;
    return (static_cast<double>(initial_length) - static_cast<double>(final_length)) /
           static_cast<double>(initial_length);
  }

  nlohmann::ordered_json to_json() const {
    return {{"final_proof", final_proof},
            {"initial_length", initial_length},
            {"final_length", final_length},
            {"calls_used", calls_used},
            {"termination", std::string(to_string(termination))},
            {"reduction", reduction()}};
  }
};

struct SessionInput {
  std::string proof;  // complete declaration, statement included
  std::string dependencies;
  std::string signature;
  std::string documentation;
};

namespace detail {

struct BudgetExhausted {};

inline std::optional<Reduction> reduction_from_plan(const nlohmann::json& v) {
  if (!v.is_string()) return std::nullopt;
  std::string s = v.get<std::string>();
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "high") return Reduction::high;
  if (s == "medium") return Reduction::medium;
  if (s == "low") return Reduction::low;
  return std::nullopt;
}

inline bool overlaps(const PlanStep& a, const PlanStep& b) {
  return a.line_start <= b.line_end && b.line_start <= a.line_end;
}

// a must come before b: overlapping plans go by reduction, then line; the
// rest by line.
inline bool plan_precedes(const PlanStep& a, const PlanStep& b) {
  if (overlaps(a, b) && a.reduction != b.reduction) {
    return reduction_weight(a.reduction) > reduction_weight(b.reduction);
  }
  return a.line_start < b.line_start;
}

inline std::size_t utf8_offset_of_column(std::string_view line, int column) {
  std::size_t i = 0;
  for (int c = 0; c < column && i < line.size(); ++c) i += decode_utf8(line, i).size;
  return std::min(i, line.size());
}

}  // namespace detail

// Wraps the text from each error's column to the end of its line in
// <error></error>. Line numbers are relative to the candidate; diagnostics
// outside it are left for the message.
inline std::string mark_errors(std::string_view candidate, const std::vector<Diagnostic>& diagnostics) {
  std::map<int, int> first_column;
  for (const auto& d : diagnostics) {
    if (d.severity != "error" || d.line <= 0) continue;
    auto [it, inserted] = first_column.emplace(d.line, d.column);
    if (!inserted) it->second = std::min(it->second, d.column);
  }
  const auto lines = split_lines(candidate);
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    auto it = first_column.find(static_cast<int>(i) + 1);
    if (it == first_column.end()) {
      out.append(line);
    } else {
      std::size_t end = line.size();
      while (end > 0 && (line[end - 1] == ' ' || line[end - 1] == '\t' || line[end - 1] == '\r')) --end;
      std::size_t at = detail::utf8_offset_of_column(line, it->second);
      if (at >= end) {
        at = 0;
        while (at < end && (line[at] == ' ' || line[at] == '\t')) ++at;
      }
      out.append(line.substr(0, at));
      out += "<error>";
      out.append(line.substr(at, end - at));
      out += "</error>";
      out.append(line.substr(end));
    }
    if (i + 1 < lines.size()) out += '\n';
  }
  return out;
}

inline std::string format_diagnostics(const std::vector<Diagnostic>& diagnostics) {
  std::string out;
  for (const auto& d : diagnostics) {
    if (d.severity != "error") continue;
    if (d.line > 0) out += "line " + std::to_string(d.line) + ", column " + std::to_string(d.column) + ": ";
    out += d.message;
    out += '\n';
  }
  if (!out.empty()) out.pop_back();
  return out;
}

class RefactorAgent {
 public:
  RefactorAgent(AgentConfig config, const StrategyBank& bank, const FlatIndex& index, EmbeddingProvider& embedder,
                ChatModel& llm, CompilerService& compiler, const PromptLibrary& prompts)
      : config_(std::move(config)),
        bank_(bank),
        index_(index),
        embedder_(embedder),
        llm_(llm),
        compiler_(compiler),
        prompts_(prompts) {
    config_.validate();
    if (config_.objective.target_version && !bank_.registry.contains(*config_.objective.target_version)) {
      throw UnknownVersion(*config_.objective.target_version);
    }
    if (config_.toolchain_version.empty()) {
      config_.toolchain_version =
          config_.objective.target_version ? *config_.objective.target_version : bank_.registry.native();
    }
  }

  const AgentConfig& config() const noexcept { return config_; }

  SessionResult run(const SessionInput& input) {
    reset();
    SessionResult result;
    result.final_proof = input.proof;

    const auto initial = compile(input.proof);
    if (!initial.ok()) {
      throw PreconditionFailed("input proof does not compile under " + config_.toolchain_version + ": " +
                               format_diagnostics(initial.diagnostics));
    }
    const std::size_t initial_length = proof_length(input.proof);
    if (initial_length == kProofLengthSentinel) throw PreconditionFailed("input is not a theorem declaration");
    result.initial_length = initial_length;
    result.final_length = initial_length;
    event("session_start", {{"length", initial_length},
                            {"budget", config_.budget},
                            {"target_length", config_.target_length},
                            {"toolchain", config_.toolchain_version}});

    std::string current = input.proof;
    std::size_t current_length = initial_length;
    std::vector<nlohmann::ordered_json> history;
    std::optional<std::vector<PlanStep>> last_failed_plan;

    try {
      while (true) {
        if (current_length <= config_.target_length) {
          result.termination = Termination::target_reached;
          break;
        }
        if (calls_ >= static_cast<std::size_t>(config_.budget)) {
          result.termination = Termination::budget_exhausted;
          break;
        }
        const auto retrieved = retrieve_for(current);
        const auto steps = plan(current, input, retrieved, history);
        if (steps.empty()) {
          result.termination = Termination::no_viable_plan;
          break;
        }
        if (last_failed_plan && *last_failed_plan == steps) {
          result.termination = Termination::converged;
          break;
        }

        bool adopted = false;
        for (std::size_t s = 0; s < steps.size() && !adopted; ++s) {
          const auto& step = steps[s];
          event("step_attempted", {{"index", s}, {"step", to_json(step)}});
          auto candidate = attempt(current, input, step);
          if (!candidate) continue;
          const std::size_t len = proof_length(*candidate);
          if (len >= current_length) {
            event("skip", {{"index", s}, {"reason", "not_shorter"}, {"length", len}});
            continue;
          }
          event("adoption", {{"index", s}, {"previous_length", current_length}, {"length", len}});
          current = std::move(*candidate);
          current_length = len;
          history.push_back({{"outcome", "success"}, {"step", to_json(step)}});
          last_failed_plan.reset();
          adopted = true;
        }
        if (!adopted) {
          auto plan_json = nlohmann::ordered_json::array();
          for (const auto& st : steps) plan_json.push_back(to_json(st));
          history.push_back({{"outcome", "failed"}, {"plan", plan_json}});
          event("plan_failed", {{"steps", steps.size()}});
          last_failed_plan = steps;
        }
      }
    } catch (const detail::BudgetExhausted&) {
      result.termination = Termination::budget_exhausted;
    }

    result.final_proof = current;
    result.final_length = current_length;
    result.calls_used = calls_;
    event("termination", {{"reason", std::string(to_string(result.termination))}, {"length", current_length}});
    result.trace = std::move(trace_);
    return result;
  }

  // One planner call, plus at most one corrective reparse.
  std::vector<PlanStep> plan(const std::string& proof, const SessionInput& input,
                             const std::vector<RankedStrategy>& retrieved,
                             const std::vector<nlohmann::ordered_json>& history) {
    const std::string prompt = prompts_.render(
        "planner", {{"strategies", render_strategies(retrieved)},
                    {"history", render_history(history)},
                    {"proof", proof},
                    {"numbered_proof", numbered_listing(proof)},
                    {"signature", or_none(input.signature)},
                    {"documentation", or_none(input.documentation)},
                    {"dependencies", or_none(input.dependencies)}});
    std::vector<ChatMessage> messages{{"user", prompt}};
    std::string response = call(messages, "planner");
    std::string problem;
    auto raw = parse_plan_array(response, problem);
    if (!raw) {
      event("warning", {{"what", "plan_unparseable"}, {"detail", problem}});
      messages.push_back({"assistant", response});
      messages.push_back({"user", prompts_.render("planner_reparse", {{"error", problem}})});
      response = call(messages, "planner_reparse");
      raw = parse_plan_array(response, problem);
      if (!raw) {
        event("warning", {{"what", "plan_unparseable"}, {"detail", problem}});
        event("plan_issued", {{"steps", nlohmann::ordered_json::array()}});
        return {};
      }
    }

    const int nlines = static_cast<int>(split_lines(proof).size());
    std::vector<PlanStep> steps;
    for (std::size_t i = 0; i < raw->size(); ++i) {
      std::string why;
      auto step = validate_step((*raw)[i], nlines, why);
      if (!step) {
        event("warning", {{"what", "plan_step_dropped"}, {"index", i}, {"detail", why}});
        continue;
      }
      steps.push_back(std::move(*step));
    }
    // Insertion sort keeps the model's order wherever it already agrees.
    bool reordered = false;
    for (std::size_t i = 1; i < steps.size(); ++i) {
      for (std::size_t j = i; j > 0 && detail::plan_precedes(steps[j], steps[j - 1]); --j) {
        std::swap(steps[j], steps[j - 1]);
        reordered = true;
      }
    }
    if (reordered) event("warning", {{"what", "plan_reordered"}});
    auto arr = nlohmann::ordered_json::array();
    for (const auto& s : steps) arr.push_back(to_json(s));
    event("plan_issued", {{"steps", arr}});
    return steps;
  }

  // Throws StepFailed or StatementMutation.
  std::string refactor_step(const std::string& proof, const SessionInput& input, const PlanStep& step,
                            std::vector<ChatMessage>& conversation) {
    conversation = {{"user", prompts_.render("refactor", {{"proof", proof},
                                                          {"signature", or_none(input.signature)},
                                                          {"documentation", or_none(input.documentation)},
                                                          {"dependencies", or_none(input.dependencies)},
                                                          {"line_start", std::to_string(step.line_start)},
                                                          {"line_end", std::to_string(step.line_end)},
                                                          {"title", step.title},
                                                          {"description", step.description}})}};
    const std::string response = call(conversation, "refactor");
    conversation.push_back({"assistant", response});
    return extract_candidate(proof, response);
  }

  // `round` is the 1-based number of the candidate being repaired.
  std::string debug(const std::string& original, const std::string& candidate, const CompileResult& result,
                    int round, std::vector<ChatMessage>& conversation) {
    std::string marked;
    std::string message;
    if (result.verdict == Verdict::timeout) {
      marked = candidate;
      message = "compilation timed out";
    } else {
      auto diags = relative_diagnostics(result.diagnostics);
      marked = mark_errors(candidate, diags);
      message = format_diagnostics(diags);
      if (message.empty()) message = "compilation failed";
    }
    conversation.push_back({"user", prompts_.render("debugger", {{"prev_round_num", std::to_string(round)},
                                                                 {"marked_proof", marked},
                                                                 {"error_message", message}})});
    const std::string response = call(conversation, "debugger");
    conversation.push_back({"assistant", response});
    return extract_candidate(original, response);
  }

  std::vector<RankedStrategy> retrieve_for(const std::string& proof) {
    const auto spans = segment(proof, config_.chunk_sizes);
    if (index_.size() == 0) {
      event("warning", {{"what", "empty_index"}});
      return {};
    }
    std::vector<std::string> texts;
    for (const auto& s : spans) texts.push_back(s.text);
    const auto vectors = embed(embedder_, texts);

    std::vector<std::vector<RankedStrategy>> per_span;
    std::size_t longest = 0;
    for (std::size_t i = 0; i < spans.size(); ++i) {
      auto hits = retrieve(index_, bank_, vectors[i], config_.objective);
      for (auto& h : hits) h.target_span = spans[i];
      longest = std::max(longest, hits.size());
      per_span.push_back(std::move(hits));
    }
    std::vector<RankedStrategy> merged;
    std::set<std::string> seen;
    for (std::size_t r = 0; r < longest && merged.size() < config_.objective.k; ++r) {
      for (const auto& hits : per_span) {
        if (r >= hits.size() || !seen.insert(hits[r].strategy_id).second) continue;
        merged.push_back(hits[r]);
        if (merged.size() == config_.objective.k) break;
      }
    }
    renumber(merged);
    if (merged.empty() && config_.objective.filters()) {
      event("warning", {{"what", "no_compatible_strategies"}, {"version", *config_.objective.target_version}});
    }
    auto ids = nlohmann::ordered_json::array();
    for (const auto& m : merged) ids.push_back(m.strategy_id);
    event("retrieval", {{"segments", spans.size()}, {"strategies", ids}});
    return merged;
  }

 private:
  void reset() {
    calls_ = 0;
    trace_ = {};
  }

  void event(std::string kind, nlohmann::ordered_json detail) {
    trace_.events.push_back({std::move(kind), calls_, std::move(detail)});
  }

  // Each attempt costs one call, transport failures included.
  std::string call(const std::vector<ChatMessage>& messages, std::string_view role) {
    while (true) {
      if (calls_ >= static_cast<std::size_t>(config_.budget)) throw detail::BudgetExhausted{};
      ++calls_;
      try {
        return llm_.complete(messages, config_.sampling);
      } catch (const RetryableProviderError& e) {
        event("llm_error", {{"role", std::string(role)}, {"error", e.what()}});
      }
    }
  }

  std::string compile_source(std::string_view candidate) const {
    if (config_.preamble.empty()) return std::string(candidate);
    std::string src = config_.preamble;
    if (src.back() != '\n') src += '\n';
    src.append(candidate);
    return src;
  }

  int preamble_lines() const {
    if (config_.preamble.empty()) return 0;
    return static_cast<int>(split_lines(config_.preamble).size());
  }

  std::vector<Diagnostic> relative_diagnostics(std::vector<Diagnostic> diags) const {
    const int shift = preamble_lines();
    for (auto& d : diags) d.line = d.line > shift ? d.line - shift : 0;
    return diags;
  }

  CompileResult compile(std::string_view candidate) {
    CompileRequest req;
    req.source = compile_source(candidate);
    req.toolchain_version = config_.toolchain_version;
    req.timeout_seconds = config_.compile_timeout;
    return compiler_.check(std::move(req));
  }

  void record_compile(const CompileResult& r, int round) {
    event("compile_result", {{"round", round},
                             {"verdict", std::string(to_string(r.verdict))},
                             {"errors", static_cast<std::size_t>(std::count_if(
                                            r.diagnostics.begin(), r.diagnostics.end(),
                                            [](const Diagnostic& d) { return d.severity == "error"; }))}});
  }

  // Refactor, compile, then up to D repair rounds. Returns a compiling
  // candidate or nothing.
  std::optional<std::string> attempt(const std::string& proof, const SessionInput& input, const PlanStep& step) {
    std::vector<ChatMessage> conversation;
    std::string candidate;
    try {
      candidate = refactor_step(proof, input, step, conversation);
    } catch (const StatementMutation&) {
      event("skip", {{"reason", "statement_mutated"}});
      return std::nullopt;
    } catch (const StepFailed& e) {
      event("skip", {{"reason", "no_candidate"}, {"detail", e.what()}});
      return std::nullopt;
    }
    auto result = compile(candidate);
    record_compile(result, 0);
    for (int d = 0; !result.ok() && d < config_.max_debug_rounds; ++d) {
      event("debug_round", {{"round", d + 1}});
      try {
        candidate = debug(proof, candidate, result, d + 1, conversation);
      } catch (const StatementMutation&) {
        event("warning", {{"what", "debug_statement_mutated"}, {"round", d + 1}});
        continue;
      } catch (const StepFailed&) {
        event("warning", {{"what", "debug_no_candidate"}, {"round", d + 1}});
        continue;
      }
      result = compile(candidate);
      record_compile(result, d + 1);
    }
    if (!result.ok()) {
      event("skip", {{"reason", "compile_failed"}});
      return std::nullopt;
    }
    return candidate;
  }

  static std::string extract_candidate(const std::string& original, const std::string& response) {
    auto block = last_lean_block(response);
    if (!block) throw StepFailed("response has no lean code block");
    if (normalized_statement(*block) != normalized_statement(original)) {
      throw StatementMutation("candidate changes the theorem statement");
    }
    return *block;
  }

  static std::optional<nlohmann::json> parse_plan_array(const std::string& response, std::string& problem) {
    auto parsed = last_json_block(response);
    if (!parsed) {
      problem = "no JSON plan list found";
      return std::nullopt;
    }
    if (!parsed->is_array()) {
      problem = "the plan must be a JSON list";
      return std::nullopt;
    }
    return parsed;
  }

  static std::optional<PlanStep> validate_step(const nlohmann::json& j, int nlines, std::string& why) {
    if (!j.is_object()) {
      why = "not an object";
      return std::nullopt;
    }
    PlanStep s;
    if (!j.contains("line_start") || !j["line_start"].is_number_integer() || !j.contains("line_end") ||
        !j["line_end"].is_number_integer()) {
      why = "line range missing or not integral";
      return std::nullopt;
    }
    s.line_start = j["line_start"].get<int>();
    s.line_end = j["line_end"].get<int>();
    if (s.line_start < 1 || s.line_end < s.line_start || s.line_end > nlines) {
      why = "line range " + std::to_string(s.line_start) + "-" + std::to_string(s.line_end) + " outside 1-" +
            std::to_string(nlines);
      return std::nullopt;
    }
    auto red = j.contains("reduction") ? detail::reduction_from_plan(j["reduction"]) : std::nullopt;
    if (!red) {
      why = "reduction must be high, medium or low";
      return std::nullopt;
    }
    s.reduction = *red;
    if (!j.contains("title") || !j["title"].is_string() || j["title"].get<std::string>().empty()) {
      why = "title missing";
      return std::nullopt;
    }
    s.title = j["title"].get<std::string>();
    if (!j.contains("description") || !j["description"].is_string()) {
      why = "description missing";
      return std::nullopt;
    }
    s.description = j["description"].get<std::string>();
    return s;
  }

  std::string render_strategies(const std::vector<RankedStrategy>& retrieved) const {
    if (retrieved.empty()) return "None.";
    std::string out;
    for (const auto& r : retrieved) {
      const Strategy* s = bank_.find_strategy(r.strategy_id);
      if (s == nullptr) continue;
      out += "### " + std::to_string(r.rank) + ". " + s->title + "\n";
      out += "Target location: lines " + std::to_string(r.target_span.line_start) + "-" +
             std::to_string(r.target_span.line_end) + "\n";
      out += "Description: " + s->description + "\n";
      out += "When to apply: " + s->when_to_apply + "\n";
      out += "Application guide:\n";
      for (std::size_t i = 0; i < s->application_guide.size(); ++i) {
        out += "  " + std::to_string(i + 1) + ". " + s->application_guide[i] + "\n";
      }
      out += "Example before:\n" + s->abstract_example.before + "\n";
      out += "Example after:\n" + s->abstract_example.after + "\n";
      out += "Potential reduction: " + std::string(to_string(s->potential_reduction)) + "\n\n";
    }
    while (!out.empty() && out.back() == '\n') out.pop_back();
    return out;
  }

  static std::string render_history(const std::vector<nlohmann::ordered_json>& history) {
    if (history.empty()) return "None.";
    std::string out;
    for (std::size_t i = 0; i < history.size(); ++i) {
      out += std::to_string(i + 1) + ". " + history[i].dump() + "\n";
    }
    out.pop_back();
    return out;
  }

  static std::string or_none(const std::string& s) { return s.empty() ? "None." : s; }

  AgentConfig config_;
  const StrategyBank& bank_;
  const FlatIndex& index_;
  EmbeddingProvider& embedder_;
  ChatModel& llm_;
  CompilerService& compiler_;
  const PromptLibrary& prompts_;
  std::size_t calls_ = 0;
  SessionTrace trace_;
};

}  // namespace lean_refactor
