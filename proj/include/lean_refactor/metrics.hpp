#pragma once

// Evaluation aggregates over refactoring runs: length, compile-time and
// heartbeat reductions, cross-version transfer and dependency deltas.

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lean_refactor/errors.hpp"

namespace lean_refactor {

inline double relative_reduction(double before, double after) {
  if (!(before > 0.0)) throw InvalidBaseline("baseline must be positive, got " + std::to_string(before));
  return 100.0 * (before - after) / before;
}

struct EvalRecord {
  std::string theorem_id;
  std::size_t initial_length = 0;
  std::size_t final_length = 0;
  std::vector<double> compile_before;  // seconds, one per run
  std::vector<double> compile_after;
  std::optional<long long> heartbeats_before;
  std::optional<long long> heartbeats_after;
  std::optional<std::vector<std::string>> dependencies_before;
  std::optional<std::vector<std::string>> dependencies_after;
  std::map<std::string, bool> transfer;  // toolchain -> refactored proof compiles

  void validate() const {
    if (!compile_before.empty() && !compile_after.empty() && compile_before.size() != compile_after.size()) {
      throw Error(theorem_id + ": before/after compile sample counts differ");
    }
  }
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(var / static_cast<double>(xs.size()));
  return m;
}

struct EvalReport {
  std::size_t proofs = 0;
  double mean_length_reduction_pct = 0.0;
  double mean_length_reduction_tokens = 0.0;
  double mean_initial_length = 0.0;
  double mean_final_length = 0.0;

  // Across compilation runs of the dataset-level means.
  std::size_t compile_proofs = 0;
  std::size_t compile_runs = 0;
  MeanStd compile_before_s;
  MeanStd compile_after_s;
  MeanStd compile_reduction_pct;

  std::size_t heartbeat_proofs = 0;
  double mean_heartbeat_reduction_pct = 0.0;

  std::map<std::string, std::size_t> transfer_ok;
  std::map<std::string, std::size_t> transfer_total;

  std::size_t dependency_proofs = 0;
  std::size_t dependencies_reduced = 0;
  std::size_t dependencies_increased = 0;
  std::size_t dependencies_unchanged = 0;
};

inline EvalReport summarize(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw Error("summarize needs at least one record");
  EvalReport r;
  r.proofs = records.size();
  const double n = static_cast<double>(records.size());
  for (const auto& rec : records) {
    rec.validate();
    r.mean_length_reduction_pct +=
        relative_reduction(static_cast<double>(rec.initial_length), static_cast<double>(rec.final_length));
    r.mean_length_reduction_tokens += static_cast<double>(rec.initial_length) - static_cast<double>(rec.final_length);
    r.mean_initial_length += static_cast<double>(rec.initial_length);
    r.mean_final_length += static_cast<double>(rec.final_length);
  }
  r.mean_length_reduction_pct /= n;
  r.mean_length_reduction_tokens /= n;
  r.mean_initial_length /= n;
  r.mean_final_length /= n;

  std::vector<const EvalRecord*> timed;
  for (const auto& rec : records) {
    if (!rec.compile_before.empty() && !rec.compile_after.empty()) timed.push_back(&rec);
  }
  if (!timed.empty()) {
    const std::size_t runs = timed.front()->compile_before.size();
    for (const auto* rec : timed) {
      if (rec->compile_before.size() != runs) throw Error("records carry different numbers of compile runs");
    }
    std::vector<double> before, after, red;
    for (std::size_t k = 0; k < runs; ++k) {
      double b = 0.0, a = 0.0, pr = 0.0;
      for (const auto* rec : timed) {
        b += rec->compile_before[k];
        a += rec->compile_after[k];
        pr += relative_reduction(rec->compile_before[k], rec->compile_after[k]);
      }
      const double m = static_cast<double>(timed.size());
      before.push_back(b / m);
      after.push_back(a / m);
      red.push_back(pr / m);
    }
    r.compile_proofs = timed.size();
    r.compile_runs = runs;
    r.compile_before_s = mean_std(before);
    r.compile_after_s = mean_std(after);
    r.compile_reduction_pct = mean_std(red);
  }

  for (const auto& rec : records) {
    if (!rec.heartbeats_before || !rec.heartbeats_after) continue;
    ++r.heartbeat_proofs;
    r.mean_heartbeat_reduction_pct += relative_reduction(static_cast<double>(*rec.heartbeats_before),
                                                         static_cast<double>(*rec.heartbeats_after));
  }
  if (r.heartbeat_proofs > 0) r.mean_heartbeat_reduction_pct /= static_cast<double>(r.heartbeat_proofs);

  for (const auto& rec : records) {
    for (const auto& [version, ok] : rec.transfer) {
      ++r.transfer_total[version];
      r.transfer_ok[version] += ok ? 1 : 0;
    }
  }

  for (const auto& rec : records) {
    if (!rec.dependencies_before || !rec.dependencies_after) continue;
    ++r.dependency_proofs;
    const std::set<std::string> b(rec.dependencies_before->begin(), rec.dependencies_before->end());
    const std::set<std::string> a(rec.dependencies_after->begin(), rec.dependencies_after->end());
    if (a.size() < b.size()) ++r.dependencies_reduced;
    else if (a.size() > b.size()) ++r.dependencies_increased;
    else ++r.dependencies_unchanged;
  }
  return r;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  auto ms = [](const MeanStd& m) { return nlohmann::ordered_json{{"mean", m.mean}, {"std", m.std}}; };
  nlohmann::ordered_json transfer = nlohmann::ordered_json::object();
  for (const auto& [v, total] : r.transfer_total) {
    transfer[v] = {{"compiles", r.transfer_ok.at(v)}, {"total", total}};
  }
  return {{"schema_version", 1},
          {"proofs", r.proofs},
          {"length",
           {{"mean_reduction_pct", r.mean_length_reduction_pct},
            {"mean_reduction_tokens", r.mean_length_reduction_tokens},
            {"mean_initial", r.mean_initial_length},
            {"mean_final", r.mean_final_length}}},
          {"compile_time",
           {{"proofs", r.compile_proofs},
            {"runs", r.compile_runs},
            {"before_s", ms(r.compile_before_s)},
            {"after_s", ms(r.compile_after_s)},
            {"reduction_pct", ms(r.compile_reduction_pct)}}},
          {"heartbeats", {{"proofs", r.heartbeat_proofs}, {"mean_reduction_pct", r.mean_heartbeat_reduction_pct}}},
          {"transfer", transfer},
          {"dependencies",
           {{"proofs", r.dependency_proofs},
            {"reduced", r.dependencies_reduced},
            {"increased", r.dependencies_increased},
            {"no_change", r.dependencies_unchanged}}}};
}

namespace detail {

inline std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string table_row(const std::string& label, const std::string& value) {
  std::string row = label;
  row.resize(std::max<std::size_t>(row.size() + 1, 34), ' ');
  return row + value + "\n";
}

}  // namespace detail

inline std::string render_table(const EvalReport& r) {
  using detail::fixed2;
  using detail::table_row;
  std::string out;
  out += table_row("proofs", std::to_string(r.proofs));
  out += table_row("length reduction (%)", fixed2(r.mean_length_reduction_pct));
  out += table_row("length reduction (tokens)", fixed2(r.mean_length_reduction_tokens));
  out += table_row("mean length before/after", fixed2(r.mean_initial_length) + " / " + fixed2(r.mean_final_length));
  if (r.compile_runs > 0) {
    out += table_row("compile time before (s)", fixed2(r.compile_before_s.mean) + " ± " + fixed2(r.compile_before_s.std));
    out += table_row("compile time after (s)", fixed2(r.compile_after_s.mean) + " ± " + fixed2(r.compile_after_s.std));
    out += table_row("compile time reduction (%)",
                     fixed2(r.compile_reduction_pct.mean) + " ± " + fixed2(r.compile_reduction_pct.std) + "  (" +
                         std::to_string(r.compile_proofs) + " proofs, " + std::to_string(r.compile_runs) + " runs)");
  }
  if (r.heartbeat_proofs > 0) {
    out += table_row("heartbeat reduction (%)", fixed2(r.mean_heartbeat_reduction_pct));
  }
  for (const auto& [v, total] : r.transfer_total) {
    out += table_row("transfer " + v, std::to_string(r.transfer_ok.at(v)) + " / " + std::to_string(total));
  }
  if (r.dependency_proofs > 0) {
    out += table_row("dependencies reduced/increased/same", std::to_string(r.dependencies_reduced) + " / " +
                                                                std::to_string(r.dependencies_increased) + " / " +
                                                                std::to_string(r.dependencies_unchanged));
  }
  return out;
}

inline EvalRecord eval_record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  try {
    r.theorem_id = j.at("theorem_id").get<std::string>();
    r.initial_length = j.at("initial_length").get<std::size_t>();
    r.final_length = j.at("final_length").get<std::size_t>();
    if (j.contains("compile_before")) r.compile_before = j["compile_before"].get<std::vector<double>>();
    if (j.contains("compile_after")) r.compile_after = j["compile_after"].get<std::vector<double>>();
    if (j.contains("heartbeats_before") && !j["heartbeats_before"].is_null()) {
      r.heartbeats_before = j["heartbeats_before"].get<long long>();
    }
    if (j.contains("heartbeats_after") && !j["heartbeats_after"].is_null()) {
      r.heartbeats_after = j["heartbeats_after"].get<long long>();
    }
    if (j.contains("dependencies_before")) r.dependencies_before = j["dependencies_before"].get<std::vector<std::string>>();
    if (j.contains("dependencies_after")) r.dependencies_after = j["dependencies_after"].get<std::vector<std::string>>();
    if (j.contains("transfer")) r.transfer = j["transfer"].get<std::map<std::string, bool>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("eval_record", 0, e.what());
  }
  r.validate();
  return r;
}

}  // namespace lean_refactor
