#pragma once

// Port to the Lean toolchain: compile checks, `--profile` timing split into
// import and elaboration, heartbeat counting, cross-version recompilation.
// Two backends: the real `lake env lean` subprocess and a script-driven mock.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <semaphore>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lean_refactor/detail/hash.hpp"
#include "lean_refactor/detail/subprocess.hpp"
#include "lean_refactor/errors.hpp"
#include "lean_refactor/strategy_bank.hpp"

namespace lean_refactor {

enum class Verdict { success, failure, timeout };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::success: return "success";
    case Verdict::failure: return "failure";
    case Verdict::timeout: return "timeout";
  }
  return "failure";
}

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "success") return Verdict::success;
  if (s == "failure") return Verdict::failure;
  if (s == "timeout") return Verdict::timeout;
  return std::nullopt;
}

struct Diagnostic {
  int line = 0;    // 1-based; 0 when the message has no position
  int column = 0;  // 0-based code-point column, as Lean reports it
  std::string severity = "error";
  std::string message;
  bool operator==(const Diagnostic&) const = default;
};

struct CompileResult {
  Verdict verdict = Verdict::failure;
  std::vector<Diagnostic> diagnostics;
  double wall_time_total = 0.0;  // seconds attributed by the profiler
  double import_time = 0.0;
  double elaboration_time = 0.0;  // wall_time_total - import_time
  std::optional<long long> heartbeats;
  std::string raw_output;

  bool ok() const noexcept { return verdict == Verdict::success; }
};

struct CompileRequest {
  std::string source;
  std::string toolchain_version;
  bool want_profile = false;
  bool want_heartbeats = false;
  double timeout_seconds = 300.0;
};

// ---------------------------------------------------------------------------
// Output parsing

// `file:line:col: severity: message`, continuation lines appended.
inline std::vector<Diagnostic> parse_diagnostics(std::string_view output) {
  static const std::regex header(R"(^(.*?):(\d+):(\d+): (error|warning|info|information): ?(.*)$)");
  std::vector<Diagnostic> out;
  std::istringstream in{std::string(output)};
  std::string line;
  bool in_diag = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (std::regex_match(line, m, header)) {
      out.push_back({std::stoi(m[2].str()), std::stoi(m[3].str()), m[4].str() == "information" ? "info" : m[4].str(),
                     m[5].str()});
      in_diag = true;
    } else if (in_diag && !line.empty() && !line.starts_with("cumulative profiling")) {
      out.back().message += "\n" + line;
    } else {
      in_diag = false;
    }
  }
  return out;
}

inline bool has_errors(const std::vector<Diagnostic>& diags) {
  for (const auto& d : diags) {
    if (d.severity == "error") return true;
  }
  return false;
}

struct ProfileTimes {
  double total = 0.0;
  double import_time = 0.0;
  std::map<std::string, double> categories;
};

namespace detail {

inline double to_seconds(double value, std::string_view unit) {
  if (unit == "s") return value;
  if (unit == "ms") return value / 1e3;
  if (unit == "us" || unit == "μs" || unit == "µs") return value / 1e6;
  if (unit == "ns") return value / 1e9;
  return value;
}

}  // namespace detail

// Prefers the "cumulative profiling times:" block; otherwise sums the
// individual "<category> took <t>" lines. Import time is the "import"
// category; the total is the sum over all categories.
inline ProfileTimes parse_profile(std::string_view output) {
  static const std::regex cumulative_entry(R"(^\s+(.+?)\s+([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)(ns|us|μs|µs|ms|s)\s*$)");
  static const std::regex took(R"(^(.+?) took ([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)(ns|us|μs|µs|ms|s)\s*$)");
  ProfileTimes cumulative, individual;
  bool have_cumulative = false, in_block = false;
  std::istringstream in{std::string(output)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.starts_with("cumulative profiling times:")) {
      in_block = true;
      have_cumulative = true;
      continue;
    }
    std::smatch m;
    if (in_block) {
      if (std::regex_match(line, m, cumulative_entry)) {
        cumulative.categories[m[1].str()] += detail::to_seconds(std::stod(m[2].str()), m[3].str());
        continue;
      }
      in_block = false;
    }
    if (std::regex_match(line, m, took)) {
      std::string category = m[1].str();
      if (auto of = category.find(" of "); of != std::string::npos) category.resize(of);
      individual.categories[category] += detail::to_seconds(std::stod(m[2].str()), m[3].str());
    }
  }
  ProfileTimes res = have_cumulative && !cumulative.categories.empty() ? cumulative : individual;
  if (res.categories.empty()) throw ProfileParseError("no profiler timings in compiler output", std::string(output));
  for (const auto& [cat, t] : res.categories) {
    res.total += t;
    if (cat == "import") res.import_time += t;
  }
  return res;
}

inline std::optional<long long> parse_heartbeats(std::string_view output) {
  static const std::regex used(R"(Used ([0-9]+) heartbeats)");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(output.begin(), output.end(), m, used)) return std::stoll(m[1].str());
  return std::nullopt;
}

inline constexpr std::string_view kHeartbeatPrelude = "set_option Elab.async false in\n#count_heartbeats in\n";

// Measurement file for one declaration: the two directives, then the
// declaration verbatim. A non-empty preamble (imports, opens) goes first.
inline std::string heartbeat_wrapper(std::string_view decl_source, std::string_view preamble = {}) {
  std::string out;
  if (!preamble.empty()) {
    out.append(preamble);
    if (out.back() != '\n') out += '\n';
  }
  out.append(kHeartbeatPrelude);
  out.append(decl_source);
  return out;
}

// ---------------------------------------------------------------------------
// Backends

class CompilerBackend {
 public:
  virtual ~CompilerBackend() = default;
  // Throws EnvironmentError when the toolchain cannot be used.
  virtual CompileResult run(const CompileRequest& req) = 0;
};

// Invokes `lake env lean [--profile] <scratch>/Main.lean` with the working
// directory at the registered environment root.
class LeanCompiler : public CompilerBackend {
 public:
  struct Options {
    std::string lake_command = "lake";
    bool keep_scratch = false;
  };

  explicit LeanCompiler(ToolchainRegistry registry) : LeanCompiler(std::move(registry), Options{}) {}
  LeanCompiler(ToolchainRegistry registry, Options options)
      : registry_(std::move(registry)), options_(std::move(options)) {}

  CompileResult run(const CompileRequest& req) override {
    const ToolchainEntry* entry = nullptr;
    try {
      entry = &registry_.at(req.toolchain_version);
    } catch (const UnknownVersion&) {
      throw EnvironmentError("toolchain " + req.toolchain_version + " is not registered");
    }
    std::error_code ec;
    if (entry->root.empty() || !std::filesystem::is_directory(entry->root, ec)) {
      throw EnvironmentError("environment root for " + req.toolchain_version + " is missing: " + entry->root.string());
    }

    const auto scratch_rel = std::filesystem::path(".refactor-scratch") / next_session_id();
    const auto scratch = entry->root / scratch_rel;
    std::filesystem::create_directories(scratch);
    {
      std::ofstream f(scratch / "Main.lean", std::ios::binary);
      f << req.source;
    }

    std::vector<std::string> argv{options_.lake_command, "env", "lean"};
    if (req.want_profile) argv.emplace_back("--profile");
    argv.push_back((scratch_rel / "Main.lean").string());
    detail::ProcessResult proc;
    try {
      proc = detail::run_process(argv, entry->root, req.timeout_seconds);
    } catch (...) {
      cleanup(scratch);
      throw;
    }
    cleanup(scratch);
    if (proc.exit_code == 127) throw EnvironmentError("could not execute " + options_.lake_command);
    return interpret(proc, req);
  }

  static CompileResult interpret(const detail::ProcessResult& proc, const CompileRequest& req) {
    CompileResult res;
    res.raw_output = proc.output;
    res.diagnostics = parse_diagnostics(proc.output);
    if (proc.timed_out) {
      res.verdict = Verdict::timeout;
      return res;
    }
    res.verdict = (proc.exit_code == 0 && !has_errors(res.diagnostics)) ? Verdict::success : Verdict::failure;
    if (res.verdict == Verdict::failure && !has_errors(res.diagnostics)) {
      res.diagnostics.push_back({0, 0, "error", proc.output.empty() ? "compiler exited with status " +
                                                                        std::to_string(proc.exit_code)
                                                                  : proc.output});
    }
    res.wall_time_total = proc.wall_seconds;
    if (req.want_profile && res.ok()) {
      const auto times = parse_profile(proc.output);
      res.wall_time_total = times.total;
      res.import_time = times.import_time;
      res.elaboration_time = times.total - times.import_time;
    }
    if (req.want_heartbeats && res.ok()) {
      res.heartbeats = parse_heartbeats(proc.output);
      if (!res.heartbeats) throw HeartbeatParseError("no heartbeat count in compiler output");
    }
    return res;
  }

 private:
  std::string next_session_id() {
    static std::atomic<unsigned long> counter{0};
    std::ostringstream os;
    os << "s" << getpid() << "-" << counter.fetch_add(1) << "-" << std::random_device{}();
    return os.str();
  }

  void cleanup(const std::filesystem::path& scratch) const {
    if (options_.keep_scratch) return;
    std::error_code ec;
    std::filesystem::remove_all(scratch, ec);
  }

  ToolchainRegistry registry_;
  Options options_;
};

// Script-driven stand-in. Script format (JSON, "format":
// "lean-refactor-mock-compiler", "version": 1):
//
//   {
//     "missing_toolchains": ["v4.14.0"],
//     "rules": [
//       {"match": {"contains": "..."} | {"source": "..."} | {"sha256": "..."},
//        "toolchain": "v4.16.0",            // optional
//        "result": {"verdict": "failure",
//                   "diagnostics": [{"line": 3, "column": 5, "message": "..."}],
//                   "total": 2.0, "import": 0.5, "heartbeats": 36300,
//                   "output": "raw compiler text"}}
//     ],
//     "default": {"verdict": "success"}
//   }
//
// The first matching rule wins. When a result carries "output", profile and
// heartbeat figures not given explicitly are parsed from it. Every answer is
// a pure function of (source, toolchain, script).
class MockCompiler : public CompilerBackend {
 public:
  static constexpr std::string_view kFormat = "lean-refactor-mock-compiler";

  explicit MockCompiler(nlohmann::json script) : script_(std::move(script)) {
    if (script_.value("format", std::string{}) != kFormat || script_.value("version", 0) != 1) {
      throw SchemaError("format", 0, "not a version 1 mock compiler script");
    }
    if (script_.contains("rules") && !script_["rules"].is_array()) throw SchemaError("rules", 0, "expected an array");
  }

  static MockCompiler from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mock compiler script " + path.string());
    return MockCompiler(nlohmann::json::parse(in));
  }

  CompileResult run(const CompileRequest& req) override {
    calls_.fetch_add(1);
    if (script_.contains("missing_toolchains")) {
      for (const auto& v : script_["missing_toolchains"]) {
        if (v == req.toolchain_version) throw EnvironmentError("mock: toolchain " + req.toolchain_version + " missing");
      }
    }
    const nlohmann::json* result = nullptr;
    if (script_.contains("rules")) {
      for (const auto& rule : script_["rules"]) {
        if (matches(rule, req)) {
          result = &rule.at("result");
          break;
        }
      }
    }
    if (result == nullptr && script_.contains("default")) result = &script_["default"];
    if (result == nullptr) {
      CompileResult r;
      r.diagnostics.push_back({1, 0, "error", "mock: no scripted result for this source"});
      return r;
    }
    return materialize(*result, req);
  }

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  static bool matches(const nlohmann::json& rule, const CompileRequest& req) {
    if (rule.contains("toolchain") && rule["toolchain"] != req.toolchain_version) return false;
    const auto& m = rule.value("match", nlohmann::json::object());
    if (m.contains("source") && m["source"].get<std::string>() != req.source) return false;
    if (m.contains("sha256") && m["sha256"].get<std::string>() != detail::sha256_hex(req.source)) return false;
    if (m.contains("contains")) {
      const auto& c = m["contains"];
      if (c.is_string()) {
        if (req.source.find(c.get<std::string>()) == std::string::npos) return false;
      } else {
        for (const auto& s : c) {
          if (req.source.find(s.get<std::string>()) == std::string::npos) return false;
        }
      }
    }
    if (m.contains("not_contains")) {
      for (const auto& s : m["not_contains"]) {
        if (req.source.find(s.get<std::string>()) != std::string::npos) return false;
      }
    }
    return true;
  }

  static CompileResult materialize(const nlohmann::json& r, const CompileRequest& req) {
    CompileResult res;
    const auto verdict = parse_verdict(r.value("verdict", std::string("success")));
    if (!verdict) throw SchemaError("verdict", 0, "mock result verdict must be success, failure or timeout");
    res.verdict = *verdict;
    res.raw_output = r.value("output", std::string{});
    if (r.contains("diagnostics")) {
      for (const auto& d : r["diagnostics"]) {
        res.diagnostics.push_back({d.value("line", 0), d.value("column", 0), d.value("severity", std::string("error")),
                                   d.value("message", std::string{})});
      }
    } else if (!res.raw_output.empty()) {
      res.diagnostics = parse_diagnostics(res.raw_output);
    }
    if (res.verdict == Verdict::failure && !has_errors(res.diagnostics)) {
      res.diagnostics.push_back({0, 0, "error", "mock: scripted failure"});
    }
    if (req.want_profile && res.ok()) {
      if (r.contains("total")) {
        res.wall_time_total = r["total"].get<double>();
        res.import_time = r.value("import", 0.0);
      } else {
        const auto times = parse_profile(res.raw_output);
        res.wall_time_total = times.total;
        res.import_time = times.import_time;
      }
      res.elaboration_time = res.wall_time_total - res.import_time;
    }
    if (req.want_heartbeats && res.ok()) {
      if (r.contains("heartbeats")) {
        res.heartbeats = r["heartbeats"].get<long long>();
      } else {
        res.heartbeats = parse_heartbeats(res.raw_output);
        if (!res.heartbeats) throw HeartbeatParseError("mock: no heartbeat count in scripted output");
      }
    }
    return res;
  }

  nlohmann::json script_;
  std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Front end used by the agent and the pipeline.

struct ProfileStats {
  std::vector<CompileResult> samples;
  double mean_total = 0.0;
  double mean_import = 0.0;
  double mean_elaboration = 0.0;
  double std_elaboration = 0.0;  // population std over the runs
};

enum class MatrixVerdict { success, failure, timeout, environment_error };

inline std::string_view to_string(MatrixVerdict v) {
  switch (v) {
    case MatrixVerdict::success: return "success";
    case MatrixVerdict::failure: return "failure";
    case MatrixVerdict::timeout: return "timeout";
    case MatrixVerdict::environment_error: return "environment_error";
  }
  return "failure";
}

// Plain checks run concurrently up to `max_concurrent`; profiling and
// heartbeat measurements take the measurement lock exclusively, so they never
// overlap any other compile.
class CompilerService {
 public:
  explicit CompilerService(std::shared_ptr<CompilerBackend> backend, std::ptrdiff_t max_concurrent = 4)
      : backend_(std::move(backend)), slots_(std::max<std::ptrdiff_t>(1, std::min<std::ptrdiff_t>(max_concurrent, 64))) {
    if (!backend_) throw ConfigError("compiler backend is null");
  }

  CompileResult check(CompileRequest req) {
    if (!(req.timeout_seconds > 0)) throw ConfigError("compile timeout must be positive");
    req.want_profile = false;
    req.want_heartbeats = false;
    std::shared_lock measure(measurement_);
    slots_.acquire();
    struct Release {
      std::counting_semaphore<64>& s;
      ~Release() { s.release(); }
    } release{slots_};
    return backend_->run(req);
  }

  CompileResult profile(CompileRequest req) {
    req.want_profile = true;
    std::unique_lock measure(measurement_);
    return backend_->run(req);
  }

  // Serialized series of `runs` profiled compilations.
  ProfileStats profile_repeated(CompileRequest req, int runs = 5) {
    if (runs < 1) throw ConfigError("profile runs must be >= 1");
    req.want_profile = true;
    ProfileStats stats;
    {
      std::unique_lock measure(measurement_);
      for (int i = 0; i < runs; ++i) stats.samples.push_back(backend_->run(req));
    }
    std::vector<double> elab;
    for (const auto& s : stats.samples) {
      if (!s.ok()) continue;
      stats.mean_total += s.wall_time_total;
      stats.mean_import += s.import_time;
      elab.push_back(s.elaboration_time);
    }
    if (!elab.empty()) {
      const auto n = static_cast<double>(elab.size());
      stats.mean_total /= n;
      stats.mean_import /= n;
      for (double e : elab) stats.mean_elaboration += e;
      stats.mean_elaboration /= n;
      double var = 0.0;
      for (double e : elab) var += (e - stats.mean_elaboration) * (e - stats.mean_elaboration);
      stats.std_elaboration = std::sqrt(var / n);
    }
    return stats;
  }

  CompileResult count_heartbeats(std::string_view decl_source, CompileRequest req, std::string_view preamble = {}) {
    req.source = heartbeat_wrapper(decl_source, preamble);
    req.want_heartbeats = true;
    std::unique_lock measure(measurement_);
    auto res = backend_->run(req);
    if (res.ok() && !res.heartbeats) throw HeartbeatParseError("compiler reported no heartbeat count");
    return res;
  }

  // One independent check per version; a version whose environment is
  // unusable records environment_error without aborting the others.
  std::map<std::string, MatrixVerdict> cross_version_matrix(const std::string& source,
                                                            const std::vector<std::string>& versions,
                                                            double timeout_seconds = 300.0) {
    std::vector<std::future<MatrixVerdict>> jobs;
    for (const auto& v : versions) {
      jobs.push_back(std::async(std::launch::async, [this, &source, v, timeout_seconds] {
        try {
          const auto r = check({source, v, false, false, timeout_seconds});
          switch (r.verdict) {
            case Verdict::success: return MatrixVerdict::success;
            case Verdict::timeout: return MatrixVerdict::timeout;
            case Verdict::failure: return MatrixVerdict::failure;
          }
        } catch (const EnvironmentError&) {
          return MatrixVerdict::environment_error;
        }
        return MatrixVerdict::failure;
      }));
    }
    std::map<std::string, MatrixVerdict> out;
    for (std::size_t i = 0; i < versions.size(); ++i) out[versions[i]] = jobs[i].get();
    return out;
  }

  CompilerBackend& backend() noexcept { return *backend_; }

 private:
  std::shared_ptr<CompilerBackend> backend_;
  std::shared_mutex measurement_;
  std::counting_semaphore<64> slots_;
};

}  // namespace lean_refactor
