#pragma once

// Data model for refactoring strategies and the long/short proof pairs they
// are distilled from, plus the cluster-level metadata aggregation and the
// newline-delimited JSON persistence format.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lean_refactor/detail/hash.hpp"
#include "lean_refactor/errors.hpp"

namespace lean_refactor {

using VersionSet = std::set<std::string>;

enum class Reduction { high, medium, low };

inline std::string_view to_string(Reduction r) {
  switch (r) {
    case Reduction::high: return "high";
    case Reduction::medium: return "medium";
    case Reduction::low: return "low";
  }
  return "low";
}

inline std::optional<Reduction> parse_reduction(std::string_view s) {
  if (s == "high") return Reduction::high;
  if (s == "medium") return Reduction::medium;
  if (s == "low") return Reduction::low;
  return std::nullopt;
}

// Larger is more significant.
inline int reduction_weight(Reduction r) {
  switch (r) {
    case Reduction::high: return 3;
    case Reduction::medium: return 2;
    case Reduction::low: return 1;
  }
  return 0;
}

enum class VersionStatus { compiles, fails, untested };

inline std::string_view to_string(VersionStatus s) {
  switch (s) {
    case VersionStatus::compiles: return "compiles";
    case VersionStatus::fails: return "fails";
    case VersionStatus::untested: return "untested";
  }
  return "untested";
}

inline std::optional<VersionStatus> parse_version_status(std::string_view s) {
  if (s == "compiles") return VersionStatus::compiles;
  if (s == "fails") return VersionStatus::fails;
  if (s == "untested") return VersionStatus::untested;
  return std::nullopt;
}

enum class SourceCorpus { numina_math, fine_lean_corpus, mathlib, atlas, other };

inline std::string_view to_string(SourceCorpus s) {
  switch (s) {
    case SourceCorpus::numina_math: return "numina_math";
    case SourceCorpus::fine_lean_corpus: return "fine_lean_corpus";
    case SourceCorpus::mathlib: return "mathlib";
    case SourceCorpus::atlas: return "atlas";
    case SourceCorpus::other: return "other";
  }
  return "other";
}

inline std::optional<SourceCorpus> parse_source_corpus(std::string_view s) {
  if (s == "numina_math") return SourceCorpus::numina_math;
  if (s == "fine_lean_corpus") return SourceCorpus::fine_lean_corpus;
  if (s == "mathlib") return SourceCorpus::mathlib;
  if (s == "atlas") return SourceCorpus::atlas;
  if (s == "other") return SourceCorpus::other;
  return std::nullopt;
}

struct AbstractExample {
  std::string before;
  std::string after;
  bool operator==(const AbstractExample&) const = default;
};

struct Strategy {
  std::string id;
  std::string title;
  std::string description;
  std::string when_to_apply;  // also the retrieval key
  std::vector<std::string> application_guide;
  AbstractExample abstract_example;
  Reduction potential_reduction = Reduction::low;
  std::optional<double> median_compile_reduction;  // absent: no profiled members
  VersionSet compatibility_set;                    // empty: native toolchain only
  std::vector<std::string> member_pair_ids;

  bool operator==(const Strategy&) const = default;
};

struct GroundedSpan {
  std::string strategy_id;
  int line_start = 1;
  int line_end = 1;
  bool operator==(const GroundedSpan&) const = default;
};

// `long_proof` and `short_proof` hold complete declarations (statement and
// proof), which is what the tokenizer metric and the compiler consume.
struct ProofPair {
  std::string id;
  std::string statement;
  std::string long_proof;
  std::string short_proof;
  SourceCorpus source_corpus = SourceCorpus::other;
  bool long_verified = false;
  bool short_verified = false;
  std::optional<double> compile_reduction;
  std::map<std::string, VersionStatus> version_status;
  std::vector<GroundedSpan> grounded_spans;

  bool operator==(const ProofPair&) const = default;
};

inline std::size_t line_count(std::string_view text) {
  if (text.empty()) return 0;
  std::size_t n = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  if (text.back() != '\n') ++n;
  return n;
}

inline std::string strategy_content_id(const Strategy& s) {
  std::string canon = s.title + '\x1f' + s.description + '\x1f' + s.when_to_apply + '\x1f';
  for (const auto& step : s.application_guide) canon += step + '\x1e';
  canon += '\x1f' + s.abstract_example.before + '\x1f' + s.abstract_example.after;
  return detail::content_id(canon);
}

inline std::string pair_content_id(const ProofPair& p) {
  return detail::content_id(p.statement + '\x1f' + p.long_proof + '\x1f' + p.short_proof);
}

// ---------------------------------------------------------------------------
// Toolchain registry

struct ToolchainEntry {
  std::string version;
  std::filesystem::path root;
  bool operator==(const ToolchainEntry&) const = default;
};

class ToolchainRegistry {
 public:
  ToolchainRegistry() = default;

  explicit ToolchainRegistry(std::vector<ToolchainEntry> entries) : entries_(std::move(entries)) {
    std::set<std::string> seen;
    for (const auto& e : entries_) {
      if (e.version.empty()) throw ConfigError("toolchain registry: empty version identifier");
      if (!seen.insert(e.version).second) throw ConfigError("toolchain registry: duplicate version " + e.version);
    }
  }

  // {"schema_version": 1, "toolchains": [{"version": "...", "root": "..."}]}
  // The first entry is the native toolchain. Relative roots resolve against
  // the config file's directory.
  static ToolchainRegistry load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open toolchain registry " + path.string());
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("toolchain registry " + path.string() + ": " + e.what());
    }
    if (doc.value("schema_version", 0) != 1) throw ConfigError("toolchain registry: unsupported schema_version");
    if (!doc.contains("toolchains") || !doc["toolchains"].is_array()) {
      throw ConfigError("toolchain registry: missing 'toolchains' array");
    }
    std::vector<ToolchainEntry> entries;
    for (const auto& t : doc["toolchains"]) {
      if (!t.is_object() || !t.contains("version") || !t["version"].is_string()) {
        throw ConfigError("toolchain registry: entry without string 'version'");
      }
      std::filesystem::path root = t.value("root", std::string{});
      if (!root.empty() && root.is_relative()) root = path.parent_path() / root;
      entries.push_back({t["version"].get<std::string>(), root});
    }
    return ToolchainRegistry(std::move(entries));
  }

  const std::vector<ToolchainEntry>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }

  const std::string& native() const {
    if (entries_.empty()) throw ConfigError("toolchain registry is empty");
    return entries_.front().version;
  }

  bool contains(std::string_view version) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.version == version; });
  }

  const ToolchainEntry& at(std::string_view version) const {
    for (const auto& e : entries_) {
      if (e.version == version) return e;
    }
    throw UnknownVersion(std::string(version));
  }

  std::vector<std::string> versions() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.version);
    return out;
  }

  std::vector<std::string> non_native_versions() const {
    std::vector<std::string> out;
    for (std::size_t i = 1; i < entries_.size(); ++i) out.push_back(entries_[i].version);
    return out;
  }

 private:
  std::vector<ToolchainEntry> entries_;
};

// ---------------------------------------------------------------------------
// Aggregation

// Median; even length takes the mean of the two middle values.
inline double aggregate_compile_reduction(std::span<const double> reductions) {
  if (reductions.empty()) throw EmptyCluster();
  std::vector<double> v(reductions.begin(), reductions.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lower + upper) / 2.0;
}

inline VersionSet aggregate_compatibility(std::span<const VersionSet> sets) {
  if (sets.empty()) throw EmptyCluster();
  VersionSet acc = sets.front();
  for (std::size_t i = 1; i < sets.size() && !acc.empty(); ++i) {
    VersionSet next;
    std::set_intersection(acc.begin(), acc.end(), sets[i].begin(), sets[i].end(), std::inserter(next, next.end()));
    acc = std::move(next);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Bank

struct StrategyBank {
  ToolchainRegistry registry;
  std::vector<Strategy> strategies;
  std::vector<ProofPair> pairs;

  const Strategy* find_strategy(std::string_view id) const {
    for (const auto& s : strategies) {
      if (s.id == id) return &s;
    }
    return nullptr;
  }
  Strategy* find_strategy(std::string_view id) {
    return const_cast<Strategy*>(std::as_const(*this).find_strategy(id));
  }
  const ProofPair* find_pair(std::string_view id) const {
    for (const auto& p : pairs) {
      if (p.id == id) return &p;
    }
    return nullptr;
  }
  ProofPair* find_pair(std::string_view id) { return const_cast<ProofPair*>(std::as_const(*this).find_pair(id)); }
};

struct StrategyMetadata {
  std::optional<double> median_compile_reduction;
  VersionSet compatibility_set;
  bool operator==(const StrategyMetadata&) const = default;
};

// Versions under which a pair's short proof is known to compile. Mathlib
// pairs and pairs never tested off the native toolchain are not eligible.
inline std::optional<VersionSet> compatible_versions(const ProofPair& pair) {
  if (pair.source_corpus == SourceCorpus::mathlib) return std::nullopt;
  bool tested = false;
  VersionSet out;
  for (const auto& [version, status] : pair.version_status) {
    if (status == VersionStatus::untested) continue;
    tested = true;
    if (status == VersionStatus::compiles) out.insert(version);
  }
  if (!tested) return std::nullopt;
  return out;
}

inline StrategyMetadata recompute_metadata(const Strategy& s, const StrategyBank& bank) {
  std::vector<double> reductions;
  std::vector<VersionSet> compat;
  for (const auto& pid : s.member_pair_ids) {
    const ProofPair* p = bank.find_pair(pid);
    if (p == nullptr) continue;
    if (p->compile_reduction) reductions.push_back(*p->compile_reduction);
    if (auto v = compatible_versions(*p)) compat.push_back(std::move(*v));
  }
  StrategyMetadata md;
  if (!reductions.empty()) md.median_compile_reduction = aggregate_compile_reduction(reductions);
  if (!compat.empty()) md.compatibility_set = aggregate_compatibility(compat);
  return md;
}

struct Discrepancy {
  std::string strategy_id;
  std::string field;
  std::string stored;
  std::string recomputed;
};

namespace detail {

inline std::string describe(const std::optional<double>& v) {
  if (!v) return "absent";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

inline std::string describe(const VersionSet& s) {
  std::string out = "{";
  for (const auto& v : s) {
    if (out.size() > 1) out += ", ";
    out += v;
  }
  return out + "}";
}

}  // namespace detail

// Reports every strategy whose stored metadata differs from what its members
// imply, and every member id that does not resolve to a pair.
inline std::vector<Discrepancy> recheck(const StrategyBank& bank) {
  std::vector<Discrepancy> out;
  for (const auto& s : bank.strategies) {
    for (const auto& pid : s.member_pair_ids) {
      if (bank.find_pair(pid) == nullptr) out.push_back({s.id, "member_pair_ids", pid, "missing pair"});
    }
    const StrategyMetadata md = recompute_metadata(s, bank);
    if (md.median_compile_reduction != s.median_compile_reduction) {
      out.push_back({s.id, "median_compile_reduction", detail::describe(s.median_compile_reduction),
                     detail::describe(md.median_compile_reduction)});
    }
    if (md.compatibility_set != s.compatibility_set) {
      out.push_back({s.id, "compatibility_set", detail::describe(s.compatibility_set),
                     detail::describe(md.compatibility_set)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/strategies.jsonl and <dir>/pairs.jsonl, one record per
// line, keys exactly the field names.

inline constexpr std::string_view kStrategiesFile = "strategies.jsonl";
inline constexpr std::string_view kPairsFile = "pairs.jsonl";

inline nlohmann::ordered_json to_json(const Strategy& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["title"] = s.title;
  j["description"] = s.description;
  j["when_to_apply"] = s.when_to_apply;
  j["application_guide"] = s.application_guide;
  j["abstract_example"] = {{"before", s.abstract_example.before}, {"after", s.abstract_example.after}};
  j["potential_reduction"] = to_string(s.potential_reduction);
  j["median_compile_reduction"] =
      s.median_compile_reduction ? nlohmann::ordered_json(*s.median_compile_reduction) : nlohmann::ordered_json();
  j["compatibility_set"] = s.compatibility_set;
  j["member_pair_ids"] = s.member_pair_ids;
  return j;
}

inline nlohmann::ordered_json to_json(const ProofPair& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["statement"] = p.statement;
  j["long_proof"] = p.long_proof;
  j["short_proof"] = p.short_proof;
  j["source_corpus"] = to_string(p.source_corpus);
  j["long_verified"] = p.long_verified;
  j["short_verified"] = p.short_verified;
  j["compile_reduction"] = p.compile_reduction ? nlohmann::ordered_json(*p.compile_reduction) : nlohmann::ordered_json();
  nlohmann::ordered_json vs = nlohmann::ordered_json::object();
  for (const auto& [v, st] : p.version_status) vs[v] = to_string(st);
  j["version_status"] = vs;
  nlohmann::ordered_json spans = nlohmann::ordered_json::array();
  for (const auto& g : p.grounded_spans) {
    spans.push_back({{"strategy_id", g.strategy_id}, {"line_start", g.line_start}, {"line_end", g.line_end}});
  }
  j["grounded_spans"] = spans;
  return j;
}

namespace detail {

class RecordReader {
 public:
  RecordReader(const nlohmann::json& j, std::size_t line) : j_(j), line_(line) {
    if (!j_.is_object()) throw SchemaError("<record>", line_, "record is not a JSON object");
  }

  void require_exact_keys(std::initializer_list<std::string_view> keys) const {
    for (auto k : keys) {
      if (!j_.contains(std::string(k))) throw SchemaError(std::string(k), line_, "missing field");
    }
    for (const auto& [k, _] : j_.items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw SchemaError(k, line_, "unknown field");
    }
  }

  const nlohmann::json& at(const std::string& key) const { return j_.at(key); }

  std::string string(const std::string& key, bool non_empty) const {
    const auto& v = j_.at(key);
    if (!v.is_string()) throw SchemaError(key, line_, "expected a string");
    auto s = v.get<std::string>();
    if (non_empty && s.empty()) throw SchemaError(key, line_, "must be non-empty");
    return s;
  }

  std::optional<double> optional_number(const std::string& key) const {
    const auto& v = j_.at(key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_number()) throw SchemaError(key, line_, "expected a number or null");
    return v.get<double>();
  }

  bool boolean(const std::string& key) const {
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw SchemaError(key, line_, "expected a boolean");
    return v.get<bool>();
  }

  std::vector<std::string> string_list(const std::string& key, bool non_empty_items) const {
    const auto& v = j_.at(key);
    if (!v.is_array()) throw SchemaError(key, line_, "expected an array");
    std::vector<std::string> out;
    for (const auto& item : v) {
      if (!item.is_string()) throw SchemaError(key, line_, "expected an array of strings");
      out.push_back(item.get<std::string>());
      if (non_empty_items && out.back().empty()) throw SchemaError(key, line_, "empty entry");
    }
    return out;
  }

  std::size_t line() const noexcept { return line_; }

 private:
  const nlohmann::json& j_;
  std::size_t line_;
};

}  // namespace detail

inline Strategy strategy_from_json(const nlohmann::json& j, const ToolchainRegistry& registry, std::size_t line = 0) {
  detail::RecordReader r(j, line);
  r.require_exact_keys({"id", "title", "description", "when_to_apply", "application_guide", "abstract_example",
                        "potential_reduction", "median_compile_reduction", "compatibility_set", "member_pair_ids"});
  Strategy s;
  s.id = r.string("id", true);
  s.title = r.string("title", true);
  s.description = r.string("description", true);
  s.when_to_apply = r.string("when_to_apply", true);
  s.application_guide = r.string_list("application_guide", true);
  if (s.application_guide.empty()) throw SchemaError("application_guide", line, "must contain at least one step");

  const auto& ex = r.at("abstract_example");
  if (!ex.is_object() || ex.size() != 2 || !ex.contains("before") || !ex.contains("after") ||
      !ex["before"].is_string() || !ex["after"].is_string()) {
    throw SchemaError("abstract_example", line, "expected {\"before\": string, \"after\": string}");
  }
  s.abstract_example = {ex["before"].get<std::string>(), ex["after"].get<std::string>()};
  if (s.abstract_example.before.empty() || s.abstract_example.after.empty()) {
    throw SchemaError("abstract_example", line, "before/after must be non-empty");
  }

  auto red = parse_reduction(r.string("potential_reduction", true));
  if (!red) throw SchemaError("potential_reduction", line, "must be one of high, medium, low");
  s.potential_reduction = *red;

  s.median_compile_reduction = r.optional_number("median_compile_reduction");
  if (s.median_compile_reduction && !(*s.median_compile_reduction <= 1.0)) {
    throw SchemaError("median_compile_reduction", line, "must be <= 1");
  }

  for (auto& v : r.string_list("compatibility_set", true)) {
    if (!registry.contains(v)) throw SchemaError("compatibility_set", line, "unknown toolchain version " + v);
    if (!s.compatibility_set.insert(std::move(v)).second) {
      throw SchemaError("compatibility_set", line, "duplicate version");
    }
  }
  s.member_pair_ids = r.string_list("member_pair_ids", true);
  return s;
}

inline ProofPair pair_from_json(const nlohmann::json& j, const ToolchainRegistry& registry, std::size_t line = 0) {
  detail::RecordReader r(j, line);
  r.require_exact_keys({"id", "statement", "long_proof", "short_proof", "source_corpus", "long_verified",
                        "short_verified", "compile_reduction", "version_status", "grounded_spans"});
  ProofPair p;
  p.id = r.string("id", true);
  p.statement = r.string("statement", true);
  p.long_proof = r.string("long_proof", true);
  p.short_proof = r.string("short_proof", true);
  auto src = parse_source_corpus(r.string("source_corpus", true));
  if (!src) throw SchemaError("source_corpus", line, "unknown corpus tag");
  p.source_corpus = *src;
  p.long_verified = r.boolean("long_verified");
  p.short_verified = r.boolean("short_verified");
  p.compile_reduction = r.optional_number("compile_reduction");
  if (p.compile_reduction && !(*p.compile_reduction <= 1.0)) {
    throw SchemaError("compile_reduction", line, "must be <= 1");
  }

  const auto& vs = r.at("version_status");
  if (!vs.is_object()) throw SchemaError("version_status", line, "expected an object");
  for (const auto& [v, st] : vs.items()) {
    if (!registry.contains(v)) throw SchemaError("version_status", line, "unknown toolchain version " + v);
    auto parsed = st.is_string() ? parse_version_status(st.get<std::string>()) : std::nullopt;
    if (!parsed) throw SchemaError("version_status", line, "status must be compiles, fails or untested");
    p.version_status[v] = *parsed;
  }

  const auto& spans = r.at("grounded_spans");
  if (!spans.is_array()) throw SchemaError("grounded_spans", line, "expected an array");
  const auto lines = static_cast<int>(line_count(p.long_proof));
  for (const auto& g : spans) {
    if (!g.is_object() || g.size() != 3 || !g.contains("strategy_id") || !g["strategy_id"].is_string() ||
        !g.contains("line_start") || !g["line_start"].is_number_integer() || !g.contains("line_end") ||
        !g["line_end"].is_number_integer()) {
      throw SchemaError("grounded_spans", line, "expected {strategy_id, line_start, line_end}");
    }
    GroundedSpan span{g["strategy_id"].get<std::string>(), g["line_start"].get<int>(), g["line_end"].get<int>()};
    if (span.line_start < 1 || span.line_start > span.line_end || span.line_end > lines) {
      throw SchemaError("grounded_spans", line, "span outside the long proof");
    }
    p.grounded_spans.push_back(std::move(span));
  }
  return p;
}

namespace detail {

// Whole-file replace: write a sibling temp file, then rename over the target.
inline void replace_file(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename Record, typename Parse>
std::vector<Record> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Record> out;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError("<record>", line_no, std::string("invalid JSON: ") + e.what());
    }
    out.push_back(parse(j, line_no));
  }
  return out;
}

}  // namespace detail

inline void save_bank(const StrategyBank& bank, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string strategies;
  for (const auto& s : bank.strategies) strategies += to_json(s).dump() + '\n';
  std::string pairs;
  for (const auto& p : bank.pairs) pairs += to_json(p).dump() + '\n';
  detail::replace_file(dir / kPairsFile, pairs);
  detail::replace_file(dir / kStrategiesFile, strategies);
}

inline StrategyBank load_bank(const std::filesystem::path& dir, const ToolchainRegistry& registry) {
  StrategyBank bank;
  bank.registry = registry;
  bank.strategies = detail::read_jsonl<Strategy>(
      dir / kStrategiesFile, [&](const nlohmann::json& j, std::size_t n) { return strategy_from_json(j, registry, n); });
  const auto pairs_path = dir / kPairsFile;
  if (std::filesystem::exists(pairs_path)) {
    bank.pairs = detail::read_jsonl<ProofPair>(
        pairs_path, [&](const nlohmann::json& j, std::size_t n) { return pair_from_json(j, registry, n); });
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < bank.strategies.size(); ++i) {
    if (!ids.insert(bank.strategies[i].id).second) throw SchemaError("id", i + 1, "duplicate strategy id");
  }
  ids.clear();
  for (std::size_t i = 0; i < bank.pairs.size(); ++i) {
    if (!ids.insert(bank.pairs[i].id).second) throw SchemaError("id", i + 1, "duplicate pair id");
  }
  return bank;
}

}  // namespace lean_refactor
