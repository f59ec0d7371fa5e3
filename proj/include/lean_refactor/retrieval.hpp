#pragma once

// Exact cosine-similarity strategy search, the objective-conditioned
// retrieval rules (similarity top-k, compile-cost rerank, version filter and
// their composition), the in-batch contrastive loss with false-negative
// masking, and the embedding provider port.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lean_refactor/detail/hash.hpp"
#include "lean_refactor/errors.hpp"
#include "lean_refactor/lean_tokenizer.hpp"
#include "lean_refactor/strategy_bank.hpp"

namespace lean_refactor {

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dimension() const noexcept { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

namespace detail {

struct NormedDot {
  double dot = 0.0;
  double norm_u = 0.0;
  double norm_v = 0.0;
};

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

inline double cosine_from(double dot, double norm_u, double norm_v) {
  return std::clamp(dot / (norm_u * norm_v), -1.0, 1.0);
}

inline void check_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DegenerateVector("embedding has a non-finite entry");
  }
}

}  // namespace detail

inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dimension() != v.dimension()) {
    throw DimensionMismatch("cosine: dimensions " + std::to_string(u.dimension()) + " and " +
                            std::to_string(v.dimension()));
  }
  detail::check_finite(u.values);
  detail::check_finite(v.values);
  const double nu = detail::norm(u.values);
  const double nv = detail::norm(v.values);
  if (nu == 0.0 || nv == 0.0) throw DegenerateVector("cosine of a zero vector");
  return detail::cosine_from(detail::dot(u.values, v.values), nu, nv);
}

struct RankedStrategy {
  std::string strategy_id;
  double similarity = 0.0;
  int rank = 0;  // 1-based, contiguous within one result list
  ProofSpan target_span;
  bool operator==(const RankedStrategy&) const = default;
};

inline void renumber(std::vector<RankedStrategy>& list) {
  for (std::size_t i = 0; i < list.size(); ++i) list[i].rank = static_cast<int>(i) + 1;
}

// Immutable after construction; safe for concurrent queries.
class FlatIndex {
 public:
  explicit FlatIndex(std::size_t dimension) : dimension_(dimension) {
    if (dimension == 0) throw DimensionMismatch("index dimension must be positive");
  }

  void add(std::string strategy_id, EmbeddingVector v) {
    if (v.dimension() != dimension_) {
      throw DimensionMismatch("index expects dimension " + std::to_string(dimension_) + ", got " +
                              std::to_string(v.dimension()));
    }
    detail::check_finite(v.values);
    const double n = detail::norm(v.values);
    if (n == 0.0) throw DegenerateVector("cannot index a zero vector for " + strategy_id);
    ids_.push_back(std::move(strategy_id));
    norms_.push_back(n);
    vectors_.push_back(std::move(v));
  }

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::size_t dimension() const noexcept { return dimension_; }
  const std::string& id_at(std::size_t i) const { return ids_.at(i); }
  const EmbeddingVector& vector_at(std::size_t i) const { return vectors_.at(i); }

  // Highest similarity first; equal similarities order by strategy id.
  std::vector<RankedStrategy> top_k(const EmbeddingVector& query, std::size_t k) const {
    if (empty()) throw EmptyIndex();
    if (query.dimension() != dimension_) {
      throw DimensionMismatch("query dimension " + std::to_string(query.dimension()) + ", index " +
                              std::to_string(dimension_));
    }
    detail::check_finite(query.values);
    const double nq = detail::norm(query.values);
    if (nq == 0.0) throw DegenerateVector("zero query vector");

    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) {
      scored.emplace_back(detail::cosine_from(detail::dot(query.values, vectors_[i].values), nq, norms_[i]), i);
    }
    auto better = [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return ids_[a.second] < ids_[b.second];
    };
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
    std::vector<RankedStrategy> out;
    out.reserve(take);
    for (std::size_t r = 0; r < take; ++r) {
      out.push_back({ids_[scored[r].second], scored[r].first, static_cast<int>(r) + 1, {}});
    }
    return out;
  }

 private:
  std::size_t dimension_;
  std::vector<std::string> ids_;
  std::vector<EmbeddingVector> vectors_;
  std::vector<double> norms_;
};

inline std::vector<RankedStrategy> top_k(const FlatIndex& index, const EmbeddingVector& query, std::size_t k) {
  return index.top_k(query, k);
}

// Stable: descending median compile reduction, absent metadata last, ties
// keep their incoming order.
inline std::vector<RankedStrategy> rerank_by_compile_reduction(std::vector<RankedStrategy> pool,
                                                               const StrategyBank& bank) {
  auto key = [&](const RankedStrategy& r) -> std::optional<double> {
    const Strategy* s = bank.find_strategy(r.strategy_id);
    return s ? s->median_compile_reduction : std::nullopt;
  };
  std::stable_sort(pool.begin(), pool.end(), [&](const RankedStrategy& a, const RankedStrategy& b) {
    const auto ka = key(a), kb = key(b);
    if (ka && kb) return *ka > *kb;
    return ka.has_value() && !kb.has_value();
  });
  renumber(pool);
  return pool;
}

inline std::vector<RankedStrategy> filter_by_version(std::vector<RankedStrategy> pool, std::string_view version,
                                                     const StrategyBank& bank) {
  if (!bank.registry.contains(version)) throw UnknownVersion(std::string(version));
  std::erase_if(pool, [&](const RankedStrategy& r) {
    const Strategy* s = bank.find_strategy(r.strategy_id);
    return s == nullptr || !s->compatibility_set.contains(std::string(version));
  });
  renumber(pool);
  return pool;
}

enum class ObjectiveMode { length, compile_time, version };

inline std::string_view to_string(ObjectiveMode m) {
  switch (m) {
    case ObjectiveMode::length: return "length";
    case ObjectiveMode::compile_time: return "compile_time";
    case ObjectiveMode::version: return "version";
  }
  return "length";
}

// `mode` is the primary objective. A version objective may additionally ask
// for the compile-cost rerank (`rerank_compile_time`), which composes as
// filter, then rerank, then truncate.
struct ObjectiveSpec {
  ObjectiveMode mode = ObjectiveMode::length;
  std::optional<std::string> target_version;
  bool rerank_compile_time = false;
  std::size_t pool_size = 50;
  std::size_t k = 8;

  bool reranks() const noexcept { return mode == ObjectiveMode::compile_time || rerank_compile_time; }
  bool filters() const noexcept { return mode == ObjectiveMode::version || (target_version.has_value()); }

  void validate() const {
    if (k == 0) throw ConfigError("objective: k must be positive");
    if (pool_size == 0) throw ConfigError("objective: pool size must be positive");
    if (k > pool_size) throw ConfigError("objective: k must not exceed the pool size");
    if (mode == ObjectiveMode::version && !target_version) throw ConfigError("objective: version mode needs a target");
  }

  // "length", "compile-time", "version:<id>", or a comma-joined combination
  // such as "compile-time,version:v4.16.0".
  static ObjectiveSpec parse(std::string_view text, std::size_t pool_size = 50, std::size_t k = 8) {
    ObjectiveSpec spec;
    spec.pool_size = pool_size;
    spec.k = k;
    bool compile = false, length = false;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t comma = text.find(',', start);
      const std::string_view part = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
      if (part == "length") {
        length = true;
      } else if (part == "compile-time" || part == "compile_time") {
        compile = true;
      } else if (part.starts_with("version:") && part.size() > 8) {
        spec.target_version = std::string(part.substr(8));
      } else {
        throw ConfigError("unknown objective '" + std::string(part) + "'");
      }
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (length && (compile || spec.target_version)) throw ConfigError("objective 'length' does not compose");
    if (spec.target_version) {
      spec.mode = ObjectiveMode::version;
      spec.rerank_compile_time = compile;
    } else if (compile) {
      spec.mode = ObjectiveMode::compile_time;
    }
    spec.validate();
    return spec;
  }
};

inline std::vector<RankedStrategy> retrieve(const FlatIndex& index, const StrategyBank& bank,
                                            const EmbeddingVector& query, const ObjectiveSpec& objective) {
  objective.validate();
  if (objective.mode == ObjectiveMode::length && !objective.target_version) return index.top_k(query, objective.k);
  auto pool = index.top_k(query, objective.pool_size);
  if (objective.filters()) pool = filter_by_version(std::move(pool), *objective.target_version, bank);
  if (objective.reranks()) pool = rerank_by_compile_reduction(std::move(pool), bank);
  if (pool.size() > objective.k) pool.resize(objective.k);
  return pool;
}

// ---------------------------------------------------------------------------
// Contrastive objective

struct ContrastiveBatch {
  std::vector<EmbeddingVector> queries;
  std::vector<EmbeddingVector> positives;
  double temperature = 0.01;
  double margin = 0.1;
};

// Mean over the batch of -log softmax of the positive against the in-batch
// positives, where a candidate is masked out when it beats the query's own
// positive by more than the margin (strictly).
inline double contrastive_loss(const ContrastiveBatch& batch) {
  if (!(batch.temperature > 0.0)) throw InvalidTemperature("temperature must be positive");
  if (batch.margin < 0.0) throw Error("margin must be non-negative");
  const std::size_t b = batch.queries.size();
  if (b == 0 || batch.positives.size() != b) throw Error("contrastive batch needs equal, non-empty lists");

  double total = 0.0;
  std::vector<double> logits;
  for (std::size_t i = 0; i < b; ++i) {
    const double pos = cosine(batch.queries[i], batch.positives[i]);
    logits.clear();
    for (std::size_t j = 0; j < b; ++j) {
      const double sim = j == i ? pos : cosine(batch.queries[i], batch.positives[j]);
      if (j != i && sim > pos + batch.margin) continue;
      logits.push_back(sim / batch.temperature);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    total += (mx + std::log(sum)) - pos / batch.temperature;
  }
  return total / static_cast<double>(b);
}

// ---------------------------------------------------------------------------
// Embedding providers

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dimension() const = 0;
  // One vector per input, in input order.
  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) = 0;
};

// Checks the provider's output against its declared contract.
inline std::vector<EmbeddingVector> embed(EmbeddingProvider& provider, std::span<const std::string> texts) {
  if (texts.empty()) return {};
  auto out = provider.embed_batch(texts);
  if (out.size() != texts.size()) {
    throw ProviderContractViolation("provider returned " + std::to_string(out.size()) + " vectors for " +
                                    std::to_string(texts.size()) + " texts");
  }
  for (const auto& v : out) {
    if (v.dimension() != provider.dimension()) {
      throw ProviderContractViolation("provider returned dimension " + std::to_string(v.dimension()) +
                                      ", declared " + std::to_string(provider.dimension()));
    }
  }
  return out;
}

inline EmbeddingVector embed_one(EmbeddingProvider& provider, const std::string& text) {
  const std::string one[] = {text};
  return std::move(embed(provider, one).front());
}

// Seeded hash-to-vector: the same text always maps to the same unit vector,
// on every platform.
class MockEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit MockEmbeddingProvider(std::size_t dimension = 64, std::uint64_t seed = 0)
      : dimension_(dimension), seed_(seed) {}

  std::size_t dimension() const override { return dimension_; }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(vector_for(t));
    return out;
  }

  EmbeddingVector vector_for(std::string_view text) const {
    detail::SplitMix64 rng(detail::fnv1a64(text) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
    EmbeddingVector v;
    v.values.resize(dimension_);
    double n = 0.0;
    for (auto& x : v.values) {
      x = rng.next_unit() * 2.0 - 1.0;
      n += x * x;
    }
    n = std::sqrt(n);
    for (auto& x : v.values) x /= n;
    return v;
  }

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

// Explicit text -> vector table (test fixtures with scripted similarities);
// unknown texts fall back to the hash mock. Counts calls.
class FixtureEmbeddingProvider : public EmbeddingProvider {
 public:
  FixtureEmbeddingProvider(std::size_t dimension, std::map<std::string, EmbeddingVector> table,
                           std::uint64_t seed = 0)
      : table_(std::move(table)), fallback_(dimension, seed) {}

  std::size_t dimension() const override { return fallback_.dimension(); }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
    std::lock_guard lock(mu_);
    ++calls_;
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) {
      auto it = table_.find(t);
      out.push_back(it != table_.end() ? it->second : fallback_.vector_for(t));
    }
    return out;
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  std::map<std::string, EmbeddingVector> table_;
  MockEmbeddingProvider fallback_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

// Index keyed by each strategy's when-to-apply clause.
inline FlatIndex build_strategy_index(const StrategyBank& bank, EmbeddingProvider& provider) {
  FlatIndex index(provider.dimension());
  std::vector<std::string> keys;
  keys.reserve(bank.strategies.size());
  for (const auto& s : bank.strategies) keys.push_back(s.when_to_apply);
  auto vectors = embed(provider, keys);
  for (std::size_t i = 0; i < vectors.size(); ++i) index.add(bank.strategies[i].id, std::move(vectors[i]));
  return index;
}

}  // namespace lean_refactor
