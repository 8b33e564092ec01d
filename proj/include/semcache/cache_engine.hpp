#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "semcache/element.hpp"
#include "semcache/embedder.hpp"
#include "semcache/judge.hpp"
#include "semcache/vector_index.hpp"

namespace semcache {

enum class MatchMode {
  semantic,  // index candidates above tau_sim, confirmed by the judge
  exact,     // literal (tool, text) equality
  ann_only,  // best index candidate above tau_sim, no judge
};

enum class EvictionPolicy { lcfu, lru, lfu };

inline const char* to_string(EvictionPolicy p) {
  switch (p) {
    case EvictionPolicy::lcfu: return "lcfu";
    case EvictionPolicy::lru: return "lru";
    case EvictionPolicy::lfu: return "lfu";
  }
  return "?";
}

struct EngineOptions {
  MatchMode match = MatchMode::semantic;
  EvictionPolicy eviction = EvictionPolicy::lcfu;
  double score_log_base = std::numbers::e;
  bool approximate_index = true;
  HnswParams hnsw{};
};

struct StageTimings {
  double embed_ms = 0;
  double index_ms = 0;
  double judge_ms = 0;
};

enum class LookupKind { hit, miss };

struct LookupOutcome {
  LookupKind kind = LookupKind::miss;
  std::optional<ElementId> element_id;
  std::optional<double> s_lsm;
  std::optional<double> similarity;
  std::size_t candidates_considered = 0;
  std::size_t judge_calls = 0;
  std::size_t expired_purged = 0;
  StageTimings timings;
  std::optional<std::string> error;
  std::optional<SemanticElement> element;  // snapshot of the element served on a hit

  bool hit() const { return kind == LookupKind::hit; }
};

struct AdmitResult {
  ElementId id;
  std::vector<ElementId> evicted;
};

struct CacheStats {
  std::size_t usage_tokens = 0;
  std::size_t capacity_tokens = 0;
  std::size_t element_count = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t admissions = 0;
  std::uint64_t evictions = 0;
  std::uint64_t expirations = 0;
  std::uint64_t rejections = 0;
  double tau_lsm = 0;
};

// Value of keeping an element: log-scaled frequency, cost (in thousandths of
// a dollar), latency and staticity, divided by size. Zero once expired.
// Changing the log base scales every unexpired score by the same positive
// factor, so eviction order does not depend on it.
inline double cal_score(const SemanticElement& se, Timestamp now,
                        double log_base = std::numbers::e) {
  const auto ttl = se.expiration_time - now;
  if (se.size_tokens == 0 || ttl.count() <= 0) return 0.0;
  const double inv_ln_base = 1.0 / std::log(log_base);
  const auto lg = [&](double x) { return std::log(x) * inv_ln_base; };
  return lg(static_cast<double>(se.frequency) + 1.0) * lg(se.retrieval_cost_usd * 1e3 + 1.0) *
         lg(se.retrieval_latency_ms + 1.0) * lg(static_cast<double>(se.staticity) + 1.0) /
         static_cast<double>(se.size_tokens);
}

// Capacity-limited semantic cache. Lookups run concurrently against a
// consistent snapshot; admission, eviction and frequency updates go through
// one writer lock. Lock order is engine -> index.
class CacheEngine {
 public:
  CacheEngine(CacheConfig config, std::shared_ptr<const Embedder> embedder,
              std::shared_ptr<const Judge> judge, EngineOptions options = {})
      : config_(config),
        options_(options),
        embedder_(std::move(embedder)),
        judge_(std::move(judge)),
        index_(embedder_ ? embedder_->dimension() : 1, embedder_ ? embedder_->seed() : 0,
               options.hnsw),
        tau_lsm_(config.tau_lsm) {
    config_.validate();
    if (!embedder_) throw ConfigError("cache engine needs an embedder");
    if (!judge_ && options_.match == MatchMode::semantic) {
      throw ConfigError("semantic matching needs a judge");
    }
    if (!(options_.score_log_base > 1.0)) throw ConfigError("score log base must exceed 1");
  }

  CacheEngine(const CacheEngine&) = delete;
  CacheEngine& operator=(const CacheEngine&) = delete;

  const CacheConfig& config() const { return config_; }
  const EngineOptions& options() const { return options_; }
  const Embedder& embedder() const { return *embedder_; }
  const Judge* judge() const { return judge_.get(); }

  double tau_lsm() const { return tau_lsm_.load(std::memory_order_acquire); }
  void set_tau_lsm(double tau) { tau_lsm_.store(tau, std::memory_order_release); }

  double cal_score(const SemanticElement& se, Timestamp now) const {
    return semcache::cal_score(se, now, options_.score_log_base);
  }

  // Full lookup: on a confirmed hit the element's frequency grows by one and
  // its score is refreshed; expired candidates met on the way are purged.
  // `judge_query`, when non-empty, replaces the key text in the judge call
  // (used to hand the judge some surrounding context).
  LookupOutcome lookup(const SemanticKey& key, Timestamp now, std::string_view judge_query = {}) {
    return run_lookup(key, now, true, judge_query);
  }

  // Same decision as lookup() without touching any state.
  LookupOutcome probe(const SemanticKey& key, Timestamp now, std::string_view judge_query = {}) const {
    return const_cast<CacheEngine*>(this)->run_lookup(key, now, false, judge_query);
  }

  bool contains(const SemanticKey& key, Timestamp now) const { return probe(key, now).hit(); }

  // Embeds the key and scores staticity (neutral when no judge is present).
  SemanticElement build_element(SemanticKey key, std::string value, double latency_ms,
                                double cost_usd, Timestamp now,
                                std::optional<int> staticity = std::nullopt) const {
    int stat = kDefaultStaticity;
    if (staticity) {
      stat = *staticity;
    } else if (judge_) {
      try {
        stat = judge_->staticity(key.text, value);
      } catch (const RetriableError&) {
        stat = kDefaultStaticity;
      }
    }
    auto embedding = embedder_->embed(key.text);
    return make_element(std::move(key), std::move(value), std::move(embedding), stat, latency_ms,
                        cost_usd, now, config_.ttl_seconds);
  }

  // Inserts the element, then evicts until usage fits the budget. The element
  // being admitted is never its own victim.
  AdmitResult admit(SemanticElement se, Timestamp now) {
    std::unique_lock lock(mu_);
    if (se.size_tokens > config_.capacity_tokens) {
      ++rejections_;
      throw CapacityError("element of " + std::to_string(se.size_tokens) +
                          " tokens exceeds capacity of " + std::to_string(config_.capacity_tokens));
    }
    if (se.size_tokens == 0) throw ValidationError("admit: size_tokens must be positive");
    if (se.embedding.dimension() != index_.dimension()) {
      throw ValidationError("admit: embedding dimension does not match the index");
    }
    const auto exact_key = exact_key_of(se.key);
    if (auto it = exact_keys_.find(exact_key); it != exact_keys_.end()) erase_locked(it->second);

    const ElementId id{next_id_++};
    index_.insert(id, se.embedding);
    se.value_score = cal_score(se, now);
    usage_tokens_ += se.size_tokens;
    exact_keys_[exact_key] = id;
    elements_.emplace(id, Entry{std::move(se), now});
    ++admissions_;

    AdmitResult result{id, {}};
    if (usage_tokens_ > config_.capacity_tokens) result.evicted = evict_locked(now, id);
    return result;
  }

  // Drops expired elements, then removes the lowest-valued elements until
  // usage fits. Returns removed ids in removal order (expired ones first).
  std::vector<ElementId> evict_until_fits(Timestamp now) {
    std::unique_lock lock(mu_);
    return evict_locked(now, std::nullopt);
  }

  std::size_t remove_expired(Timestamp now) {
    std::unique_lock lock(mu_);
    return remove_expired_locked(now).size();
  }

  bool erase(ElementId id) {
    std::unique_lock lock(mu_);
    if (!elements_.count(id)) return false;
    erase_locked(id);
    return true;
  }

  std::optional<SemanticElement> get(ElementId id) const {
    std::shared_lock lock(mu_);
    auto it = elements_.find(id);
    if (it == elements_.end()) return std::nullopt;
    return it->second.se;
  }

  std::vector<ElementId> ids() const {
    std::shared_lock lock(mu_);
    std::vector<ElementId> out;
    out.reserve(elements_.size());
    for (const auto& [id, entry] : elements_) out.push_back(id);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return elements_.size();
  }

  std::size_t usage_tokens() const {
    std::shared_lock lock(mu_);
    return usage_tokens_;
  }

  CacheStats stats() const {
    std::shared_lock lock(mu_);
    return CacheStats{usage_tokens_, config_.capacity_tokens, elements_.size(),
                      hits_.load(),  misses_.load(),          admissions_.load(),
                      evictions_.load(), expirations_.load(), rejections_.load(),
                      tau_lsm()};
  }

  // usage == sum of sizes, usage <= capacity, and the element map and the
  // index hold the same ids.
  bool check_invariants(std::string* why = nullptr) const {
    std::shared_lock lock(mu_);
    const auto fail = [&](std::string msg) {
      if (why) *why = std::move(msg);
      return false;
    };
    std::size_t sum = 0;
    for (const auto& [id, entry] : elements_) {
      sum += entry.se.size_tokens;
      if (!index_.contains(id)) return fail("element " + std::to_string(id.value) + " missing from index");
    }
    if (sum != usage_tokens_) return fail("usage counter out of sync");
    if (usage_tokens_ > config_.capacity_tokens) return fail("usage exceeds capacity");
    if (index_.size() != elements_.size()) return fail("index holds ids with no element");
    return true;
  }

  // Writes the element records to `path` and the index to `path`.index.
  void save_snapshot(const std::filesystem::path& path) const {
    std::shared_lock lock(mu_);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("snapshot: cannot open " + path.string());
    out << kSnapshotHeader << '\n';
    out << "tau_lsm=" << format_double(tau_lsm()) << '\n';
    for (const auto& [id, entry] : elements_) {
      out << "id=" << id.value << '\n';
      out << "last_access_ms=" << format_double(to_ms(entry.last_access)) << '\n';
      out << serialize(entry.se);
      out << "end\n";
    }
    if (!out) throw Error("snapshot: write failed");
    std::ofstream idx(index_path(path), std::ios::binary | std::ios::trunc);
    if (!idx) throw Error("snapshot: cannot open index file");
    index_.save(idx);
  }

  // Replaces the whole state with a snapshot written by save_snapshot().
  void load_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("snapshot: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kSnapshotHeader) {
      throw ValidationError("snapshot: bad header");
    }
    if (!std::getline(in, line) || line.rfind("tau_lsm=", 0) != 0) {
      throw ValidationError("snapshot: missing tau_lsm");
    }
    const double tau = parse_double(std::string_view(line).substr(8));

    std::map<ElementId, Entry> elements;
    std::size_t usage = 0;
    std::uint64_t max_id = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line.rfind("id=", 0) != 0) throw ValidationError("snapshot: expected id line");
      const ElementId id{parse_int<std::uint64_t>(std::string_view(line).substr(3))};
      if (!std::getline(in, line) || line.rfind("last_access_ms=", 0) != 0) {
        throw ValidationError("snapshot: expected last_access_ms line");
      }
      const auto last_access = at_ms(parse_double(std::string_view(line).substr(15)));
      std::string record;
      while (std::getline(in, line) && line != "end") record += line + '\n';
      if (line != "end") throw ValidationError("snapshot: truncated record");
      auto se = deserialize_element(record);
      usage += se.size_tokens;
      max_id = std::max(max_id, id.value);
      if (!elements.emplace(id, Entry{std::move(se), last_access}).second) {
        throw ValidationError("snapshot: duplicate id");
      }
    }

    std::ifstream idx_in(index_path(path), std::ios::binary);
    if (!idx_in) throw Error("snapshot: cannot open index file");
    auto index = VectorIndex::load(idx_in, options_.hnsw);
    if (index.dimension() != embedder_->dimension() || index.seed() != embedder_->seed()) {
      throw ValidationError("snapshot: index was built with a different embedding space");
    }
    if (index.size() != elements.size()) throw ValidationError("snapshot: index/element count mismatch");
    for (const auto& [id, entry] : elements) {
      if (!index.contains(id)) throw ValidationError("snapshot: element missing from index");
    }
    if (usage > config_.capacity_tokens) throw ValidationError("snapshot: usage exceeds capacity");

    std::unique_lock lock(mu_);
    index_ = std::move(index);
    elements_ = std::move(elements);
    usage_tokens_ = usage;
    next_id_ = max_id + 1;
    exact_keys_.clear();
    for (const auto& [id, entry] : elements_) exact_keys_[exact_key_of(entry.se.key)] = id;
    set_tau_lsm(tau);
  }

 private:
  static constexpr const char* kSnapshotHeader = "semcache-snapshot 1";

  struct Entry {
    SemanticElement se;
    Timestamp last_access;
  };

  static std::filesystem::path index_path(const std::filesystem::path& p) {
    return std::filesystem::path(p.string() + ".index");
  }

  static std::string exact_key_of(const SemanticKey& key) { return key.tool + '\x1f' + key.text; }

  static double elapsed_ms(std::chrono::steady_clock::time_point from,
                           std::chrono::steady_clock::time_point to) {
    return std::chrono::duration<double, std::milli>(to - from).count();
  }

  LookupOutcome run_lookup(const SemanticKey& key, Timestamp now, bool side_effects,
                           std::string_view judge_query) {
    if (options_.match == MatchMode::exact) return exact_lookup(key, now, side_effects);

    using steady = std::chrono::steady_clock;
    LookupOutcome out;
    const auto t0 = steady::now();
    EmbeddingVector q;
    try {
      q = embedder_->embed(key.text);
    } catch (const Error& e) {
      out.error = std::string("embedder: ") + e.what();
      if (side_effects) ++misses_;
      return out;
    }
    const auto t1 = steady::now();

    std::vector<std::pair<Candidate, SemanticElement>> snapshot;
    {
      std::shared_lock lock(mu_);
      const auto cands = options_.approximate_index
                             ? index_.approx_query(q, config_.tau_sim, config_.candidate_k)
                             : index_.query(q, config_.tau_sim, config_.candidate_k);
      snapshot.reserve(cands.size());
      for (const auto& c : cands) {
        auto it = elements_.find(c.id);
        if (it != elements_.end()) snapshot.emplace_back(c, it->second.se);
      }
    }
    const auto t2 = steady::now();
    out.timings.embed_ms = elapsed_ms(t0, t1);
    out.timings.index_ms = elapsed_ms(t1, t2);

    const double tau = tau_lsm();
    std::vector<ElementId> expired;
    std::optional<std::size_t> winner;
    for (std::size_t i = 0; i < snapshot.size(); ++i) {
      const auto& [cand, se] = snapshot[i];
      ++out.candidates_considered;
      if (se.key.tool != key.tool) continue;
      if (se.expired(now)) {
        expired.push_back(cand.id);
        continue;
      }
      if (options_.match == MatchMode::ann_only) {
        winner = i;
        break;
      }
      try {
        ++out.judge_calls;
        const auto verdict = validate(*judge_, judge_query.empty() ? std::string_view(key.text) : judge_query, se, tau);
        if (verdict.hit) {
          out.s_lsm = verdict.s_lsm;
          winner = i;
          break;
        }
      } catch (const RetriableError& e) {
        out.error = std::string("judge: ") + e.what();
      }
    }
    out.timings.judge_ms = elapsed_ms(t2, steady::now());

    if (winner) {
      out.kind = LookupKind::hit;
      out.element_id = snapshot[*winner].first.id;
      out.similarity = snapshot[*winner].first.similarity;
      out.element = snapshot[*winner].second;
    } else {
      out.s_lsm.reset();
    }
    if (!side_effects) return out;

    std::unique_lock lock(mu_);
    for (const auto id : expired) {
      auto it = elements_.find(id);
      if (it != elements_.end() && it->second.se.expired(now)) {
        erase_locked(id);
        ++expirations_;
        ++out.expired_purged;
      }
    }
    if (out.hit()) {
      auto it = elements_.find(*out.element_id);
      if (it == elements_.end()) {
        // Evicted between the read and the write phase.
        out.kind = LookupKind::miss;
        out.element_id.reset();
        out.element.reset();
        out.s_lsm.reset();
        out.similarity.reset();
      } else {
        touch_locked(it->second, now);
        out.element = it->second.se;
      }
    }
    if (out.hit()) {
      ++hits_;
    } else {
      ++misses_;
    }
    return out;
  }

  LookupOutcome exact_lookup(const SemanticKey& key, Timestamp now, bool side_effects) {
    LookupOutcome out;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<ElementId> found;
    bool expired = false;
    {
      std::shared_lock lock(mu_);
      auto it = exact_keys_.find(exact_key_of(key));
      if (it != exact_keys_.end()) {
        const auto& entry = elements_.at(it->second);
        out.candidates_considered = 1;
        if (entry.se.expired(now)) {
          expired = true;
        } else {
          found = it->second;
          out.element = entry.se;
        }
        if (expired) found = it->second;
      }
    }
    out.timings.index_ms = elapsed_ms(t0, std::chrono::steady_clock::now());
    if (found && !expired) {
      out.kind = LookupKind::hit;
      out.element_id = found;
      out.similarity = 1.0;
      out.s_lsm = 1.0;
    }
    if (!side_effects) return out;

    std::unique_lock lock(mu_);
    if (found && expired) {
      auto it = elements_.find(*found);
      if (it != elements_.end() && it->second.se.expired(now)) {
        erase_locked(*found);
        ++expirations_;
        ++out.expired_purged;
      }
    }
    if (out.hit()) {
      auto it = elements_.find(*out.element_id);
      if (it == elements_.end()) {
        out = LookupOutcome{};
      } else {
        touch_locked(it->second, now);
        out.element = it->second.se;
      }
    }
    if (out.hit()) {
      ++hits_;
    } else {
      ++misses_;
    }
    return out;
  }

  void touch_locked(Entry& entry, Timestamp now) {
    ++entry.se.frequency;
    entry.se.value_score = cal_score(entry.se, now);
    entry.last_access = now;
  }

  void erase_locked(ElementId id) {
    auto it = elements_.find(id);
    if (it == elements_.end()) return;
    index_.remove(id);
    usage_tokens_ -= it->second.se.size_tokens;
    auto ek = exact_keys_.find(exact_key_of(it->second.se.key));
    if (ek != exact_keys_.end() && ek->second == id) exact_keys_.erase(ek);
    elements_.erase(it);
  }

  std::vector<ElementId> remove_expired_locked(Timestamp now) {
    std::vector<ElementId> gone;
    for (const auto& [id, entry] : elements_) {
      if (entry.se.expired(now)) gone.push_back(id);
    }
    for (const auto id : gone) erase_locked(id);
    expirations_ += gone.size();
    return gone;
  }

  std::vector<ElementId> evict_locked(Timestamp now, std::optional<ElementId> exclude) {
    auto removed = remove_expired_locked(now);
    if (usage_tokens_ <= config_.capacity_tokens) return removed;

    // (primary key, secondary key, id); smallest goes first.
    using Rank = std::tuple<double, double, ElementId>;
    std::vector<Rank> order;
    order.reserve(elements_.size());
    for (auto& [id, entry] : elements_) {
      if (exclude && id == *exclude) continue;
      auto& se = entry.se;
      switch (options_.eviction) {
        case EvictionPolicy::lcfu:
          se.value_score = cal_score(se, now);
          order.emplace_back(se.value_score, to_ms(se.created_at), id);
          break;
        case EvictionPolicy::lru:
          order.emplace_back(to_ms(entry.last_access), to_ms(se.created_at), id);
          break;
        case EvictionPolicy::lfu:
          order.emplace_back(static_cast<double>(se.frequency), to_ms(entry.last_access), id);
          break;
      }
    }
    std::sort(order.begin(), order.end());
    for (const auto& rank : order) {
      if (usage_tokens_ <= config_.capacity_tokens) break;
      const auto id = std::get<2>(rank);
      erase_locked(id);
      ++evictions_;
      removed.push_back(id);
    }
    return removed;
  }

  CacheConfig config_;
  EngineOptions options_;
  std::shared_ptr<const Embedder> embedder_;
  std::shared_ptr<const Judge> judge_;

  mutable std::shared_mutex mu_;
  VectorIndex index_;
  std::map<ElementId, Entry> elements_;
  std::unordered_map<std::string, ElementId> exact_keys_;
  std::size_t usage_tokens_ = 0;
  std::uint64_t next_id_ = 1;
  std::atomic<double> tau_lsm_;

  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
  std::atomic<std::uint64_t> admissions_{0};
  std::atomic<std::uint64_t> evictions_{0};
  std::atomic<std::uint64_t> expirations_{0};
  std::atomic<std::uint64_t> rejections_{0};
};

}  // namespace semcache
