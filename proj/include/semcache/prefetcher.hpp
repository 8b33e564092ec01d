#pragma once

#include <algorithm>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "semcache/cache_engine.hpp"

namespace semcache {

struct Prediction {
  std::string key;
  double probability = 0;
};

// First-order transition counts between query keys.
class MarkovModel {
 public:
  void observe(const std::string& prev, const std::string& next) {
    std::lock_guard lock(mu_);
    ++counts_[prev][next];
    ++totals_[prev];
  }

  // Successors by descending probability, ties by key.
  std::vector<Prediction> predict(const std::string& key) const {
    std::lock_guard lock(mu_);
    std::vector<Prediction> out;
    auto it = counts_.find(key);
    if (it == counts_.end()) return out;
    const double total = static_cast<double>(totals_.at(key));
    for (const auto& [next, n] : it->second) out.push_back({next, static_cast<double>(n) / total});
    std::stable_sort(out.begin(), out.end(), [](const Prediction& a, const Prediction& b) {
      return a.probability > b.probability;
    });
    return out;
  }

  double probability(const std::string& from, const std::string& to) const {
    std::lock_guard lock(mu_);
    auto it = counts_.find(from);
    if (it == counts_.end()) return 0.0;
    auto jt = it->second.find(to);
    if (jt == it->second.end()) return 0.0;
    return static_cast<double>(jt->second) / static_cast<double>(totals_.at(from));
  }

  std::uint64_t total(const std::string& from) const {
    std::lock_guard lock(mu_);
    auto it = totals_.find(from);
    return it == totals_.end() ? 0 : it->second;
  }

  std::size_t source_count() const {
    std::lock_guard lock(mu_);
    return counts_.size();
  }

  // One "source<TAB>target<TAB>count" line per edge, fields escaped.
  void dump(std::ostream& out) const {
    std::lock_guard lock(mu_);
    for (const auto& [from, row] : counts_) {
      for (const auto& [to, n] : row) {
        out << escape_field(from) << '\t' << escape_field(to) << '\t' << n << '\n';
      }
    }
  }

  static MarkovModel load(std::istream& in) {
    MarkovModel m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
      if (t2 == std::string::npos) {
        throw ValidationError("markov edge list line " + std::to_string(lineno) + ": expected 3 fields");
      }
      const auto from = unescape_field(std::string_view(line).substr(0, t1));
      const auto to = unescape_field(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
      const auto n = parse_int<std::uint64_t>(std::string_view(line).substr(t2 + 1));
      if (n == 0) continue;
      m.counts_[from][to] += n;
      m.totals_[from] += n;
    }
    return m;
  }

  MarkovModel() = default;
  MarkovModel(MarkovModel&& o) noexcept {
    std::lock_guard lock(o.mu_);
    counts_ = std::move(o.counts_);
    totals_ = std::move(o.totals_);
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::map<std::string, std::uint64_t>> counts_;
  std::map<std::string, std::uint64_t> totals_;
};

struct PrefetchOptions {
  double theta = 0.5;
  std::size_t max_in_flight = 4;
};

struct PrefetchTask {
  SemanticKey key;
  double probability = 0;
};

struct PrefetchStats {
  std::uint64_t initiated = 0;
  std::uint64_t admitted = 0;
  std::uint64_t failed = 0;
  std::uint64_t skipped_cached = 0;
  std::uint64_t skipped_busy = 0;
};

// Learns from the sequence of confirmed hits and speculatively fetches the
// likely next query. Markov keys are "tool: canonical text".
class Prefetcher {
 public:
  explicit Prefetcher(PrefetchOptions options = {}) : options_(options) {
    if (options_.theta < 0 || options_.theta > 1) throw ConfigError("prefetch theta must lie in [0,1]");
    if (options_.max_in_flight == 0) throw ConfigError("prefetch max_in_flight must be positive");
  }

  static std::string markov_key(const SemanticKey& key) {
    return key.tool + ": " + canonicalize(key.text);
  }

  const MarkovModel& model() const { return model_; }
  const PrefetchOptions& options() const { return options_; }

  // Feeds one confirmed hit (the served element's key) into the stream.
  void record_hit(const SemanticKey& served) {
    const auto k = markov_key(served);
    std::optional<std::string> prev;
    {
      std::lock_guard lock(mu_);
      origin_.emplace(k, served);
      prev = last_hit_;
      last_hit_ = k;
    }
    if (prev) model_.observe(*prev, k);
  }

  // Remembers the original key for a Markov key so it can be fetched later.
  void remember(const SemanticKey& key) {
    std::lock_guard lock(mu_);
    origin_.emplace(markov_key(key), key);
  }

  // Chooses successors of `current` worth fetching: probability >= theta,
  // not already answered by the cache (probe, no side effects), not already
  // in flight, within the in-flight cap. Each chosen task is handed to
  // `launch`, which owns running the fetch and must eventually call
  // complete() or fail().
  std::vector<PrefetchTask> maybe_prefetch(const SemanticKey& current, const CacheEngine& engine,
                                           Timestamp now,
                                           const std::function<void(const PrefetchTask&)>& launch) {
    std::vector<PrefetchTask> started;
    for (const auto& p : model_.predict(markov_key(current))) {
      if (p.probability < options_.theta) break;
      SemanticKey key;
      {
        std::lock_guard lock(mu_);
        auto it = origin_.find(p.key);
        if (it == origin_.end()) continue;
        key = it->second;
        if (in_flight_.count(p.key)) continue;
      }
      if (engine.contains(key, now)) {
        std::lock_guard lock(mu_);
        ++stats_.skipped_cached;
        continue;
      }
      {
        std::lock_guard lock(mu_);
        if (in_flight_.size() >= options_.max_in_flight) {
          ++stats_.skipped_busy;
          break;
        }
        in_flight_.insert(p.key);
        ++stats_.initiated;
      }
      started.push_back({key, p.probability});
    }
    for (const auto& t : started) launch(t);
    return started;
  }

  // Admits a fetched result as a fresh element with frequency 0.
  std::optional<AdmitResult> complete(const PrefetchTask& task, const std::string& value,
                                      double latency_ms, double cost_usd, CacheEngine& engine,
                                      Timestamp now) {
    release(task);
    try {
      auto se = engine.build_element(task.key, value, latency_ms, cost_usd, now);
      se.frequency = 0;
      auto res = engine.admit(std::move(se), now);
      std::lock_guard lock(mu_);
      ++stats_.admitted;
      return res;
    } catch (const Error&) {
      std::lock_guard lock(mu_);
      ++stats_.failed;
      return std::nullopt;
    }
  }

  void fail(const PrefetchTask& task) {
    release(task);
    std::lock_guard lock(mu_);
    ++stats_.failed;
  }

  std::size_t in_flight() const {
    std::lock_guard lock(mu_);
    return in_flight_.size();
  }

  PrefetchStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

 private:
  void release(const PrefetchTask& task) {
    std::lock_guard lock(mu_);
    in_flight_.erase(markov_key(task.key));
  }

  PrefetchOptions options_;
  MarkovModel model_;
  mutable std::mutex mu_;
  std::optional<std::string> last_hit_;
  std::unordered_map<std::string, SemanticKey> origin_;
  std::set<std::string> in_flight_;
  PrefetchStats stats_;
};

}  // namespace semcache
