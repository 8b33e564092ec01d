#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>

#include "semcache/element.hpp"

namespace semcache {

enum class Priority { user = 0, prefetch = 1 };

struct ToolEndpointConfig {
  std::string name = "search";
  double base_latency_ms = 400;
  double latency_jitter_ms = 0;
  double cost_per_call_usd = 0.005;
  std::size_t rate_limit_per_min = 100;
  int max_retries = 6;
  double backoff_base_ms = 1000;
  double window_ms = 60000;
  // Permits per window that prefetches may never take.
  std::size_t user_reserve = 10;

  void validate() const {
    if (name.empty()) throw ConfigError("endpoint name must not be empty");
    if (base_latency_ms < 0 || latency_jitter_ms < 0 || cost_per_call_usd < 0 || backoff_base_ms < 0) {
      throw ConfigError("endpoint '" + name + "': values must be non-negative");
    }
    if (rate_limit_per_min < 1) throw ConfigError("endpoint '" + name + "': rate limit must be >= 1");
    if (max_retries < 0) throw ConfigError("endpoint '" + name + "': max_retries must be >= 0");
    if (!(window_ms > 0)) throw ConfigError("endpoint '" + name + "': window must be positive");
  }
};

struct FetchRecord {
  SemanticKey query;
  std::string result;
  double latency_ms = 0;  // includes throttling waits
  double service_ms = 0;  // the call itself
  double cost_usd = 0;
  int retries = 0;
  bool throttled = false;
  bool not_found = false;
};

inline constexpr std::string_view kNotFoundMarker = "<not-found>";

// At most `limit` grants in any window of length `window`. A grant made at g
// stops counting once g + window <= now. Waiting user requests block
// prefetch grants, and prefetches cannot use the last `user_reserve` slots.
class SlidingWindowLimiter {
 public:
  SlidingWindowLimiter(std::size_t limit, Millis window, std::size_t user_reserve = 0)
      : limit_(limit), window_(window), reserve_(std::min(user_reserve, limit - 1)) {
    if (limit == 0) throw ConfigError("rate limit must be >= 1");
    if (!(window.count() > 0)) throw ConfigError("rate window must be positive");
  }

  bool try_acquire(Timestamp now, Priority prio = Priority::user) {
    std::lock_guard lock(mu_);
    expire(now);
    if (prio == Priority::prefetch) {
      if (waiting_users_ > 0 || grants_.size() + reserve_ >= limit_) return false;
    } else if (grants_.size() >= limit_) {
      return false;
    }
    grants_.push_back(now);
    return true;
  }

  // When the oldest live grant leaves the window (now if a slot is free).
  Timestamp next_free(Timestamp now) {
    std::lock_guard lock(mu_);
    expire(now);
    if (grants_.size() < limit_) return now;
    return grants_.front() + window_;
  }

  std::size_t in_window(Timestamp now) {
    std::lock_guard lock(mu_);
    expire(now);
    return grants_.size();
  }

  void user_waiting(bool start) {
    std::lock_guard lock(mu_);
    if (start) {
      ++waiting_users_;
    } else if (waiting_users_ > 0) {
      --waiting_users_;
    }
  }

  std::size_t limit() const { return limit_; }
  Millis window() const { return window_; }

 private:
  void expire(Timestamp now) {
    while (!grants_.empty() && grants_.front() + window_ <= now) grants_.pop_front();
  }

  std::size_t limit_;
  Millis window_;
  std::size_t reserve_;
  std::mutex mu_;
  std::deque<Timestamp> grants_;
  std::size_t waiting_users_ = 0;
};

struct LedgerTotals {
  double api_cost_usd = 0;
  std::uint64_t call_count = 0;  // billed successful calls
  std::uint64_t not_found_count = 0;
  std::uint64_t attempts = 0;  // every permit request, granted or not
  std::uint64_t retry_count = 0;
  std::uint64_t throttle_events = 0;
  std::uint64_t failures = 0;

  double retry_ratio() const {
    return attempts == 0 ? 0.0 : static_cast<double>(retry_count) / static_cast<double>(attempts);
  }
  LedgerTotals& operator+=(const LedgerTotals& o) {
    api_cost_usd += o.api_cost_usd;
    call_count += o.call_count;
    not_found_count += o.not_found_count;
    attempts += o.attempts;
    retry_count += o.retry_count;
    throttle_events += o.throttle_events;
    failures += o.failures;
    return *this;
  }
};

class CostLedger {
 public:
  explicit CostLedger(double cost_per_call) : cost_per_call_(cost_per_call) {}

  void attempt() { bump(&LedgerTotals::attempts); }
  void retry() { bump(&LedgerTotals::retry_count); }
  void throttle() { bump(&LedgerTotals::throttle_events); }
  void failure() { bump(&LedgerTotals::failures); }
  void not_found() { bump(&LedgerTotals::not_found_count); }
  void call() { bump(&LedgerTotals::call_count); }

  // Cost is derived from the call count so that it is exact.
  LedgerTotals totals() const {
    std::lock_guard lock(mu_);
    auto t = t_;
    t.api_cost_usd = static_cast<double>(t.call_count) * cost_per_call_;
    return t;
  }

 private:
  void bump(std::uint64_t LedgerTotals::*field) {
    std::lock_guard lock(mu_);
    ++(t_.*field);
  }

  double cost_per_call_;
  mutable std::mutex mu_;
  LedgerTotals t_;
};

// key -> canonical result
class GroundTruthTable {
 public:
  void put(std::string key, std::string result) {
    if (key.empty()) throw ValidationError("ground truth key must not be empty");
    table_[std::move(key)] = std::move(result);
  }
  const std::string* find(const std::string& key) const {
    auto it = table_.find(key);
    return it == table_.end() ? nullptr : &it->second;
  }
  bool contains(const std::string& key) const { return table_.count(key) != 0; }
  std::size_t size() const { return table_.size(); }
  const std::map<std::string, std::string>& entries() const { return table_; }

  // "key<TAB>result" per line, fields escaped.
  static GroundTruthTable read(std::istream& in) {
    GroundTruthTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw ValidationError("ground truth line " + std::to_string(lineno) + ": missing tab");
      }
      t.put(unescape_field(std::string_view(line).substr(0, tab)),
            unescape_field(std::string_view(line).substr(tab + 1)));
    }
    return t;
  }
  static GroundTruthTable read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return read(in);
  }
  void write(std::ostream& out) const {
    for (const auto& [k, v] : table_) out << escape_field(k) << '\t' << escape_field(v) << '\n';
  }

 private:
  std::map<std::string, std::string> table_;
};

struct BackendReply {
  std::string result;
  double latency_ms = 0;   // still to be waited out by the caller
  double observed_ms = 0;  // already spent inside call()
  bool not_found = false;
};

// Whatever actually answers a tool call. The caller is responsible for
// waiting out latency_ms on its clock.
class RemoteBackend {
 public:
  virtual ~RemoteBackend() = default;
  virtual BackendReply call(const SemanticKey& query) = 0;
};

// In-process stand-in for a remote API. A resolver maps query text to a
// ground-truth key; latency is base +/- uniform jitter from a seeded stream.
class SimulatedService final : public RemoteBackend {
 public:
  using Resolver = std::function<std::optional<std::string>(const SemanticKey&)>;

  SimulatedService(GroundTruthTable table, Resolver resolver, double base_latency_ms,
                   double jitter_ms = 0, std::uint64_t seed = 1)
      : table_(std::move(table)),
        resolver_(std::move(resolver)),
        base_ms_(base_latency_ms),
        jitter_ms_(jitter_ms),
        rng_(seed) {
    if (base_latency_ms < 0 || jitter_ms < 0) throw ConfigError("service latency must be non-negative");
  }

  BackendReply call(const SemanticKey& query) override {
    BackendReply r;
    r.latency_ms = next_latency();
    std::optional<std::string> gt;
    if (resolver_) gt = resolver_(query);
    const std::string* hit = gt ? table_.find(*gt) : nullptr;
    if (!hit) {
      r.result = std::string(kNotFoundMarker);
      r.not_found = true;
    } else {
      r.result = *hit;
    }
    return r;
  }

  double next_latency() {
    std::lock_guard lock(mu_);
    if (jitter_ms_ == 0) return base_ms_;
    std::uniform_real_distribution<double> d(-jitter_ms_, jitter_ms_);
    return std::max(0.0, base_ms_ + d(rng_));
  }

  const GroundTruthTable& table() const { return table_; }

 private:
  GroundTruthTable table_;
  Resolver resolver_;
  double base_ms_;
  double jitter_ms_;
  std::mutex mu_;
  std::mt19937_64 rng_;
};

// In-progress fetch, advanced by RemoteToolClient::step().
struct FetchState {
  SemanticKey query;
  Priority priority = Priority::user;
  Timestamp started{};
  int attempt = 0;
  int retries = 0;
  bool throttled = false;
  bool waiting = false;
};

struct FetchStep {
  enum Kind { granted, backoff } kind = granted;
  Timestamp resume_at{};  // backoff: try again at this time
  BackendReply reply;     // granted: reply, arriving after reply.latency_ms
};

// Rate-limited, retrying, accounted access to one endpoint.
class RemoteToolClient {
 public:
  RemoteToolClient(ToolEndpointConfig config, std::shared_ptr<RemoteBackend> backend)
      : config_((config.validate(), std::move(config))),
        backend_(std::move(backend)),
        limiter_(config_.rate_limit_per_min, Millis{config_.window_ms}, config_.user_reserve),
        ledger_(config_.cost_per_call_usd) {
    if (!backend_) throw ConfigError("remote client needs a backend");
  }

  const ToolEndpointConfig& config() const { return config_; }
  SlidingWindowLimiter& limiter() { return limiter_; }
  LedgerTotals ledger() const { return ledger_.totals(); }

  FetchState begin(SemanticKey query, Priority prio, Timestamp now) const {
    FetchState s;
    s.query = std::move(query);
    s.priority = prio;
    s.started = now;
    return s;
  }

  // One permit request. Granted: the backend is called and the reply comes
  // back after its latency. Throttled: returns when to retry, or throws
  // RateLimitError once retries are used up. Prefetches get one attempt.
  FetchStep step(FetchState& s, Timestamp now) {
    ledger_.attempt();
    if (s.attempt > 0) {
      ledger_.retry();
      ++s.retries;
    }
    if (limiter_.try_acquire(now, s.priority)) {
      set_waiting(s, false);
      FetchStep st;
      st.kind = FetchStep::granted;
      try {
        st.reply = backend_->call(s.query);
      } catch (const Error&) {
        ledger_.failure();
        throw;
      }
      return st;
    }
    ledger_.throttle();
    s.throttled = true;
    if (s.priority == Priority::prefetch || s.attempt >= config_.max_retries) {
      set_waiting(s, false);
      ledger_.failure();
      throw RateLimitError("endpoint '" + config_.name + "': rate limited after " +
                           std::to_string(s.retries) + " retries");
    }
    set_waiting(s, true);
    const double wait = config_.backoff_base_ms * std::pow(2.0, s.attempt);
    ++s.attempt;
    return FetchStep{FetchStep::backoff, now + Millis{wait}, {}};
  }

  // Books the reply that arrived at `now` and builds the record.
  FetchRecord finish(FetchState& s, const BackendReply& reply, Timestamp now) {
    FetchRecord r;
    r.query = s.query;
    r.result = reply.result;
    r.not_found = reply.not_found;
    r.latency_ms = (now - s.started).count();
    r.service_ms = reply.latency_ms + reply.observed_ms;
    r.retries = s.retries;
    r.throttled = s.throttled;
    if (reply.not_found) {
      ledger_.not_found();
    } else {
      ledger_.call();
      r.cost_usd = config_.cost_per_call_usd;
    }
    return r;
  }

  // Blocking fetch on `clock`. Must not be called while holding cache locks.
  FetchRecord fetch(const SemanticKey& query, Priority prio, Clock& clock) {
    auto s = begin(query, prio, clock.now());
    try {
      for (;;) {
        auto st = step(s, clock.now());
        if (st.kind == FetchStep::backoff) {
          clock.sleep_for(st.resume_at - clock.now());
          continue;
        }
        clock.sleep_for(Millis{st.reply.latency_ms});
        return finish(s, st.reply, clock.now());
      }
    } catch (...) {
      set_waiting(s, false);
      throw;
    }
  }

 private:
  void set_waiting(FetchState& s, bool w) {
    if (s.priority != Priority::user || s.waiting == w) return;
    s.waiting = w;
    limiter_.user_waiting(w);
  }

  ToolEndpointConfig config_;
  std::shared_ptr<RemoteBackend> backend_;
  SlidingWindowLimiter limiter_;
  CostLedger ledger_;
};

}  // namespace semcache
