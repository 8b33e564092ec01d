#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "semcache/cache_engine.hpp"
#include "semcache/prefetcher.hpp"
#include "semcache/recalibration.hpp"
#include "semcache/remote_client.hpp"

namespace semcache {

struct ToolCall {
  std::string tool;
  std::string query_text;
  std::size_t span_begin = 0;  // offset of the opening '<'
  std::size_t span_end = 0;    // one past the closing '>'
  std::string context;         // text preceding the call, when requested
};

struct ParseResult {
  std::vector<ToolCall> calls;
  std::vector<std::string> diagnostics;
};

// Extracts <tool>query</tool> blocks for the given tool names, in document
// order. Tags with other names (think, info, ...) are skipped over. An
// unclosed or empty block is reported and skipped. `context_chars` copies up
// to that many characters preceding each call into ToolCall::context.
inline ParseResult parse_tool_calls(std::string_view text, const std::vector<std::string>& tools,
                                    std::size_t context_chars = 0) {
  ParseResult out;
  const auto is_name_char = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-';
  };
  std::size_t pos = 0;
  while ((pos = text.find('<', pos)) != std::string_view::npos) {
    std::size_t name_end = pos + 1;
    while (name_end < text.size() && is_name_char(text[name_end])) ++name_end;
    if (name_end == pos + 1 || name_end >= text.size() || text[name_end] != '>') {
      ++pos;
      continue;
    }
    const std::string name(text.substr(pos + 1, name_end - pos - 1));
    if (std::find(tools.begin(), tools.end(), name) == tools.end()) {
      pos = name_end + 1;
      continue;
    }
    const std::string open = "<" + name + ">";
    const std::string close = "</" + name + ">";
    const std::size_t body = name_end + 1;
    const auto close_at = text.find(close, body);
    const auto reopen_at = text.find(open, body);
    if (close_at == std::string_view::npos || (reopen_at != std::string_view::npos && reopen_at < close_at)) {
      out.diagnostics.push_back("unclosed <" + name + "> at offset " + std::to_string(pos));
      pos = body;
      continue;
    }
    const auto query = trim(text.substr(body, close_at - body));
    if (query.empty()) {
      out.diagnostics.push_back("empty <" + name + "> at offset " + std::to_string(pos));
    } else {
      ToolCall call;
      call.tool = name;
      call.query_text = std::string(query);
      call.span_begin = pos;
      call.span_end = close_at + close.size();
      if (context_chars > 0) {
        const auto from = pos > context_chars ? pos - context_chars : 0;
        call.context = std::string(text.substr(from, pos - from));
      }
      out.calls.push_back(std::move(call));
    }
    pos = close_at + close.size();
  }
  return out;
}

enum class ServeSource { cache, remote };

inline const char* to_string(ServeSource s) { return s == ServeSource::cache ? "cache" : "remote"; }

struct ServeResult {
  std::string value;
  ServeSource source = ServeSource::remote;
  LookupOutcome outcome;
  std::optional<FetchRecord> fetch;
  std::optional<std::string> error;

  bool ok() const { return !error.has_value(); }
};

struct ProxyOptions {
  std::vector<std::string> tools{"search"};
  std::size_t context_chars = 0;  // 0: the judge sees only the tag content
  std::size_t recent_log_capacity = 4096;
};

struct ProxyCounters {
  std::uint64_t requests = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t errors = 0;
  std::uint64_t remote_fetches = 0;
  std::uint64_t admit_failures = 0;
};

// Cache-aside front end. With no engine it is a plain pass-through to the
// remote clients.
class Proxy {
 public:
  using Launcher = std::function<void(const PrefetchTask&)>;

  Proxy(std::shared_ptr<CacheEngine> engine,
        std::map<std::string, std::shared_ptr<RemoteToolClient>> clients,
        std::shared_ptr<Prefetcher> prefetcher = nullptr, ProxyOptions options = {})
      : engine_(std::move(engine)),
        clients_(std::move(clients)),
        prefetcher_(std::move(prefetcher)),
        options_(std::move(options)) {
    if (prefetcher_ && !engine_) throw ConfigError("prefetching needs a cache engine");
  }

  ~Proxy() { drain(); }

  Proxy(const Proxy&) = delete;
  Proxy& operator=(const Proxy&) = delete;

  CacheEngine* engine() { return engine_.get(); }
  Prefetcher* prefetcher() { return prefetcher_.get(); }
  const ProxyOptions& options() const { return options_; }

  RemoteToolClient& client(const std::string& tool) {
    auto it = clients_.find(tool);
    if (it == clients_.end()) throw NotFoundError("no endpoint configured for tool '" + tool + "'");
    return *it->second;
  }
  const std::map<std::string, std::shared_ptr<RemoteToolClient>>& clients() const { return clients_; }

  LedgerTotals ledger() const {
    LedgerTotals t;
    for (const auto& [name, c] : clients_) t += c->ledger();
    return t;
  }

  ParseResult parse(std::string_view agent_output) const {
    return parse_tool_calls(agent_output, options_.tools, options_.context_chars);
  }

  // Phase 1. A miss outcome when there is no cache.
  LookupOutcome lookup(const ToolCall& call, Timestamp now) {
    if (!engine_) return {};
    const auto key = SemanticKey::make(call.query_text, call.tool);
    if (options_.context_chars > 0 && !call.context.empty()) {
      return engine_->lookup(key, now, call.context + " " + call.query_text);
    }
    return engine_->lookup(key, now);
  }

  // Phase 2a: serve the cached value, feed the hit stream, maybe prefetch.
  ServeResult serve_hit(const ToolCall& call, LookupOutcome outcome, Timestamp now,
                        const Launcher& launch) {
    ServeResult r;
    r.source = ServeSource::cache;
    r.value = outcome.element->value;
    const auto served_key = outcome.element->key;
    push_recent({call.query_text, served_key.text, r.value, outcome.s_lsm.value_or(1.0)});
    r.outcome = std::move(outcome);
    {
      std::lock_guard lock(mu_);
      ++counters_.requests;
      ++counters_.hits;
    }
    if (prefetcher_) {
      prefetcher_->record_hit(served_key);
      prefetcher_->maybe_prefetch(served_key, *engine_, now, launch);
    }
    return r;
  }

  // Phase 2b: a remote reply arrived for a miss; cache it and return it.
  ServeResult admit_fetched(const ToolCall& call, LookupOutcome outcome, FetchRecord fetch,
                            Timestamp now, const Launcher& launch) {
    ServeResult r;
    r.source = ServeSource::remote;
    r.value = fetch.result;
    r.outcome = std::move(outcome);
    const auto key = SemanticKey::make(call.query_text, call.tool);
    bool admit_failed = false;
    if (engine_ && !fetch.not_found) {
      try {
        auto se = engine_->build_element(key, fetch.result, fetch.service_ms, fetch.cost_usd, now);
        engine_->admit(std::move(se), now);
      } catch (const Error&) {
        admit_failed = true;
      }
    }
    r.fetch = std::move(fetch);
    {
      std::lock_guard lock(mu_);
      ++counters_.requests;
      ++counters_.misses;
      ++counters_.remote_fetches;
      if (admit_failed) ++counters_.admit_failures;
    }
    if (prefetcher_) {
      prefetcher_->remember(key);
      prefetcher_->maybe_prefetch(key, *engine_, now, launch);
    }
    return r;
  }

  // Phase 2c: the remote fetch failed; nothing is cached.
  ServeResult fail(LookupOutcome outcome, std::string error) {
    ServeResult r;
    r.outcome = std::move(outcome);
    r.error = std::move(error);
    std::lock_guard lock(mu_);
    ++counters_.requests;
    ++counters_.misses;
    ++counters_.errors;
    return r;
  }

  // Blocking cache-aside on `clock`. Prefetches run on background tasks.
  ServeResult handle(const ToolCall& call, Clock& clock) {
    auto outcome = lookup(call, clock.now());
    const Launcher launch = [this, &clock](const PrefetchTask& t) { launch_background(t, clock); };
    if (outcome.hit()) return serve_hit(call, std::move(outcome), clock.now(), launch);
    FetchRecord rec;
    try {
      rec = client(call.tool).fetch(SemanticKey::make(call.query_text, call.tool), Priority::user, clock);
    } catch (const Error& e) {
      return fail(std::move(outcome), e.what());
    }
    return admit_fetched(call, std::move(outcome), std::move(rec), clock.now(), launch);
  }

  // Waits for background prefetches.
  void drain() {
    std::vector<std::future<void>> pending;
    {
      std::lock_guard lock(mu_);
      pending.swap(background_);
    }
    for (auto& f : pending) f.wait();
  }

  ProxyCounters counters() const {
    std::lock_guard lock(mu_);
    return counters_;
  }

  std::vector<RecentLogEntry> recent_log() const {
    std::lock_guard lock(mu_);
    return {recent_.begin(), recent_.end()};
  }

  void add_validation(std::vector<AnnotatedSample> samples) {
    std::lock_guard lock(mu_);
    for (auto& s : samples) validation_.push_back(std::move(s));
  }

  std::size_t validation_size() const {
    std::lock_guard lock(mu_);
    return validation_.size();
  }

  // Re-derives the judge threshold from labeled samples of recent hits and
  // installs it on the engine (flagged thresholds included: they stop
  // serving hits until the judge is fixed).
  RecalibrationOutcome recalibrate(std::size_t sample_size, const GroundTruthFetch& fetch_gt,
                                   const GroundTruthEval& evaluate) {
    if (!engine_ || !engine_->judge()) throw ConfigError("recalibration needs a semantic cache");
    std::lock_guard guard(recal_mu_);
    const auto log = recent_log();
    std::vector<AnnotatedSample> validation;
    {
      std::lock_guard lock(mu_);
      validation = validation_;
    }
    auto out = recalibrate_threshold(log, validation, sample_size, fetch_gt, evaluate);
    {
      std::lock_guard lock(mu_);
      validation_ = std::move(validation);
    }
    engine_->set_tau_lsm(out.tau_lsm);
    return out;
  }

  // Runs one prefetch on a background task using the blocking client.
  void launch_background(const PrefetchTask& task, Clock& clock) {
    auto fut = std::async(std::launch::async, [this, task, &clock] {
      try {
        auto rec = client(task.key.tool).fetch(task.key, Priority::prefetch, clock);
        if (rec.not_found) {
          prefetcher_->fail(task);
          return;
        }
        prefetcher_->complete(task, rec.result, rec.service_ms, rec.cost_usd, *engine_, clock.now());
      } catch (const Error&) {
        prefetcher_->fail(task);
      }
    });
    std::lock_guard lock(mu_);
    std::erase_if(background_, [](std::future<void>& f) {
      return f.wait_for(std::chrono::seconds(0)) == std::future_status::ready;
    });
    background_.push_back(std::move(fut));
  }

 private:
  RecalibrationOutcome recalibrate_threshold(const std::vector<RecentLogEntry>& log,
                                             std::vector<AnnotatedSample>& validation,
                                             std::size_t sample_size, const GroundTruthFetch& fetch_gt,
                                             const GroundTruthEval& evaluate) {
    return semcache::recalibrate(*engine_->judge(), engine_->embedder(), log, validation,
                                 engine_->config().p_target, sample_size, fetch_gt, evaluate);
  }

  void push_recent(RecentLogEntry e) {
    std::lock_guard lock(mu_);
    recent_.push_back(std::move(e));
    while (recent_.size() > options_.recent_log_capacity) recent_.pop_front();
  }

  std::shared_ptr<CacheEngine> engine_;
  std::map<std::string, std::shared_ptr<RemoteToolClient>> clients_;
  std::shared_ptr<Prefetcher> prefetcher_;
  ProxyOptions options_;

  mutable std::mutex mu_;
  std::mutex recal_mu_;
  ProxyCounters counters_;
  std::deque<RecentLogEntry> recent_;
  std::vector<AnnotatedSample> validation_;
  std::vector<std::future<void>> background_;
};

}  // namespace semcache
