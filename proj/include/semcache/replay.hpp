#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "semcache/proxy.hpp"
#include "semcache/workload.hpp"

namespace semcache {

enum class SystemKind { vanilla, exact, ann_only, full };

inline const char* to_string(SystemKind k) {
  switch (k) {
    case SystemKind::vanilla: return "vanilla";
    case SystemKind::exact: return "exact";
    case SystemKind::ann_only: return "ann_only";
    case SystemKind::full: return "full";
  }
  return "?";
}

inline SystemKind parse_system(std::string_view s) {
  if (s == "vanilla") return SystemKind::vanilla;
  if (s == "exact") return SystemKind::exact;
  if (s == "ann_only" || s == "ann") return SystemKind::ann_only;
  if (s == "full") return SystemKind::full;
  throw ConfigError("unknown system '" + std::string(s) + "'");
}

inline EvictionPolicy parse_policy(std::string_view s) {
  if (s == "lcfu") return EvictionPolicy::lcfu;
  if (s == "lru") return EvictionPolicy::lru;
  if (s == "lfu") return EvictionPolicy::lfu;
  throw ConfigError("unknown eviction policy '" + std::string(s) + "'");
}

// Simulated time charged per request stage.
struct StageCosts {
  double agent_ms = 600;
  double cache_retrieval_ms = 20;  // embed + index probe
  double judge_ms = 30;            // per judge call
  double exact_lookup_ms = 1;
  // Charge the measured wall time of embed/index/judge instead of the
  // constants above.
  bool measured = false;
};

enum class ClockMode { virtual_time, real_time };

enum class CapacityBasis {
  request_footprint,  // an answer per distinct request text
  unique_results,     // each distinct answer once
};

struct ReplayConfig {
  SystemKind system = SystemKind::full;
  EvictionPolicy eviction = EvictionPolicy::lcfu;
  CacheConfig cache{};
  double cache_ratio = 0.4;  // <= 0: use cache.capacity_tokens as is
  CapacityBasis basis = CapacityBasis::request_footprint;
  std::size_t workers = 8;
  StageCosts stages{};
  std::map<std::string, ToolEndpointConfig> endpoints;  // tools not listed get defaults
  bool prefetch = false;
  PrefetchOptions prefetch_options{};
  std::size_t dimension = kDefaultDimension;
  std::uint64_t embed_seed = 1;
  std::uint64_t service_seed = 1;
  bool approximate_index = true;
  // Admit one answer per cluster (first text seen) before the clock starts.
  bool prefill = false;
  ClockMode clock = ClockMode::virtual_time;
  double real_time_scale = 0.001;  // real seconds per simulated second
};

struct StageMeans {
  double agent_ms = 0;
  double cache_retrieval_ms = 0;
  double judge_ms = 0;
  double remote_ms = 0;

  double total() const { return agent_ms + cache_retrieval_ms + judge_ms + remote_ms; }
};

struct MetricsReport {
  std::string system;
  std::string eviction;
  std::size_t n_events = 0;
  std::size_t completed = 0;
  std::size_t errors = 0;
  std::size_t hits = 0;
  std::size_t misses = 0;
  double hit_rate = 0;
  double throughput_rps = 0;
  double latency_mean_ms = 0;
  double latency_p50_ms = 0;
  double latency_p99_ms = 0;
  std::uint64_t api_calls = 0;  // every permit request, granted or throttled
  std::uint64_t retries = 0;
  double retry_ratio = 0;
  std::uint64_t throttle_events = 0;
  std::uint64_t billed_calls = 0;
  double api_cost_usd = 0;
  double accuracy = 0;  // over completed requests
  StageMeans stages;
  std::uint64_t prefetch_initiated = 0;
  std::uint64_t prefetch_admitted = 0;
  std::uint64_t evictions = 0;
  std::size_t capacity_tokens = 0;
  double makespan_ms = 0;
  // Per-event record, in trace order: served-from-cache flag.
  std::vector<char> served_from_cache;
  std::vector<char> correct;
};

inline StageMeans latency_breakdown(const MetricsReport& r) { return r.stages; }

// Expected per-request latency of a cache with hit probability p_hit.
inline double expected_latency(double p_hit, double hit_latency, double miss_latency) {
  if (p_hit < 0 || p_hit > 1) throw ValidationError("expected_latency: p_hit outside [0,1]");
  return p_hit * hit_latency + (1.0 - p_hit) * miss_latency;
}

// Nearest-rank percentile.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

inline std::string to_kv(const MetricsReport& r) {
  return encode_kv({
      {"system", r.system},
      {"eviction", r.eviction},
      {"n_events", std::to_string(r.n_events)},
      {"completed", std::to_string(r.completed)},
      {"errors", std::to_string(r.errors)},
      {"hits", std::to_string(r.hits)},
      {"misses", std::to_string(r.misses)},
      {"hit_rate", format_double(r.hit_rate)},
      {"throughput_rps", format_double(r.throughput_rps)},
      {"latency_mean_ms", format_double(r.latency_mean_ms)},
      {"latency_p50_ms", format_double(r.latency_p50_ms)},
      {"latency_p99_ms", format_double(r.latency_p99_ms)},
      {"api_calls", std::to_string(r.api_calls)},
      {"retries", std::to_string(r.retries)},
      {"retry_ratio", format_double(r.retry_ratio)},
      {"throttle_events", std::to_string(r.throttle_events)},
      {"billed_calls", std::to_string(r.billed_calls)},
      {"api_cost_usd", format_double(r.api_cost_usd)},
      {"accuracy", format_double(r.accuracy)},
      {"stage_agent_ms", format_double(r.stages.agent_ms)},
      {"stage_cache_retrieval_ms", format_double(r.stages.cache_retrieval_ms)},
      {"stage_judge_ms", format_double(r.stages.judge_ms)},
      {"stage_remote_ms", format_double(r.stages.remote_ms)},
      {"prefetch_initiated", std::to_string(r.prefetch_initiated)},
      {"prefetch_admitted", std::to_string(r.prefetch_admitted)},
      {"evictions", std::to_string(r.evictions)},
      {"capacity_tokens", std::to_string(r.capacity_tokens)},
      {"makespan_ms", format_double(r.makespan_ms)},
  });
}

inline MetricsReport report_from_kv(std::string_view text) {
  const auto kv = decode_kv(text);
  const auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ValidationError(std::string("report: missing ") + k);
    return it->second;
  };
  MetricsReport r;
  r.system = get("system");
  r.eviction = get("eviction");
  r.n_events = parse_int<std::size_t>(get("n_events"));
  r.completed = parse_int<std::size_t>(get("completed"));
  r.errors = parse_int<std::size_t>(get("errors"));
  r.hits = parse_int<std::size_t>(get("hits"));
  r.misses = parse_int<std::size_t>(get("misses"));
  r.hit_rate = parse_double(get("hit_rate"));
  r.throughput_rps = parse_double(get("throughput_rps"));
  r.latency_mean_ms = parse_double(get("latency_mean_ms"));
  r.latency_p50_ms = parse_double(get("latency_p50_ms"));
  r.latency_p99_ms = parse_double(get("latency_p99_ms"));
  r.api_calls = parse_int<std::uint64_t>(get("api_calls"));
  r.retries = parse_int<std::uint64_t>(get("retries"));
  r.retry_ratio = parse_double(get("retry_ratio"));
  r.throttle_events = parse_int<std::uint64_t>(get("throttle_events"));
  r.billed_calls = parse_int<std::uint64_t>(get("billed_calls"));
  r.api_cost_usd = parse_double(get("api_cost_usd"));
  r.accuracy = parse_double(get("accuracy"));
  r.stages.agent_ms = parse_double(get("stage_agent_ms"));
  r.stages.cache_retrieval_ms = parse_double(get("stage_cache_retrieval_ms"));
  r.stages.judge_ms = parse_double(get("stage_judge_ms"));
  r.stages.remote_ms = parse_double(get("stage_remote_ms"));
  r.prefetch_initiated = parse_int<std::uint64_t>(get("prefetch_initiated"));
  r.prefetch_admitted = parse_int<std::uint64_t>(get("prefetch_admitted"));
  r.evictions = parse_int<std::uint64_t>(get("evictions"));
  r.capacity_tokens = parse_int<std::size_t>(get("capacity_tokens"));
  r.makespan_ms = parse_double(get("makespan_ms"));
  return r;
}

// Tab-separated table, one header row then one row per report.
inline std::string to_table(const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  out << "system\teviction\thit_rate\tthroughput_rps\tlatency_mean_ms\tlatency_p99_ms\tapi_calls\tretry_ratio"
         "\tapi_cost_usd\taccuracy\n";
  for (const auto& r : reports) {
    out << r.system << '\t' << r.eviction << '\t' << format_double(r.hit_rate) << '\t'
        << format_double(r.throughput_rps) << '\t' << format_double(r.latency_mean_ms) << '\t'
        << format_double(r.latency_p99_ms) << '\t' << r.api_calls << '\t' << format_double(r.retry_ratio)
        << '\t' << format_double(r.api_cost_usd) << '\t' << format_double(r.accuracy) << '\n';
  }
  return out.str();
}

inline std::size_t replay_capacity(const Trace& trace, const ReplayConfig& cfg) {
  if (cfg.cache_ratio <= 0) return cfg.cache.capacity_tokens;
  const auto denom = cfg.basis == CapacityBasis::request_footprint ? footprint_tokens(trace)
                                                                    : unique_result_tokens(trace);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.cache_ratio * static_cast<double>(denom))));
}

// Everything a replay needs, wired from a trace and a config.
struct ReplayStack {
  std::shared_ptr<CacheEngine> engine;
  std::shared_ptr<Prefetcher> prefetcher;
  std::unique_ptr<Proxy> proxy;
  std::size_t capacity_tokens = 0;
};

inline ReplayStack build_stack(const Trace& trace, const ReplayConfig& cfg) {
  ReplayStack s;
  if (cfg.system != SystemKind::vanilla) {
    auto cc = cfg.cache;
    cc.capacity_tokens = replay_capacity(trace, cfg);
    s.capacity_tokens = cc.capacity_tokens;
    EngineOptions eo;
    eo.eviction = cfg.eviction;
    eo.approximate_index = cfg.approximate_index;
    eo.match = cfg.system == SystemKind::exact      ? MatchMode::exact
               : cfg.system == SystemKind::ann_only ? MatchMode::ann_only
                                                    : MatchMode::semantic;
    s.engine = std::make_shared<CacheEngine>(cc, std::make_shared<ReferenceEmbedder>(cfg.dimension, cfg.embed_seed),
                                             std::make_shared<ReferenceJudge>(), eo);
    if (cfg.prefetch) s.prefetcher = std::make_shared<Prefetcher>(cfg.prefetch_options);
  }
  std::map<std::string, std::shared_ptr<RemoteToolClient>> clients;
  std::set<std::string> tools;
  for (const auto& e : trace.events) tools.insert(e.tool);
  const auto resolver = trace_resolver(trace);
  std::uint64_t salt = 0;
  for (const auto& tool : tools) {
    ToolEndpointConfig ec;
    if (auto it = cfg.endpoints.find(tool); it != cfg.endpoints.end()) ec = it->second;
    ec.name = tool;
    auto svc = std::make_shared<SimulatedService>(trace.truth, resolver, ec.base_latency_ms, ec.latency_jitter_ms,
                                                  cfg.service_seed + salt++);
    clients.emplace(tool, std::make_shared<RemoteToolClient>(ec, svc));
  }
  ProxyOptions po;
  po.tools.assign(tools.begin(), tools.end());
  s.proxy = std::make_unique<Proxy>(s.engine, std::move(clients), s.prefetcher, po);

  if (cfg.prefill && s.engine) {
    std::set<std::string> done;
    for (const auto& e : trace.events) {
      if (!done.insert(e.ground_truth_key).second) continue;
      const auto& ec = s.proxy->client(e.tool).config();
      auto se = s.engine->build_element(SemanticKey::make(e.query_text, e.tool), *trace.truth.find(e.ground_truth_key),
                                        ec.base_latency_ms, ec.cost_per_call_usd, Timestamp{});
      s.engine->admit(std::move(se), Timestamp{});
    }
  }
  return s;
}

namespace detail {

struct RequestRecord {
  bool done = false;
  bool ok = false;
  bool from_cache = false;
  bool correct = false;
  double start_ms = 0;
  double end_ms = 0;
  double agent_ms = 0;
  double cache_ms = 0;
  double judge_ms = 0;
  double remote_ms = 0;
};

inline MetricsReport summarize(const Trace& trace, const ReplayConfig& cfg, const ReplayStack& stack,
                               const std::vector<RequestRecord>& recs) {
  MetricsReport r;
  r.system = to_string(cfg.system);
  r.eviction = cfg.system == SystemKind::vanilla ? "none" : to_string(cfg.eviction);
  r.n_events = trace.events.size();
  r.capacity_tokens = stack.capacity_tokens;
  std::vector<double> lat;
  double first = std::numeric_limits<double>::infinity();
  double last = 0;
  std::size_t correct = 0;
  for (const auto& rec : recs) {
    r.served_from_cache.push_back(rec.from_cache ? 1 : 0);
    r.correct.push_back(rec.correct ? 1 : 0);
    if (!rec.done) continue;
    if (!rec.ok) {
      ++r.errors;
      ++r.misses;
      continue;
    }
    ++r.completed;
    rec.from_cache ? ++r.hits : ++r.misses;
    correct += rec.correct ? 1 : 0;
    lat.push_back(rec.end_ms - rec.start_ms);
    first = std::min(first, rec.start_ms);
    last = std::max(last, rec.end_ms);
    r.stages.agent_ms += rec.agent_ms;
    r.stages.cache_retrieval_ms += rec.cache_ms;
    r.stages.judge_ms += rec.judge_ms;
    r.stages.remote_ms += rec.remote_ms;
  }
  const auto lookups = r.hits + r.misses;
  r.hit_rate = lookups == 0 ? 0.0 : static_cast<double>(r.hits) / static_cast<double>(lookups);
  if (r.completed > 0) {
    const double n = static_cast<double>(r.completed);
    r.accuracy = static_cast<double>(correct) / n;
    r.stages.agent_ms /= n;
    r.stages.cache_retrieval_ms /= n;
    r.stages.judge_ms /= n;
    r.stages.remote_ms /= n;
    double sum = 0;
    for (double v : lat) sum += v;
    r.latency_mean_ms = sum / n;
    r.latency_p50_ms = percentile(lat, 0.50);
    r.latency_p99_ms = percentile(lat, 0.99);
    r.makespan_ms = last - first;
    r.throughput_rps = r.makespan_ms > 0 ? n / (r.makespan_ms / 1000.0) : 0.0;
  }
  const auto ledger = stack.proxy->ledger();
  r.api_calls = ledger.attempts;
  r.retries = ledger.retry_count;
  r.retry_ratio = ledger.retry_ratio();
  r.throttle_events = ledger.throttle_events;
  r.billed_calls = ledger.call_count;
  r.api_cost_usd = ledger.api_cost_usd;
  if (stack.prefetcher) {
    const auto ps = stack.prefetcher->stats();
    r.prefetch_initiated = ps.initiated;
    r.prefetch_admitted = ps.admitted;
  }
  if (stack.engine) r.evictions = stack.engine->stats().evictions;
  return r;
}

inline double cache_stage_ms(const ReplayConfig& cfg, const LookupOutcome& o) {
  if (cfg.system == SystemKind::vanilla) return 0;
  if (cfg.stages.measured) return o.timings.embed_ms + o.timings.index_ms;
  return cfg.system == SystemKind::exact ? cfg.stages.exact_lookup_ms : cfg.stages.cache_retrieval_ms;
}

inline double judge_stage_ms(const ReplayConfig& cfg, const LookupOutcome& o) {
  if (cfg.system != SystemKind::full) return 0;
  if (cfg.stages.measured) return o.timings.judge_ms;
  return cfg.stages.judge_ms * static_cast<double>(o.judge_calls);
}

// Discrete-event replay on a virtual clock. Workers take trace events in
// order; a request runs agent time, then the cache stages, then (on a miss)
// the rate-limited remote fetch. Ties in time resolve in scheduling order.
inline MetricsReport replay_virtual(const Trace& trace, const ReplayConfig& cfg, ReplayStack& stack) {
  enum Kind { start_lookup, fetch_attempt, fetch_done, prefetch_attempt, prefetch_done };
  struct Event {
    double t;
    std::uint64_t seq;
    Kind kind;
    std::size_t slot;  // request index, or prefetch index
    bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };
  struct Pending {
    ToolCall call;
    LookupOutcome outcome;
    FetchState fetch;
    BackendReply reply;
    double fetch_began = 0;
  };
  struct PrefetchJob {
    PrefetchTask task;
    FetchState fetch;
    BackendReply reply;
  };

  std::priority_queue<Event, std::vector<Event>, std::greater<>> q;
  std::uint64_t seq = 0;
  const auto push = [&](double t, Kind k, std::size_t slot) { q.push({t, seq++, k, slot}); };

  auto& proxy = *stack.proxy;
  std::vector<RequestRecord> recs(trace.events.size());
  std::vector<Pending> pending(trace.events.size());
  std::vector<PrefetchJob> jobs;
  std::size_t next_event = 0;
  double now = 0;

  const Proxy::Launcher launch = [&](const PrefetchTask& t) {
    jobs.push_back({t, {}, {}});
    push(now, prefetch_attempt, jobs.size() - 1);
  };

  const auto take_next = [&](double free_at) {
    if (next_event >= trace.events.size()) return;
    const auto i = next_event++;
    const auto& ev = trace.events[i];
    auto& rec = recs[i];
    rec.start_ms = std::max(free_at, ev.arrival_ms);
    rec.agent_ms = cfg.stages.agent_ms;
    pending[i].call = ToolCall{ev.tool, ev.query_text, 0, 0, {}};
    push(rec.start_ms + rec.agent_ms, start_lookup, i);
  };
  const auto finish = [&](std::size_t i, double t, const ServeResult& res) {
    auto& rec = recs[i];
    rec.done = true;
    rec.ok = res.ok();
    rec.from_cache = res.ok() && res.source == ServeSource::cache;
    rec.correct = res.ok() && res.value == *trace.truth.find(trace.events[i].ground_truth_key);
    rec.end_ms = t;
    pending[i] = Pending{};
    take_next(t);
  };

  for (std::size_t w = 0; w < std::max<std::size_t>(1, cfg.workers); ++w) take_next(0);

  while (!q.empty()) {
    const auto e = q.top();
    q.pop();
    now = e.t;
    switch (e.kind) {
      case start_lookup: {
        auto& p = pending[e.slot];
        auto& rec = recs[e.slot];
        p.outcome = proxy.lookup(p.call, at_ms(now));
        rec.cache_ms = cache_stage_ms(cfg, p.outcome);
        rec.judge_ms = judge_stage_ms(cfg, p.outcome);
        const double ready = now + rec.cache_ms + rec.judge_ms;
        if (p.outcome.hit()) {
          now = ready;
          auto res = proxy.serve_hit(p.call, std::move(p.outcome), at_ms(ready), launch);
          finish(e.slot, ready, res);
        } else {
          p.fetch = proxy.client(p.call.tool).begin(SemanticKey::make(p.call.query_text, p.call.tool),
                                                    Priority::user, at_ms(ready));
          p.fetch_began = ready;
          push(ready, fetch_attempt, e.slot);
        }
        break;
      }
      case fetch_attempt: {
        auto& p = pending[e.slot];
        try {
          auto st = proxy.client(p.call.tool).step(p.fetch, at_ms(now));
          if (st.kind == FetchStep::backoff) {
            push(to_ms(st.resume_at), fetch_attempt, e.slot);
          } else {
            p.reply = st.reply;
            push(now + st.reply.latency_ms, fetch_done, e.slot);
          }
        } catch (const Error& err) {
          recs[e.slot].remote_ms = now - p.fetch_began;
          finish(e.slot, now, proxy.fail(std::move(p.outcome), err.what()));
        }
        break;
      }
      case fetch_done: {
        auto& p = pending[e.slot];
        auto rec = proxy.client(p.call.tool).finish(p.fetch, p.reply, at_ms(now));
        recs[e.slot].remote_ms = now - p.fetch_began;
        auto res = proxy.admit_fetched(p.call, std::move(p.outcome), std::move(rec), at_ms(now), launch);
        finish(e.slot, now, res);
        break;
      }
      case prefetch_attempt: {
        auto& j = jobs[e.slot];
        auto& client = proxy.client(j.task.key.tool);
        j.fetch = client.begin(j.task.key, Priority::prefetch, at_ms(now));
        try {
          auto st = client.step(j.fetch, at_ms(now));
          j.reply = st.reply;
          push(now + st.reply.latency_ms, prefetch_done, e.slot);
        } catch (const Error&) {
          stack.prefetcher->fail(j.task);
        }
        break;
      }
      case prefetch_done: {
        auto& j = jobs[e.slot];
        auto rec = proxy.client(j.task.key.tool).finish(j.fetch, j.reply, at_ms(now));
        if (rec.not_found) {
          stack.prefetcher->fail(j.task);
        } else {
          stack.prefetcher->complete(j.task, rec.result, rec.service_ms, rec.cost_usd, *stack.engine, at_ms(now));
        }
        break;
      }
    }
  }
  return summarize(trace, cfg, stack, recs);
}

// Same request flow on real threads and a (scaled) wall clock.
inline MetricsReport replay_real(const Trace& trace, const ReplayConfig& cfg, ReplayStack& stack) {
  ScaledSystemClock clock(cfg.real_time_scale);
  auto& proxy = *stack.proxy;
  std::vector<RequestRecord> recs(trace.events.size());
  std::atomic<std::size_t> next{0};
  std::mutex done_mu;

  const auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= trace.events.size()) return;
      const auto& ev = trace.events[i];
      const double wait = ev.arrival_ms - to_ms(clock.now());
      if (wait > 0) clock.sleep_for(Millis{wait});
      RequestRecord rec;
      rec.start_ms = to_ms(clock.now());
      rec.agent_ms = cfg.stages.agent_ms;
      clock.sleep_for(Millis{cfg.stages.agent_ms});
      const ToolCall call{ev.tool, ev.query_text, 0, 0, {}};
      auto outcome = proxy.lookup(call, clock.now());
      rec.cache_ms = cache_stage_ms(cfg, outcome);
      rec.judge_ms = judge_stage_ms(cfg, outcome);
      if (!cfg.stages.measured) clock.sleep_for(Millis{rec.cache_ms + rec.judge_ms});
      const Proxy::Launcher launch = [&](const PrefetchTask& t) { proxy.launch_background(t, clock); };
      ServeResult res;
      if (outcome.hit()) {
        res = proxy.serve_hit(call, std::move(outcome), clock.now(), launch);
      } else {
        const double began = to_ms(clock.now());
        try {
          auto fr = proxy.client(call.tool).fetch(SemanticKey::make(call.query_text, call.tool), Priority::user, clock);
          rec.remote_ms = to_ms(clock.now()) - began;
          res = proxy.admit_fetched(call, std::move(outcome), std::move(fr), clock.now(), launch);
        } catch (const Error& err) {
          rec.remote_ms = to_ms(clock.now()) - began;
          res = proxy.fail(std::move(outcome), err.what());
        }
      }
      rec.end_ms = to_ms(clock.now());
      rec.done = true;
      rec.ok = res.ok();
      rec.from_cache = res.ok() && res.source == ServeSource::cache;
      rec.correct = res.ok() && res.value == *trace.truth.find(ev.ground_truth_key);
      std::lock_guard lock(done_mu);
      recs[i] = rec;
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::max<std::size_t>(1, cfg.workers); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  proxy.drain();
  return summarize(trace, cfg, stack, recs);
}

}  // namespace detail

inline MetricsReport replay(const Trace& trace, const ReplayConfig& cfg) {
  trace.check();
  auto stack = build_stack(trace, cfg);
  return cfg.clock == ClockMode::virtual_time ? detail::replay_virtual(trace, cfg, stack)
                                              : detail::replay_real(trace, cfg, stack);
}

}  // namespace semcache
