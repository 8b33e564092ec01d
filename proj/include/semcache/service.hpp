#pragma once

// Network front end for the proxy. Needs cpp-httplib and nlohmann/json.

#include <atomic>
#include <fstream>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "semcache/proxy.hpp"
#include "semcache/remote_http.hpp"

namespace semcache {

struct EndpointSpec {
  ToolEndpointConfig limits;
  std::string kind = "simulated";  // simulated | http
  std::string ground_truth;        // simulated: table file keyed by canonical query
  std::uint64_t seed = 1;
  HttpToolConfig http;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0: any free port
  std::size_t workers = 8;
  CacheConfig cache{};
  EngineOptions engine{};
  bool prefetch = true;
  PrefetchOptions prefetch_options{};
  ProxyOptions proxy{};
  std::string embedder = "reference";  // reference | http
  std::string embedder_url;
  std::size_t dimension = kDefaultDimension;
  std::uint64_t embed_seed = 1;
  std::string judge = "reference";  // reference | http
  std::string judge_url;
  std::vector<EndpointSpec> endpoints;
  std::string snapshot_path = "semcache.snapshot";
  std::size_t recalibration_sample = 20;
};

inline ServiceConfig parse_service_config(const nlohmann::json& j) {
  ServiceConfig c;
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.workers = j.value("workers", c.workers);
  if (j.contains("cache")) {
    const auto& k = j.at("cache");
    c.cache.capacity_tokens = k.value("capacity_tokens", c.cache.capacity_tokens);
    c.cache.tau_sim = k.value("tau_sim", c.cache.tau_sim);
    c.cache.tau_lsm = k.value("tau_lsm", c.cache.tau_lsm);
    c.cache.ttl_seconds = k.value("ttl_seconds", c.cache.ttl_seconds);
    c.cache.candidate_k = k.value("candidate_k", c.cache.candidate_k);
    c.cache.prefetch_theta = k.value("prefetch_theta", c.cache.prefetch_theta);
    c.cache.p_target = k.value("p_target", c.cache.p_target);
  }
  c.cache.validate();
  const auto eviction = j.value("eviction", std::string("lcfu"));
  c.engine.eviction = eviction == "lru" ? EvictionPolicy::lru
                      : eviction == "lfu" ? EvictionPolicy::lfu
                      : eviction == "lcfu" ? EvictionPolicy::lcfu
                                           : throw ConfigError("unknown eviction '" + eviction + "'");
  const auto match = j.value("match", std::string("semantic"));
  c.engine.match = match == "exact" ? MatchMode::exact
                   : match == "ann_only" ? MatchMode::ann_only
                   : match == "semantic" ? MatchMode::semantic
                                         : throw ConfigError("unknown match mode '" + match + "'");
  c.prefetch = j.value("prefetch", c.prefetch);
  c.prefetch_options.theta = c.cache.prefetch_theta;
  c.prefetch_options.max_in_flight = j.value("prefetch_in_flight", c.prefetch_options.max_in_flight);
  if (j.contains("tools")) c.proxy.tools = j.at("tools").get<std::vector<std::string>>();
  c.proxy.context_chars = j.value("context_chars", c.proxy.context_chars);
  if (j.contains("embedder")) {
    const auto& e = j.at("embedder");
    c.embedder = e.value("kind", c.embedder);
    c.embedder_url = e.value("url", std::string());
    c.dimension = e.value("dimension", c.dimension);
    c.embed_seed = e.value("seed", c.embed_seed);
  }
  if (j.contains("judge")) {
    c.judge = j.at("judge").value("kind", c.judge);
    c.judge_url = j.at("judge").value("url", std::string());
  }
  for (const auto& e : j.value("endpoints", nlohmann::json::array())) {
    EndpointSpec s;
    s.limits.name = e.at("name").get<std::string>();
    s.limits.base_latency_ms = e.value("base_latency_ms", s.limits.base_latency_ms);
    s.limits.latency_jitter_ms = e.value("latency_jitter_ms", s.limits.latency_jitter_ms);
    s.limits.cost_per_call_usd = e.value("cost_per_call_usd", s.limits.cost_per_call_usd);
    s.limits.rate_limit_per_min = e.value("rate_limit_per_min", s.limits.rate_limit_per_min);
    s.limits.max_retries = e.value("max_retries", s.limits.max_retries);
    s.limits.backoff_base_ms = e.value("backoff_base_ms", s.limits.backoff_base_ms);
    s.limits.user_reserve = e.value("user_reserve", s.limits.user_reserve);
    s.limits.validate();
    s.kind = e.value("kind", s.kind);
    s.ground_truth = e.value("ground_truth", std::string());
    s.seed = e.value("seed", s.seed);
    s.http.url_template = e.value("url_template", std::string());
    s.http.timeout_ms = e.value("timeout_ms", s.http.timeout_ms);
    s.http.auth_env = e.value("auth_env", std::string());
    if (s.kind != "simulated" && s.kind != "http") throw ConfigError("unknown endpoint kind '" + s.kind + "'");
    c.endpoints.push_back(std::move(s));
  }
  if (c.endpoints.empty()) throw ConfigError("config needs at least one endpoint");
  c.snapshot_path = j.value("snapshot_path", c.snapshot_path);
  c.recalibration_sample = j.value("recalibration_sample", c.recalibration_sample);
  return c;
}

inline ServiceConfig load_service_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return parse_service_config(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// Builds the proxy from a config. Simulated endpoints answer from a table
// keyed by canonical query text.
inline std::unique_ptr<Proxy> build_proxy(const ServiceConfig& c) {
  std::shared_ptr<const Embedder> embedder;
  if (c.embedder == "http") {
    embedder = std::make_shared<RemoteEmbedder>(c.embedder_url, c.dimension, c.embed_seed);
  } else {
    embedder = std::make_shared<ReferenceEmbedder>(c.dimension, c.embed_seed);
  }
  std::shared_ptr<const Judge> judge;
  if (c.judge == "http") {
    judge = std::make_shared<RemoteJudge>(c.judge_url);
  } else {
    judge = std::make_shared<ReferenceJudge>();
  }
  auto engine = std::make_shared<CacheEngine>(c.cache, embedder, judge, c.engine);
  std::map<std::string, std::shared_ptr<RemoteToolClient>> clients;
  for (const auto& e : c.endpoints) {
    std::shared_ptr<RemoteBackend> backend;
    if (e.kind == "http") {
      backend = std::make_shared<HttpToolAdapter>(e.http);
    } else {
      GroundTruthTable table;
      if (!e.ground_truth.empty()) table = GroundTruthTable::read_file(e.ground_truth);
      SimulatedService::Resolver by_text = [](const SemanticKey& k) -> std::optional<std::string> {
        return canonicalize(k.text);
      };
      backend = std::make_shared<SimulatedService>(std::move(table), by_text, e.limits.base_latency_ms,
                                                   e.limits.latency_jitter_ms, e.seed);
    }
    clients.emplace(e.limits.name, std::make_shared<RemoteToolClient>(e.limits, backend));
  }
  auto prefetcher = c.prefetch ? std::make_shared<Prefetcher>(c.prefetch_options) : nullptr;
  return std::make_unique<Proxy>(engine, std::move(clients), prefetcher, c.proxy);
}

// Request handlers, usable without a socket. Bodies are key=value lines.
class ServiceHandlers {
 public:
  ServiceHandlers(Proxy& proxy, Clock& clock, std::string snapshot_path, std::size_t recal_sample)
      : proxy_(proxy), clock_(clock), snapshot_path_(std::move(snapshot_path)), recal_sample_(recal_sample) {}

  // tool + text, or agent_output (first tagged call is served).
  std::string query(std::string_view body) {
    const auto kv = decode_kv(body);
    ToolCall call;
    if (auto it = kv.find("agent_output"); it != kv.end()) {
      auto parsed = proxy_.parse(it->second);
      if (parsed.calls.empty()) {
        std::string why = parsed.diagnostics.empty() ? "no tool call found" : parsed.diagnostics.front();
        throw ValidationError(why);
      }
      call = parsed.calls.front();
    } else {
      auto tool = kv.find("tool");
      auto text = kv.find("text");
      if (tool == kv.end() || text == kv.end()) throw ValidationError("query needs tool and text");
      call.tool = tool->second;
      call.query_text = text->second;
      if (auto ctx = kv.find("context"); ctx != kv.end()) call.context = ctx->second;
    }
    if (trim(call.query_text).empty()) throw ValidationError("empty query text");
    const auto started = clock_.now();
    const auto r = proxy_.handle(call, clock_);
    KeyValues out{{"ok", r.ok() ? "true" : "false"},
                  {"source", to_string(r.source)},
                  {"value", r.value},
                  {"latency_ms", format_double((clock_.now() - started).count())}};
    if (r.outcome.s_lsm) out.emplace_back("s_lsm", format_double(*r.outcome.s_lsm));
    if (r.outcome.similarity) out.emplace_back("similarity", format_double(*r.outcome.similarity));
    if (r.fetch) {
      out.emplace_back("cost_usd", format_double(r.fetch->cost_usd));
      out.emplace_back("retries", std::to_string(r.fetch->retries));
      out.emplace_back("throttled", r.fetch->throttled ? "true" : "false");
    }
    if (r.error) out.emplace_back("error", *r.error);
    return encode_kv(out);
  }

  std::string stats() const {
    const auto c = proxy_.counters();
    const auto l = proxy_.ledger();
    KeyValues out{{"requests", std::to_string(c.requests)},
                  {"hits", std::to_string(c.hits)},
                  {"misses", std::to_string(c.misses)},
                  {"errors", std::to_string(c.errors)},
                  {"api_calls", std::to_string(l.attempts)},
                  {"billed_calls", std::to_string(l.call_count)},
                  {"retries", std::to_string(l.retry_count)},
                  {"api_cost_usd", format_double(l.api_cost_usd)}};
    if (auto* e = proxy_.engine()) {
      const auto s = e->stats();
      out.emplace_back("usage_tokens", std::to_string(s.usage_tokens));
      out.emplace_back("capacity_tokens", std::to_string(s.capacity_tokens));
      out.emplace_back("elements", std::to_string(s.element_count));
      out.emplace_back("evictions", std::to_string(s.evictions));
      out.emplace_back("tau_lsm", format_double(s.tau_lsm));
    }
    return encode_kv(out);
  }

  // Optional body: sample=<n>, validation=<file of query\tcached_query\tcached_result\tlabel>.
  std::string recalibrate(std::string_view body) {
    const auto kv = decode_kv(body);
    std::size_t sample = recal_sample_;
    if (auto it = kv.find("sample"); it != kv.end()) sample = parse_int<std::size_t>(it->second);
    if (auto it = kv.find("validation"); it != kv.end()) proxy_.add_validation(read_validation(it->second));
    const GroundTruthFetch fetch = [this](const std::string& q) -> std::optional<std::string> {
      for (const auto& tool : proxy_.options().tools) {
        try {
          auto rec = proxy_.client(tool).fetch(SemanticKey::make(q, tool), Priority::user, clock_);
          if (!rec.not_found) return rec.result;
        } catch (const NotFoundError&) {
        }
      }
      return std::nullopt;
    };
    const GroundTruthEval same = [](const std::string& served, const std::string& truth) {
      return canonicalize(served) == canonicalize(truth);
    };
    const auto r = proxy_.recalibrate(sample, fetch, same);
    return encode_kv({{"tau_lsm", format_double(r.tau_lsm)},
                      {"flagged", r.flagged ? "true" : "false"},
                      {"precision", format_double(r.precision)},
                      {"annotated", std::to_string(r.annotated)},
                      {"dropped", std::to_string(r.dropped)},
                      {"validation_size", std::to_string(r.validation_size)}});
  }

  std::string snapshot(std::string_view body) {
    const auto kv = decode_kv(body);
    auto path = snapshot_path_;
    if (auto it = kv.find("path"); it != kv.end()) path = it->second;
    if (!proxy_.engine()) throw ConfigError("no cache to snapshot");
    proxy_.engine()->save_snapshot(path);
    return encode_kv({{"path", path}, {"elements", std::to_string(proxy_.engine()->size())}});
  }

  static std::vector<AnnotatedSample> read_validation(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::vector<AnnotatedSample> out;
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      std::vector<std::string> f;
      std::size_t pos = 0;
      for (;;) {
        const auto tab = line.find('\t', pos);
        f.push_back(unescape_field(std::string_view(line).substr(pos, tab == std::string::npos ? tab : tab - pos)));
        if (tab == std::string::npos) break;
        pos = tab + 1;
      }
      if (f.size() != 4) throw ValidationError("validation line: expected 4 fields");
      out.push_back({f[0], f[1], f[2], 0.0, f[3] == "1" || f[3] == "true"});
    }
    return out;
  }

 private:
  Proxy& proxy_;
  Clock& clock_;
  std::string snapshot_path_;
  std::size_t recal_sample_;
};

class Service {
 public:
  explicit Service(ServiceConfig cfg)
      : cfg_(std::move(cfg)),
        proxy_(build_proxy(cfg_)),
        handlers_(*proxy_, clock_, cfg_.snapshot_path, cfg_.recalibration_sample) {
    const auto workers = std::max<std::size_t>(1, cfg_.workers);
    server_.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
    const auto wrap = [](auto fn) {
      return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
          res.set_content(fn(req), "text/plain");
        } catch (const ValidationError& e) {
          res.status = 400;
          res.set_content(encode_kv({{"error", e.what()}}), "text/plain");
        } catch (const std::exception& e) {
          res.status = 500;
          res.set_content(encode_kv({{"error", e.what()}}), "text/plain");
        }
      };
    };
    server_.Post("/query", wrap([this](const httplib::Request& r) { return handlers_.query(r.body); }));
    server_.Get("/stats", wrap([this](const httplib::Request&) { return handlers_.stats(); }));
    server_.Post("/admin/recalibrate", wrap([this](const httplib::Request& r) { return handlers_.recalibrate(r.body); }));
    server_.Post("/admin/snapshot", wrap([this](const httplib::Request& r) { return handlers_.snapshot(r.body); }));
  }

  ~Service() { stop(); }

  // Binds the socket; returns the port. Throws on failure.
  int bind() {
    if (cfg_.port == 0) {
      port_ = server_.bind_to_any_port(cfg_.host);
    } else {
      port_ = server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
    }
    if (port_ < 0) throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    return port_;
  }

  // Serves until stop(). Call bind() first.
  void run() { server_.listen_after_bind(); }

  void start_background() {
    bind();
    thread_ = std::thread([this] { run(); });
    server_.wait_until_ready();
  }

  // Stops accepting, lets in-flight requests finish, waits for prefetches.
  void stop() {
    if (stopped_.exchange(true)) return;
    server_.stop();
    if (thread_.joinable()) thread_.join();
    proxy_->drain();
  }

  int port() const { return port_; }
  Proxy& proxy() { return *proxy_; }
  ServiceHandlers& handlers() { return handlers_; }

 private:
  ServiceConfig cfg_;
  ScaledSystemClock clock_{1.0};
  std::unique_ptr<Proxy> proxy_;
  ServiceHandlers handlers_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<bool> stopped_{false};
};

}  // namespace semcache
