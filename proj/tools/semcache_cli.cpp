// semcache: workload generation, replay, reporting and the proxy service.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "semcache/semcache.hpp"
#include "semcache/service.hpp"

using namespace semcache;

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(part);
  return out;
}

void write_out(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic cache for agent tool calls"};
  app.require_subcommand(1);

  // gen-zipf
  ZipfOptions zo;
  std::string zipf_out = "zipf.trace";
  auto* gz = app.add_subcommand("gen-zipf", "skewed paraphrase workload");
  gz->add_option("--clusters", zo.clusters)->check(CLI::PositiveNumber);
  gz->add_option("--paraphrases", zo.paraphrases_per_cluster)->check(CLI::PositiveNumber);
  gz->add_option("--events", zo.n_events);
  gz->add_option("--zipf-s", zo.zipf_s)->check(CLI::PositiveNumber);
  gz->add_option("--distractors", zo.distractors, "near-miss clusters");
  gz->add_option("--rate", zo.rate_per_s, "arrivals per second, 0 = all at once");
  gz->add_option("--seed", zo.seed);
  gz->add_option("--tool", zo.tool);
  gz->add_option("-o,--out", zipf_out, "trace path; the answer table goes to <path>.gt");

  // gen-trend
  TrendOptions to;
  std::vector<std::string> topics;
  double duration_s = 600;
  std::string trend_out = "trend.trace";
  auto* gt = app.add_subcommand("gen-trend", "bursty trending-topic workload");
  gt->add_option("--topic", topics, "peak_s:events:width_s[:lag_s:share], repeatable");
  gt->add_option("--duration-s", duration_s)->check(CLI::PositiveNumber);
  gt->add_option("--seed", to.seed);
  gt->add_option("--paraphrases", to.paraphrases_per_topic);
  gt->add_option("-o,--out", trend_out);

  // gen-repo
  RepoOptions ro;
  std::vector<std::string> files;
  std::string repo_out = "repo.trace";
  auto* gr = app.add_subcommand("gen-repo", "code-repository file reads");
  gr->add_option("--tasks", ro.n_tasks);
  gr->add_option("--file", files, "path:freq, repeatable");
  gr->add_option("--task-gap-ms", ro.task_gap_ms);
  gr->add_option("--seed", ro.seed);
  gr->add_option("-o,--out", repo_out);

  // gen-mixed
  MixedOptions mo;
  std::string mixed_out = "mixed.trace";
  auto* gm = app.add_subcommand("gen-mixed", "expensive stable lookups mixed with cheap volatile ones");
  gm->add_option("--static-clusters", mo.static_clusters);
  gm->add_option("--ephemeral-clusters", mo.ephemeral_clusters);
  gm->add_option("--events", mo.n_events);
  gm->add_option("--zipf-s", mo.zipf_s);
  gm->add_option("--seed", mo.seed);
  gm->add_option("-o,--out", mixed_out);

  // replay
  ReplayConfig rc;
  std::string trace_path;
  std::string system = "full";
  std::string eviction = "lcfu";
  std::string basis = "footprint";
  std::string clock_mode = "virtual";
  std::string report_out;
  bool table = false;
  double latency_ms = 400, jitter_ms = 0, cost = 0.005, backoff_ms = 1000;
  std::size_t rate_limit = 100;
  int max_retries = 6;
  auto* rp = app.add_subcommand("replay", "replay a trace against one or all systems");
  rp->add_option("--trace", trace_path)->required();
  rp->add_option("--system", system, "vanilla|exact|ann_only|full|all");
  rp->add_option("--eviction", eviction, "lcfu|lru|lfu");
  rp->add_option("--cache-ratio", rc.cache_ratio, "<= 0 uses --capacity");
  rp->add_option("--capacity", rc.cache.capacity_tokens);
  rp->add_option("--basis", basis, "footprint|unique");
  rp->add_option("--tau-sim", rc.cache.tau_sim);
  rp->add_option("--tau-lsm", rc.cache.tau_lsm);
  rp->add_option("--ttl-s", rc.cache.ttl_seconds);
  rp->add_option("--workers", rc.workers);
  rp->add_option("--agent-ms", rc.stages.agent_ms);
  rp->add_option("--retrieval-ms", rc.stages.cache_retrieval_ms);
  rp->add_option("--judge-ms", rc.stages.judge_ms);
  rp->add_flag("--measured-stages", rc.stages.measured);
  rp->add_option("--latency-ms", latency_ms);
  rp->add_option("--jitter-ms", jitter_ms);
  rp->add_option("--rate-limit", rate_limit);
  rp->add_option("--cost", cost);
  rp->add_option("--max-retries", max_retries);
  rp->add_option("--backoff-ms", backoff_ms);
  rp->add_flag("--prefetch", rc.prefetch);
  rp->add_option("--theta", rc.prefetch_options.theta);
  rp->add_flag("--prefill", rc.prefill);
  rp->add_option("--clock", clock_mode, "virtual|real");
  rp->add_option("--scale", rc.real_time_scale, "real seconds per simulated second");
  rp->add_option("--seed", rc.service_seed);
  rp->add_option("--report", report_out, "write key-value report(s) here");
  rp->add_flag("--table", table, "print a table instead of key-value blocks");

  // report
  std::vector<std::string> report_in;
  auto* rep = app.add_subcommand("report", "tabulate saved key-value reports");
  rep->add_option("reports", report_in)->required();

  // coloc
  coloc::LoadOptions lo;
  coloc::SchedulerConfig sc;
  std::string tasks_in, tasks_out;
  bool dedicated = false;
  auto* co = app.add_subcommand("coloc", "co-location scheduler simulation");
  co->add_option("--tasks", tasks_in, "task file (kind arrival service memory)");
  co->add_option("--write-tasks", tasks_out, "save the generated load");
  co->add_option("--seed", lo.seed);
  co->add_option("--agent-tasks", lo.agent_tasks);
  co->add_option("--agent-rate", lo.agent_rate);
  co->add_option("--judge-per-agent", lo.judge_per_agent);
  co->add_option("--agent-share", sc.agent_compute_share);
  co->add_option("--batch", sc.judge_batch);
  co->add_flag("--dedicated", dedicated, "also run the agent-only baseline");

  // serve
  std::string config_path;
  auto* sv = app.add_subcommand("serve", "run the proxy service");
  sv->add_option("--config", config_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gz) {
      save_trace(gen_zipf(zo), zipf_out);
    } else if (*gt) {
      to.duration_ms = duration_s * 1000;
      if (topics.empty()) {
        to.topics = default_trend_topics();
      } else {
        for (const auto& arg : topics) {
          const auto f = split_on(arg, ':');
          if (f.size() != 3 && f.size() != 5) throw ConfigError("bad --topic '" + arg + "'");
          TrendTopic tp;
          tp.peak_ms = parse_double(f[0]) * 1000;
          tp.intensity = parse_int<std::size_t>(f[1]);
          tp.width_ms = parse_double(f[2]) * 1000;
          if (f.size() == 5) {
            tp.follower_lag_ms = parse_double(f[3]) * 1000;
            tp.follower_share = parse_double(f[4]);
          }
          to.topics.push_back(tp);
        }
      }
      save_trace(gen_trend(to), trend_out);
    } else if (*gr) {
      if (!files.empty()) {
        ro.files.clear();
        for (const auto& arg : files) {
          const auto colon = arg.rfind(':');
          if (colon == std::string::npos) throw ConfigError("bad --file '" + arg + "'");
          ro.files.push_back({arg.substr(0, colon), parse_double(arg.substr(colon + 1))});
        }
      }
      save_trace(gen_repo(ro), repo_out);
    } else if (*gm) {
      save_trace(gen_mixed(mo), mixed_out);
    } else if (*rp) {
      const auto trace = load_trace(trace_path);
      rc.eviction = parse_policy(eviction);
      rc.basis = basis == "unique" ? CapacityBasis::unique_results : CapacityBasis::request_footprint;
      rc.clock = clock_mode == "real" ? ClockMode::real_time : ClockMode::virtual_time;
      std::set<std::string> tools;
      for (const auto& e : trace.events) tools.insert(e.tool);
      for (const auto& tool : tools) {
        ToolEndpointConfig ec;
        ec.name = tool;
        ec.base_latency_ms = latency_ms;
        ec.latency_jitter_ms = jitter_ms;
        ec.cost_per_call_usd = cost;
        ec.rate_limit_per_min = rate_limit;
        ec.max_retries = max_retries;
        ec.backoff_base_ms = backoff_ms;
        rc.endpoints[tool] = ec;
      }
      std::vector<SystemKind> systems;
      if (system == "all") {
        systems = {SystemKind::vanilla, SystemKind::exact, SystemKind::ann_only, SystemKind::full};
      } else {
        systems = {parse_system(system)};
      }
      std::vector<MetricsReport> reports;
      std::string kv;
      for (auto s : systems) {
        rc.system = s;
        reports.push_back(replay(trace, rc));
        kv += to_kv(reports.back()) + "\n";
      }
      if (!report_out.empty()) write_out(report_out, kv);
      std::cout << (table ? to_table(reports) : kv);
    } else if (*rep) {
      std::vector<MetricsReport> reports;
      for (const auto& path : report_in) {
        // A file may hold several blocks separated by blank lines.
        const auto text = read_all(path);
        std::size_t pos = 0;
        while (pos < text.size()) {
          auto end = text.find("\n\n", pos);
          if (end == std::string::npos) end = text.size();
          const auto block = std::string_view(text).substr(pos, end - pos);
          if (!trim(block).empty()) reports.push_back(report_from_kv(block));
          pos = end + 2;
        }
      }
      std::cout << to_table(reports);
    } else if (*co) {
      std::vector<coloc::SimTask> tasks;
      if (!tasks_in.empty()) {
        std::ifstream in(tasks_in);
        if (!in) throw Error("cannot open " + tasks_in);
        tasks = coloc::read_tasks(in);
      } else {
        tasks = coloc::mixed_load(lo);
      }
      if (!tasks_out.empty()) {
        std::ofstream out(tasks_out);
        coloc::write_tasks(out, tasks);
      }
      sc.judge_compute_share = 1.0 - sc.agent_compute_share;
      const auto r = coloc::run_sim(tasks, sc);
      std::cout << coloc::to_kv(r);
      if (dedicated) {
        const auto d = coloc::run_dedicated(tasks, sc);
        std::cout << "dedicated_agent_p99_wait=" << format_double(d.agent.p99_wait) << '\n';
        std::cout << "dedicated_agent_mean_wait=" << format_double(d.agent.mean_wait) << '\n';
      }
    } else if (*sv) {
      Service service(load_service_config(config_path));
      const int port = service.bind();
      std::cerr << "listening on port " << port << '\n';
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      service.run();
      service.stop();
      g_service = nullptr;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
