#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "semcache/common.hpp"

namespace semcache::coloc {

enum class TaskKind { agent, judge };

inline const char* to_string(TaskKind k) { return k == TaskKind::agent ? "agent" : "judge"; }

struct SimTask {
  TaskKind kind = TaskKind::agent;
  double arrival = 0;
  double service_demand = 1;  // time units at full compute
  double memory_demand = 1;
};

// Compute is split statically; memory is a static slice per class plus a
// shared dynamic pool. A task draws from its class's slice first.
struct SchedulerConfig {
  double agent_compute_share = 0.8;
  double judge_compute_share = 0.2;
  double static_memory_agent = 60;
  double static_memory_judge = 10;
  double dynamic_pool = 30;
  std::size_t judge_batch = 8;

  void validate() const {
    if (!(agent_compute_share > 0 && agent_compute_share < 1) || !(judge_compute_share > 0)) {
      throw ConfigError("compute shares must lie in (0,1)");
    }
    if (std::abs(agent_compute_share + judge_compute_share - 1.0) > 1e-9) {
      throw ConfigError("compute shares must sum to 1");
    }
    if (static_memory_agent < 0 || static_memory_judge < 0 || dynamic_pool < 0) {
      throw ConfigError("memory pools must be non-negative");
    }
    if (judge_batch == 0) throw ConfigError("judge batch must be >= 1");
  }
};

struct DispatchRecord {
  double time = 0;
  TaskKind kind = TaskKind::agent;
  std::size_t task = 0;
  // Scheduler state just before the dispatch.
  bool agent_queue_nonempty = false;
  double agent_head_memory = 0;
  double agent_static_free = 0;
  double dynamic_free = 0;
};

struct ClassStats {
  std::size_t arrived = 0;
  std::size_t completed = 0;
  double mean_wait = 0;
  double p99_wait = 0;
  double max_wait = 0;
  double throughput = 0;  // completions per time unit over the horizon
};

struct SimResult {
  ClassStats agent;
  ClassStats judge;
  std::vector<DispatchRecord> dispatches;
  std::vector<double> waits;  // per task, NaN if never dispatched
  double end_time = 0;
};

// A judge dispatch is safe when the agent queue was empty or its head did
// not fit in the free dynamic pool. (The scheduler itself is stricter: it
// also counts the agents' free static slice.)
inline bool priority_safe(const DispatchRecord& d) {
  if (d.kind != TaskKind::judge) return true;
  return !d.agent_queue_nonempty || d.agent_head_memory > d.dynamic_free;
}

inline double nearest_rank(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

// Event-driven run up to `horizon`. Agent tasks are served first-come
// first-served and exhaustively; a judge batch is considered only when the
// agent queue is empty or its head cannot get memory. Running tasks never
// contend for compute inside their partition: each takes demand / share.
inline SimResult run_sim(const std::vector<SimTask>& tasks, const SchedulerConfig& cfg,
                         double horizon = std::numeric_limits<double>::infinity()) {
  cfg.validate();
  const double total_memory = cfg.static_memory_agent + cfg.static_memory_judge + cfg.dynamic_pool;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    if (!(t.service_demand > 0) || !(t.memory_demand > 0)) {
      throw ValidationError("task " + std::to_string(i) + ": demands must be positive");
    }
    const double reachable = (t.kind == TaskKind::agent ? cfg.static_memory_agent : cfg.static_memory_judge) +
                             cfg.dynamic_pool;
    if (t.memory_demand > reachable || t.memory_demand > total_memory) {
      throw ConfigError("task " + std::to_string(i) + " needs more memory than its class can ever get");
    }
    if (i > 0 && t.arrival < tasks[i - 1].arrival) throw ValidationError("tasks must be sorted by arrival");
  }

  struct Completion {
    double t;
    std::size_t task;
    double from_static;
    double from_dynamic;
    bool operator>(const Completion& o) const { return t != o.t ? t > o.t : task > o.task; }
  };
  std::priority_queue<Completion, std::vector<Completion>, std::greater<>> running;
  std::deque<std::size_t> qa, qj;
  double free_static_agent = cfg.static_memory_agent;
  double free_static_judge = cfg.static_memory_judge;
  double free_dynamic = cfg.dynamic_pool;

  SimResult res;
  res.waits.assign(tasks.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<char> done(tasks.size(), 0);

  // Splits a demand over static then dynamic memory; false if it does not fit.
  const auto take = [&](TaskKind k, double need, double& from_static, double& from_dynamic) {
    double& slice = k == TaskKind::agent ? free_static_agent : free_static_judge;
    from_static = std::min(slice, need);
    from_dynamic = need - from_static;
    if (from_dynamic > free_dynamic + 1e-12) return false;
    slice -= from_static;
    free_dynamic -= from_dynamic;
    return true;
  };
  const auto fits = [&](TaskKind k, double need) {
    const double slice = k == TaskKind::agent ? free_static_agent : free_static_judge;
    return need <= slice + free_dynamic + 1e-12;
  };

  double now = 0;
  const auto record = [&](TaskKind kind, std::size_t task) {
    DispatchRecord d;
    d.time = now;
    d.kind = kind;
    d.task = task;
    d.agent_queue_nonempty = !qa.empty();
    d.agent_head_memory = qa.empty() ? 0 : tasks[qa.front()].memory_demand;
    d.agent_static_free = free_static_agent;
    d.dynamic_free = free_dynamic;
    res.dispatches.push_back(d);
  };
  const auto start = [&](std::size_t i, double share) {
    double fs = 0, fd = 0;
    take(tasks[i].kind, tasks[i].memory_demand, fs, fd);
    res.waits[i] = now - tasks[i].arrival;
    running.push({now + tasks[i].service_demand / share, i, fs, fd});
  };

  const auto dispatch = [&] {
    for (;;) {
      if (!qa.empty() && fits(TaskKind::agent, tasks[qa.front()].memory_demand)) {
        const auto i = qa.front();
        record(TaskKind::agent, i);
        qa.pop_front();
        start(i, cfg.agent_compute_share);
        continue;
      }
      if (qj.empty()) return;
      // Largest prefix of the judge queue, up to one batch, that fits.
      std::size_t n = 0;
      double need = 0;
      while (n < std::min(cfg.judge_batch, qj.size())) {
        const double next = need + tasks[qj[n]].memory_demand;
        if (!fits(TaskKind::judge, next)) break;
        need = next;
        ++n;
      }
      if (n == 0) return;
      for (std::size_t b = 0; b < n; ++b) {
        const auto i = qj.front();
        record(TaskKind::judge, i);
        qj.pop_front();
        start(i, cfg.judge_compute_share);
      }
    }
  };

  std::size_t next_arrival = 0;
  while (next_arrival < tasks.size() || !running.empty()) {
    const double t_arr = next_arrival < tasks.size() ? tasks[next_arrival].arrival
                                                     : std::numeric_limits<double>::infinity();
    const double t_done = running.empty() ? std::numeric_limits<double>::infinity() : running.top().t;
    now = std::min(t_arr, t_done);
    if (now > horizon) break;
    while (!running.empty() && running.top().t <= now) {
      const auto c = running.top();
      running.pop();
      (tasks[c.task].kind == TaskKind::agent ? free_static_agent : free_static_judge) += c.from_static;
      free_dynamic += c.from_dynamic;
      done[c.task] = 1;
      res.end_time = std::max(res.end_time, c.t);
    }
    while (next_arrival < tasks.size() && tasks[next_arrival].arrival <= now) {
      (tasks[next_arrival].kind == TaskKind::agent ? qa : qj).push_back(next_arrival);
      ++next_arrival;
    }
    dispatch();
  }

  const double span = std::isfinite(horizon) ? horizon : res.end_time;
  const auto fill = [&](TaskKind k, ClassStats& s) {
    std::vector<double> w;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].kind != k || tasks[i].arrival > horizon) continue;
      ++s.arrived;
      if (done[i]) ++s.completed;
      if (!std::isnan(res.waits[i])) w.push_back(res.waits[i]);
    }
    double sum = 0;
    for (double v : w) sum += v;
    s.mean_wait = w.empty() ? 0 : sum / static_cast<double>(w.size());
    s.p99_wait = nearest_rank(w, 0.99);
    s.max_wait = w.empty() ? 0 : *std::max_element(w.begin(), w.end());
    s.throughput = span > 0 ? static_cast<double>(s.completed) / span : 0;
  };
  fill(TaskKind::agent, res.agent);
  fill(TaskKind::judge, res.judge);
  return res;
}

// The agent stream alone on the same partition: what agents see without a
// co-located judge.
inline SimResult run_dedicated(const std::vector<SimTask>& tasks, const SchedulerConfig& cfg,
                               double horizon = std::numeric_limits<double>::infinity()) {
  std::vector<SimTask> agents;
  for (const auto& t : tasks) {
    if (t.kind == TaskKind::agent) agents.push_back(t);
  }
  return run_sim(agents, cfg, horizon);
}

struct LoadOptions {
  std::size_t agent_tasks = 2000;
  double agent_rate = 0.9;  // arrivals per time unit
  double agent_service_mean = 8.0;
  double agent_memory_min = 4;
  double agent_memory_max = 12;
  double judge_per_agent = 4.0;  // expected judge tasks per agent task
  double judge_service = 0.4;
  double judge_memory = 1;
  std::uint64_t seed = 7;
};

// Poisson agent arrivals with exponential demand and uniform memory; each
// agent arrival spawns Poisson(judge_per_agent) judge tasks shortly after.
inline std::vector<SimTask> mixed_load(const LoadOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::exponential_distribution<double> gap(o.agent_rate);
  std::exponential_distribution<double> demand(1.0 / o.agent_service_mean);
  std::uniform_real_distribution<double> mem(o.agent_memory_min, o.agent_memory_max);
  std::poisson_distribution<int> judges(o.judge_per_agent);
  std::uniform_real_distribution<double> delay(0.0, 1.0);
  std::vector<SimTask> out;
  double t = 0;
  for (std::size_t i = 0; i < o.agent_tasks; ++i) {
    t += gap(rng);
    out.push_back({TaskKind::agent, t, std::max(1e-3, demand(rng)), mem(rng)});
    const int n = judges(rng);
    for (int j = 0; j < n; ++j) out.push_back({TaskKind::judge, t + delay(rng), o.judge_service, o.judge_memory});
  }
  std::stable_sort(out.begin(), out.end(), [](const SimTask& a, const SimTask& b) { return a.arrival < b.arrival; });
  return out;
}

// One task per line: kind arrival service memory.
inline void write_tasks(std::ostream& out, const std::vector<SimTask>& tasks) {
  for (const auto& t : tasks) {
    out << to_string(t.kind) << ' ' << format_double(t.arrival) << ' ' << format_double(t.service_demand) << ' '
        << format_double(t.memory_demand) << '\n';
  }
}

inline std::vector<SimTask> read_tasks(std::istream& in) {
  std::vector<SimTask> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto f = split_whitespace(line);
    if (f.size() != 4) throw ValidationError("task line " + std::to_string(lineno) + ": expected 4 fields");
    SimTask t;
    if (f[0] == "agent") {
      t.kind = TaskKind::agent;
    } else if (f[0] == "judge") {
      t.kind = TaskKind::judge;
    } else {
      throw ValidationError("task line " + std::to_string(lineno) + ": unknown kind '" + f[0] + "'");
    }
    t.arrival = parse_double(f[1]);
    t.service_demand = parse_double(f[2]);
    t.memory_demand = parse_double(f[3]);
    out.push_back(t);
  }
  return out;
}

inline std::string to_kv(const SimResult& r) {
  return encode_kv({
      {"agent_arrived", std::to_string(r.agent.arrived)},
      {"agent_completed", std::to_string(r.agent.completed)},
      {"agent_mean_wait", format_double(r.agent.mean_wait)},
      {"agent_p99_wait", format_double(r.agent.p99_wait)},
      {"agent_throughput", format_double(r.agent.throughput)},
      {"judge_arrived", std::to_string(r.judge.arrived)},
      {"judge_completed", std::to_string(r.judge.completed)},
      {"judge_mean_wait", format_double(r.judge.mean_wait)},
      {"judge_p99_wait", format_double(r.judge.p99_wait)},
      {"judge_throughput", format_double(r.judge.throughput)},
      {"dispatches", std::to_string(r.dispatches.size())},
      {"end_time", format_double(r.end_time)},
  });
}

}  // namespace semcache::coloc
