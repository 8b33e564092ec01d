#include <gtest/gtest.h>

#include "semcache/replay.hpp"

using namespace semcache;

namespace {

Trace small_zipf(std::size_t n = 200, std::size_t distractors = 0) {
  ZipfOptions o;
  o.n_events = n;
  o.distractors = distractors;
  return gen_zipf(o);
}

ReplayConfig cfg(SystemKind k) {
  ReplayConfig c;
  c.system = k;
  c.dimension = 64;
  return c;
}

// Fixed room: 40% of a 3-token footprint admits nothing.
ReplayConfig roomy(SystemKind k) {
  auto c = cfg(k);
  c.cache_ratio = 0;
  c.cache.capacity_tokens = 1000;
  return c;
}

Trace same_text(std::size_t n) {
  Trace t;
  t.truth.put("k", "the one answer");
  for (std::size_t i = 0; i < n; ++i) t.events.push_back({0, "search", "exactly this question", 0, "k"});
  return t;
}

}  // namespace

TEST(Replay, VanillaNeverHits) {
  const auto t = small_zipf();
  const auto r = replay(t, cfg(SystemKind::vanilla));
  EXPECT_EQ(r.hit_rate, 0.0);
  EXPECT_EQ(r.hits, 0u);
  EXPECT_GE(r.api_calls, t.events.size());
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.stages.cache_retrieval_ms, 0.0);
  EXPECT_EQ(r.stages.judge_ms, 0.0);
  EXPECT_EQ(r.eviction, "none");
}

TEST(Replay, ExactOnIdenticalText) {
  const auto t = same_text(50);
  auto c = roomy(SystemKind::exact);
  c.workers = 1;
  const auto r = replay(t, c);
  EXPECT_DOUBLE_EQ(r.hit_rate, 49.0 / 50.0);
  EXPECT_EQ(r.billed_calls, 1u);
}

TEST(Replay, MetricFormulas) {
  const auto t = small_zipf(300);
  const auto r = replay(t, cfg(SystemKind::full));
  EXPECT_DOUBLE_EQ(r.hit_rate, static_cast<double>(r.hits) / static_cast<double>(r.hits + r.misses));
  EXPECT_DOUBLE_EQ(r.retry_ratio, r.api_calls == 0 ? 0.0 : static_cast<double>(r.retries) / static_cast<double>(r.api_calls));
  EXPECT_EQ(r.api_cost_usd, static_cast<double>(r.billed_calls) * 0.005);
  EXPECT_NEAR(r.throughput_rps, r.completed / (r.makespan_ms / 1000.0), 1e-9);
  EXPECT_EQ(r.served_from_cache.size(), t.events.size());
  std::size_t hits = 0;
  for (char c : r.served_from_cache) hits += c;
  EXPECT_EQ(hits, r.hits);
}

TEST(Replay, ExpectedLatency) {
  EXPECT_NEAR(expected_latency(0.5, 0.65, 1.13), 0.89, 1e-12);
  EXPECT_EQ(expected_latency(1.0, 0.65, 1.13), 0.65);
  EXPECT_THROW(expected_latency(1.5, 1, 1), ValidationError);
}

TEST(Replay, Percentile) {
  EXPECT_EQ(percentile({}, 0.5), 0.0);
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 0.5), 3.0);
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  EXPECT_EQ(percentile(v, 0.99), 99.0);
  EXPECT_EQ(percentile(v, 1.0), 100.0);
}

TEST(Replay, AllHitsHaveNoRemoteTime) {
  const auto t = small_zipf(200);
  auto c = cfg(SystemKind::full);
  c.prefill = true;
  c.cache_ratio = 0;
  c.cache.capacity_tokens = 1000000;
  const auto r = replay(t, c);
  EXPECT_EQ(r.hit_rate, 1.0);
  EXPECT_EQ(r.stages.remote_ms, 0.0);
  EXPECT_EQ(r.api_calls, 0u);
  EXPECT_NEAR(r.latency_mean_ms, 600 + 20 + 30, 1e-9);
}

TEST(Replay, JudgeRejectsDistractorsThatAnnOnlyServes) {
  const auto t = small_zipf(400, 3);
  const auto full = replay(t, cfg(SystemKind::full));
  const auto ann = replay(t, cfg(SystemKind::ann_only));
  const auto vanilla = replay(t, cfg(SystemKind::vanilla));
  EXPECT_EQ(vanilla.accuracy, 1.0);
  EXPECT_GE(full.accuracy, ann.accuracy);
  EXPECT_LT(ann.accuracy, 1.0);
}

TEST(Replay, SemanticBeatsExact) {
  const auto t = small_zipf(400);
  const auto full = replay(t, cfg(SystemKind::full));
  const auto exact = replay(t, cfg(SystemKind::exact));
  EXPECT_GE(full.hit_rate, exact.hit_rate);
}

TEST(Replay, Deterministic) {
  const auto t = small_zipf(300);
  const auto a = replay(t, cfg(SystemKind::full));
  const auto b = replay(t, cfg(SystemKind::full));
  EXPECT_EQ(to_kv(a), to_kv(b));
  EXPECT_EQ(a.served_from_cache, b.served_from_cache);
}

TEST(Replay, ReportKvRoundTrip) {
  const auto r = replay(small_zipf(100), cfg(SystemKind::full));
  const auto back = report_from_kv(to_kv(r));
  EXPECT_EQ(to_kv(back), to_kv(r));
  EXPECT_THROW(report_from_kv("system=full\n"), ValidationError);
  const auto table = to_table({r, back});
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
}

TEST(Replay, CapacityBasis) {
  const auto t = small_zipf(300);
  auto c = cfg(SystemKind::full);
  c.cache_ratio = 0.5;
  const auto fp = replay_capacity(t, c);
  EXPECT_EQ(fp, static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(footprint_tokens(t)))));
  c.basis = CapacityBasis::unique_results;
  EXPECT_EQ(replay_capacity(t, c), static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(unique_result_tokens(t)))));
  c.cache_ratio = 0;
  c.cache.capacity_tokens = 1234;
  EXPECT_EQ(replay_capacity(t, c), 1234u);
}

TEST(Replay, CapacityNeverExceeded) {
  const auto t = small_zipf(400);
  auto c = cfg(SystemKind::full);
  c.cache_ratio = 0.1;
  auto stack = build_stack(t, c);
  detail::replay_virtual(t, c, stack);
  EXPECT_LE(stack.engine->usage_tokens(), stack.capacity_tokens);
  std::string why;
  EXPECT_TRUE(stack.engine->check_invariants(&why)) << why;
}

TEST(Replay, ParseNames) {
  EXPECT_EQ(parse_system("ann"), SystemKind::ann_only);
  EXPECT_EQ(parse_policy("lfu"), EvictionPolicy::lfu);
  EXPECT_THROW(parse_system("nope"), ConfigError);
  EXPECT_THROW(parse_policy("fifo"), ConfigError);
}

TEST(Replay, RealClockSmallRun) {
  const auto t = same_text(6);
  auto c = roomy(SystemKind::full);
  c.clock = ClockMode::real_time;
  c.workers = 1;
  c.real_time_scale = 0.0005;
  const auto r = replay(t, c);
  EXPECT_EQ(r.completed, 6u);
  EXPECT_EQ(r.hits, 5u);
  EXPECT_EQ(r.accuracy, 1.0);
}
