#include <gtest/gtest.h>

#include <sstream>

#include "semcache/prefetcher.hpp"

using namespace semcache;

namespace {

std::shared_ptr<CacheEngine> engine(std::size_t capacity = 1000) {
  CacheConfig c;
  c.capacity_tokens = capacity;
  return std::make_shared<CacheEngine>(c, std::make_shared<ReferenceEmbedder>(256, 1),
                                       std::make_shared<ReferenceJudge>());
}

SemanticKey key(const std::string& text) { return SemanticKey::make(text, "search"); }

}  // namespace

TEST(Markov, SingleTransition) {
  MarkovModel m;
  m.observe("A", "B");
  EXPECT_DOUBLE_EQ(m.probability("A", "B"), 1.0);
}

TEST(Markov, SplitTransition) {
  MarkovModel m;
  m.observe("A", "B");
  m.observe("A", "C");
  EXPECT_DOUBLE_EQ(m.probability("A", "B"), 0.5);
}

TEST(Markov, PairwiseStream) {
  MarkovModel m;
  const std::vector<std::string> stream{"A", "B", "A", "B", "A"};
  for (std::size_t i = 1; i < stream.size(); ++i) m.observe(stream[i - 1], stream[i]);
  EXPECT_DOUBLE_EQ(m.probability("A", "B"), 1.0);
  EXPECT_DOUBLE_EQ(m.probability("B", "A"), 1.0);
  EXPECT_EQ(m.total("A"), 2u);
}

TEST(Markov, PredictOrdering) {
  MarkovModel m;
  EXPECT_TRUE(m.predict("nobody").empty());
  m.observe("A", "C");
  m.observe("A", "B");
  m.observe("A", "C");
  const auto p = m.predict("A");
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].key, "C");
  EXPECT_NEAR(p[0].probability, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(p[1].key, "B");
  EXPECT_NEAR(p[1].probability, 1.0 / 3.0, 1e-12);
  m.observe("X", "Y");
  ASSERT_EQ(m.predict("X").size(), 1u);
  EXPECT_DOUBLE_EQ(m.predict("X")[0].probability, 1.0);
}

TEST(Markov, ProbabilitiesSumToOne) {
  MarkovModel m;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 500; ++i) m.observe("s" + std::to_string(rng() % 5), "t" + std::to_string(rng() % 7));
  for (int s = 0; s < 5; ++s) {
    double sum = 0;
    for (const auto& p : m.predict("s" + std::to_string(s))) sum += p.probability;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Markov, DumpLoadRoundTrip) {
  MarkovModel m;
  m.observe("search: a\tb", "search: c");
  m.observe("search: a\tb", "search: c");
  m.observe("x", "y\nz");
  std::stringstream buf;
  m.dump(buf);
  const auto back = MarkovModel::load(buf);
  EXPECT_DOUBLE_EQ(back.probability("search: a\tb", "search: c"), 1.0);
  EXPECT_EQ(back.total("search: a\tb"), 2u);
  EXPECT_DOUBLE_EQ(back.probability("x", "y\nz"), 1.0);
  std::stringstream bad("only\ttwo\n");
  EXPECT_THROW(MarkovModel::load(bad), ValidationError);
}

TEST(Prefetcher, KeysAreCanonicalAndToolScoped) {
  EXPECT_EQ(Prefetcher::markov_key(SemanticKey::make("  Hello   World ", "search")), "search: hello world");
  EXPECT_NE(Prefetcher::markov_key(SemanticKey::make("x", "search")),
            Prefetcher::markov_key(SemanticKey::make("x", "news")));
}

namespace {

// A then B twice gives P(B|A) = 1.
void train(Prefetcher& p) {
  for (int i = 0; i < 2; ++i) {
    p.record_hit(key("alpha lakes"));
    p.record_hit(key("beta rivers"));
  }
}

}  // namespace

TEST(Prefetcher, BelowThetaStartsNothing) {
  Prefetcher p(PrefetchOptions{0.5, 4});
  p.record_hit(key("alpha lakes"));
  p.record_hit(key("beta rivers"));
  p.record_hit(key("alpha lakes"));
  p.record_hit(key("gamma seas"));
  p.record_hit(key("alpha lakes"));
  p.record_hit(key("delta ponds"));
  p.record_hit(key("alpha lakes"));
  // P(beta|alpha) = P(gamma|alpha) = P(delta|alpha) = 1/3
  auto eng = engine();
  int launched = 0;
  p.maybe_prefetch(key("alpha lakes"), *eng, at_ms(0), [&](const PrefetchTask&) { ++launched; });
  EXPECT_EQ(launched, 0);
}

TEST(Prefetcher, CachedTargetSkipped) {
  Prefetcher p;
  train(p);
  auto eng = engine();
  eng->admit(eng->build_element(key("beta rivers"), "beta answer", 1, 0, at_ms(0)), at_ms(0));
  int launched = 0;
  p.maybe_prefetch(key("alpha lakes"), *eng, at_ms(1), [&](const PrefetchTask&) { ++launched; });
  EXPECT_EQ(launched, 0);
  EXPECT_EQ(p.stats().skipped_cached, 1u);
}

TEST(Prefetcher, UncachedTargetFetchedAndAdmittedAtZeroFrequency) {
  Prefetcher p;
  train(p);
  auto eng = engine();
  std::vector<PrefetchTask> tasks;
  p.maybe_prefetch(key("alpha lakes"), *eng, at_ms(0), [&](const PrefetchTask& t) { tasks.push_back(t); });
  ASSERT_EQ(tasks.size(), 1u);
  EXPECT_EQ(tasks[0].key.text, "beta rivers");
  EXPECT_EQ(p.in_flight(), 1u);
  // no duplicate while in flight
  p.maybe_prefetch(key("alpha lakes"), *eng, at_ms(0), [&](const PrefetchTask& t) { tasks.push_back(t); });
  EXPECT_EQ(tasks.size(), 1u);
  const auto r = p.complete(tasks[0], "beta answer words", 400, 0.005, *eng, at_ms(400));
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(eng->get(r->id)->frequency, 0u);
  EXPECT_EQ(p.in_flight(), 0u);
  EXPECT_EQ(p.stats().admitted, 1u);
}

TEST(Prefetcher, FailureReleasesSlot) {
  Prefetcher p;
  train(p);
  auto eng = engine();
  std::vector<PrefetchTask> tasks;
  p.maybe_prefetch(key("alpha lakes"), *eng, at_ms(0), [&](const PrefetchTask& t) { tasks.push_back(t); });
  ASSERT_EQ(tasks.size(), 1u);
  p.fail(tasks[0]);
  EXPECT_EQ(p.in_flight(), 0u);
  EXPECT_EQ(p.stats().failed, 1u);
  EXPECT_EQ(eng->size(), 0u);
}

TEST(Prefetcher, InFlightCap) {
  Prefetcher p(PrefetchOptions{0.0, 2});
  for (const auto* next : {"beta", "gamma", "delta", "epsilon"}) {
    p.record_hit(key("alpha lakes"));
    p.record_hit(key(std::string(next) + " rivers"));
  }
  auto eng = engine();
  int launched = 0;
  p.maybe_prefetch(key("alpha lakes"), *eng, at_ms(0), [&](const PrefetchTask&) { ++launched; });
  EXPECT_EQ(launched, 2);
  EXPECT_EQ(p.stats().skipped_busy, 1u);
}

TEST(Prefetcher, UnusedPrefetchEvictedBeforeUsedElements) {
  auto eng = engine(52);
  // used elements: frequency >= 1 after one confirmed hit each
  for (const auto* t : {"alpha lakes", "beta rivers"}) {
    eng->admit(eng->build_element(key(t), "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11 w12 w13 w14 w15 w16 w17 w18 w19 w20",
                                  400, 0.005, at_ms(0)),
               at_ms(0));
    ASSERT_TRUE(eng->lookup(key(t), at_ms(1)).hit());
  }
  Prefetcher p;
  const auto r = p.complete(PrefetchTask{key("gamma seas"), 0.9}, "p1 p2 p3 p4 p5 p6 p7 p8 p9 p10", 400, 0.005,
                            *eng, at_ms(2));
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(eng->cal_score(*eng->get(r->id), at_ms(3)), 0.0);
  const auto evicted = eng->admit(eng->build_element(key("delta ponds"), "q1 q2 q3 q4 q5", 400, 0.005, at_ms(3)), at_ms(3)).evicted;
  ASSERT_FALSE(evicted.empty());
  EXPECT_EQ(evicted.front(), r->id);
}

TEST(Prefetcher, ValidatesOptions) {
  EXPECT_THROW(Prefetcher(PrefetchOptions{1.5, 4}), ConfigError);
  EXPECT_THROW(Prefetcher(PrefetchOptions{0.5, 0}), ConfigError);
}
