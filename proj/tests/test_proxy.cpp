#include <gtest/gtest.h>

#include <algorithm>

#include "semcache/proxy.hpp"

using namespace semcache;

namespace {

// Ground truth keyed by the sorted content words, so paraphrases that only
// reorder words or swap function words share an answer.
std::string bag_key(const SemanticKey& k) {
  auto w = content_words(k.text);
  std::sort(w.begin(), w.end());
  std::string out;
  for (const auto& x : w) out += x + " ";
  return out;
}

struct Rig {
  std::shared_ptr<CacheEngine> engine;
  std::shared_ptr<RemoteToolClient> client;
  std::unique_ptr<Proxy> proxy;
  ManualClock clock;
};

std::unique_ptr<Rig> rig(bool with_cache, std::shared_ptr<RemoteBackend> backend = nullptr) {
  GroundTruthTable t;
  for (const auto* q : {"capital france", "tallest mountain earth", "painted mona lisa"}) {
    t.put(bag_key(SemanticKey::make(q, "search")), std::string("answer for ") + q);
  }
  if (!backend) {
    backend = std::make_shared<SimulatedService>(
        t, [](const SemanticKey& k) { return std::optional<std::string>(bag_key(k)); }, 400);
  }
  auto r = std::make_unique<Rig>();
  if (with_cache) {
    r->engine = std::make_shared<CacheEngine>(CacheConfig{}, std::make_shared<ReferenceEmbedder>(256, 1),
                                              std::make_shared<ReferenceJudge>());
  }
  r->client = std::make_shared<RemoteToolClient>(ToolEndpointConfig{}, backend);
  r->proxy = std::make_unique<Proxy>(r->engine, std::map<std::string, std::shared_ptr<RemoteToolClient>>{
                                                    {"search", r->client}});
  return r;
}

ToolCall call(const std::string& q) { return ToolCall{"search", q, 0, 0, {}}; }

}  // namespace

TEST(Parse, ThinkThenSearch) {
  const std::string text = "<think>need the capital</think><search>capital of France</search>";
  const auto r = parse_tool_calls(text, {"search"});
  ASSERT_EQ(r.calls.size(), 1u);
  EXPECT_EQ(r.calls[0].tool, "search");
  EXPECT_EQ(r.calls[0].query_text, "capital of France");
  EXPECT_EQ(text.substr(r.calls[0].span_begin, r.calls[0].span_end - r.calls[0].span_begin),
            "<search>capital of France</search>");
  EXPECT_TRUE(r.diagnostics.empty());
}

TEST(Parse, NoTagsMeansNoCalls) {
  const auto r = parse_tool_calls("just an answer, 3 < 4 and 5 > 2", {"search"});
  EXPECT_TRUE(r.calls.empty());
  EXPECT_TRUE(r.diagnostics.empty());
}

TEST(Parse, MultipleToolsInOrderWithContext) {
  const std::string text = "first <news>storm update</news> then <search> tides </search>";
  const auto r = parse_tool_calls(text, {"search", "news"}, 6);
  ASSERT_EQ(r.calls.size(), 2u);
  EXPECT_EQ(r.calls[0].tool, "news");
  EXPECT_EQ(r.calls[1].query_text, "tides");
  EXPECT_EQ(r.calls[0].context, "first ");
  EXPECT_EQ(r.calls[1].context, " then ");
}

TEST(Parse, UnclosedAndEmptyAreReported) {
  const auto unclosed = parse_tool_calls("<search>dangling query", {"search"});
  EXPECT_TRUE(unclosed.calls.empty());
  ASSERT_EQ(unclosed.diagnostics.size(), 1u);
  EXPECT_NE(unclosed.diagnostics[0].find("unclosed"), std::string::npos);
  const auto empty = parse_tool_calls("<search>  </search><search>ok</search>", {"search"});
  ASSERT_EQ(empty.calls.size(), 1u);
  EXPECT_EQ(empty.calls[0].query_text, "ok");
  ASSERT_EQ(empty.diagnostics.size(), 1u);
  EXPECT_NE(empty.diagnostics[0].find("empty"), std::string::npos);
}

TEST(Proxy, ColdMissGoesRemoteAndIsCached) {
  auto r = rig(true);
  const auto res = r->proxy->handle(call("capital of France"), r->clock);
  ASSERT_TRUE(res.ok());
  EXPECT_EQ(res.source, ServeSource::remote);
  EXPECT_EQ(res.value, "answer for capital france");
  EXPECT_EQ(r->engine->size(), 1u);
  EXPECT_DOUBLE_EQ(to_ms(r->clock.now()), 400.0);
  EXPECT_EQ(r->proxy->ledger().call_count, 1u);
}

TEST(Proxy, RepeatIsServedFromCache) {
  auto r = rig(true);
  r->proxy->handle(call("capital of France"), r->clock);
  const auto res = r->proxy->handle(call("capital of France"), r->clock);
  EXPECT_EQ(res.source, ServeSource::cache);
  EXPECT_EQ(res.value, "answer for capital france");
  ASSERT_TRUE(res.outcome.element.has_value());
  EXPECT_EQ(res.outcome.element->frequency, 1u);
  EXPECT_EQ(r->proxy->ledger().call_count, 1u);
  const auto c = r->proxy->counters();
  EXPECT_EQ(c.hits, 1u);
  EXPECT_EQ(c.misses, 1u);
}

TEST(Proxy, ParaphraseIsServedFromCache) {
  auto r = rig(true);
  r->proxy->handle(call("What is the capital of France?"), r->clock);
  const auto res = r->proxy->handle(call("france: the capital is what"), r->clock);
  EXPECT_EQ(res.source, ServeSource::cache);
  EXPECT_EQ(res.value, "answer for capital france");
  ASSERT_EQ(r->proxy->recent_log().size(), 1u);
  EXPECT_EQ(r->proxy->recent_log()[0].query, "france: the capital is what");
}

namespace {
struct Down : RemoteBackend {
  BackendReply call(const SemanticKey&) override { throw RetriableError("503"); }
};
}  // namespace

TEST(Proxy, RemoteFailureLeavesCacheUnchanged) {
  auto r = rig(true, std::make_shared<Down>());
  const auto res = r->proxy->handle(call("capital of France"), r->clock);
  EXPECT_FALSE(res.ok());
  EXPECT_EQ(r->engine->size(), 0u);
  EXPECT_EQ(r->proxy->counters().errors, 1u);
}

TEST(Proxy, NotFoundIsReturnedButNotCached) {
  auto r = rig(true);
  const auto res = r->proxy->handle(call("unknown thing entirely"), r->clock);
  ASSERT_TRUE(res.ok());
  EXPECT_EQ(res.value, kNotFoundMarker);
  EXPECT_EQ(r->engine->size(), 0u);
}

TEST(Proxy, UnknownToolIsAnError) {
  auto r = rig(true);
  const auto res = r->proxy->handle(ToolCall{"weather", "rain", 0, 0, {}}, r->clock);
  EXPECT_FALSE(res.ok());
}

// The agent sees the same answers with or without the cache.
TEST(Proxy, CacheIsTransparentToTheAgent) {
  auto plain = rig(false);
  auto cached = rig(true);
  const std::vector<std::string> qs{
      "capital of France",     "tallest mountain on earth", "the capital of France",
      "who painted mona lisa", "earth tallest mountain",    "mona lisa painted by who",
      "capital of France",     "unknown query here",        "tallest mountain on earth"};
  for (const auto& q : qs) {
    const auto a = plain->proxy->handle(call(q), plain->clock);
    const auto b = cached->proxy->handle(call(q), cached->clock);
    EXPECT_EQ(a.value, b.value) << q;
  }
  EXPECT_LT(cached->proxy->ledger().call_count, plain->proxy->ledger().call_count);
}

TEST(Proxy, RecalibrationInstallsThreshold) {
  auto r = rig(true);
  r->proxy->handle(call("capital of France"), r->clock);
  for (const auto* q : {"the capital of France", "France capital", "capital France please"}) {
    r->proxy->handle(call(q), r->clock);
  }
  ASSERT_GE(r->proxy->recent_log().size(), 1u);
  const GroundTruthFetch gt = [](const std::string&) -> std::optional<std::string> {
    return std::string("answer for capital france");
  };
  const GroundTruthEval eq = [](const std::string& a, const std::string& b) { return a == b; };
  const auto out = r->proxy->recalibrate(10, gt, eq);
  EXPECT_EQ(r->engine->tau_lsm(), out.tau_lsm);
  EXPECT_GT(r->proxy->validation_size(), 0u);
}

TEST(Proxy, PrefetchNeedsEngine) {
  EXPECT_THROW(Proxy(nullptr, {}, std::make_shared<Prefetcher>()), ConfigError);
}
