#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "semcache/remote_client.hpp"

namespace semcache {

struct TraceEvent {
  double arrival_ms = 0;
  std::string tool;
  std::string query_text;
  int cluster_id = 0;
  std::string ground_truth_key;
};

struct Trace {
  std::vector<TraceEvent> events;
  GroundTruthTable truth;

  // Every event's answer must be in the table.
  void check() const {
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (!truth.contains(events[i].ground_truth_key)) {
        throw ValidationError("trace event " + std::to_string(i) + ": ground truth key '" +
                              events[i].ground_truth_key + "' missing from table");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Trace files: arrival_ms, tool, cluster_id, ground_truth_key, query_text,
// tab separated, fields escaped. The table lives next to it as <path>.gt.
// ---------------------------------------------------------------------------

inline void write_events(std::ostream& out, const std::vector<TraceEvent>& events) {
  for (const auto& e : events) {
    out << format_double(e.arrival_ms) << '\t' << escape_field(e.tool) << '\t' << e.cluster_id << '\t'
        << escape_field(e.ground_truth_key) << '\t' << escape_field(e.query_text) << '\n';
  }
}

inline std::vector<TraceEvent> read_events(std::istream& in) {
  std::vector<TraceEvent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || line.front() == '#') continue;
    std::vector<std::string_view> f;
    std::size_t pos = 0;
    for (;;) {
      const auto tab = line.find('\t', pos);
      f.push_back(std::string_view(line).substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (f.size() != 5) {
      throw ValidationError("trace line " + std::to_string(lineno) + ": expected 5 fields, got " +
                            std::to_string(f.size()));
    }
    TraceEvent e;
    e.arrival_ms = parse_double(f[0]);
    e.tool = unescape_field(f[1]);
    e.cluster_id = parse_int<int>(f[2]);
    e.ground_truth_key = unescape_field(f[3]);
    e.query_text = unescape_field(f[4]);
    if (e.tool.empty() || trim(e.query_text).empty()) {
      throw ValidationError("trace line " + std::to_string(lineno) + ": empty tool or query");
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline void save_trace(const Trace& t, const std::string& path) {
  std::ofstream ev(path);
  if (!ev) throw Error("cannot write " + path);
  write_events(ev, t.events);
  std::ofstream gt(path + ".gt");
  if (!gt) throw Error("cannot write " + path + ".gt");
  t.truth.write(gt);
}

inline Trace load_trace(const std::string& path) {
  std::ifstream ev(path);
  if (!ev) throw Error("cannot open " + path);
  Trace t;
  t.events = read_events(ev);
  t.truth = GroundTruthTable::read_file(path + ".gt");
  t.check();
  return t;
}

// ---------------------------------------------------------------------------
// Vocabulary and paraphrases
// ---------------------------------------------------------------------------

// Made-up but pronounceable words, distinct per call sequence, never a
// function word.
class WordSource {
 public:
  explicit WordSource(std::uint64_t seed) : rng_(seed) {}

  std::string next() {
    static constexpr std::string_view onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p",
                                                  "r", "s", "t", "v", "z", "br", "tr", "st", "gl"};
    static constexpr std::string_view vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
    for (;;) {
      std::string w;
      const int syllables = 2 + static_cast<int>(rng_() % 2);
      for (int i = 0; i < syllables; ++i) {
        w += onsets[rng_() % std::size(onsets)];
        w += vowels[rng_() % std::size(vowels)];
      }
      if (rng_() % 2) w += "n";
      if (!is_function_word(w) && used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> words(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  std::mt19937_64 rng_;
  std::set<std::string> used_;
};

// Question frames made only of function words; {} is where the content goes.
inline const std::vector<std::string_view>& question_frames() {
  static const std::vector<std::string_view> frames = {
      "{}",
      "what is {}?",
      "tell me about {}",
      "please find {}",
      "who was {}?",
      "can you look up {}",
      "i want to know about {}",
      "show me {} please",
      "search for {}",
      "where is the {}?",
      "give me information on {}",
      "what do you know about {}?",
      "could you tell me {}?",
      "need details regarding {}",
      "how about {}?",
      "quick question: {}?",
      "explain {} to me",
      "let me get {}",
      "any info about {}?",
      "so what about {} then?",
  };
  return frames;
}

inline std::string fill_frame(std::string_view frame, std::string_view content) {
  const auto at = frame.find("{}");
  return std::string(frame.substr(0, at)) + std::string(content) + std::string(frame.substr(at + 2));
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// `count` distinct surface forms over the same content words: frames rotate,
// word order is reshuffled for each round of frames.
inline std::vector<std::string> paraphrases(const std::vector<std::string>& content, std::size_t count,
                                            std::mt19937_64& rng) {
  if (content.empty()) throw ValidationError("paraphrases: no content words");
  const auto& frames = question_frames();
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto order = content;
  std::size_t tries = 0;
  while (out.size() < count) {
    const std::size_t i = tries++;
    if (i % frames.size() == 0 && i > 0) std::shuffle(order.begin(), order.end(), rng);
    auto text = fill_frame(frames[i % frames.size()], join_words(order));
    if (seen.insert(text).second) out.push_back(std::move(text));
    if (tries > count * 50 + 1000) throw ValidationError("paraphrases: cannot make enough distinct forms");
  }
  return out;
}

// Result text that mentions every content word of its cluster.
inline std::string answer_text(const std::vector<std::string>& content, std::string_view fact,
                               std::string_view extra = {}) {
  std::string out = "answer: " + join_words(content) + " -> " + std::string(fact);
  if (!extra.empty()) out += " " + std::string(extra);
  return out;
}

// ---------------------------------------------------------------------------
// Zipf workload
// ---------------------------------------------------------------------------

// Counts per rank proportional to rank^-s, summing exactly to n (largest
// remainder).
inline std::vector<std::size_t> zipf_counts(std::size_t ranks, std::size_t n, double s) {
  if (ranks == 0) throw ValidationError("zipf: need at least one rank");
  if (!(s > 0)) throw ValidationError("zipf: exponent must be positive");
  std::vector<double> w(ranks);
  for (std::size_t r = 0; r < ranks; ++r) w[r] = std::pow(static_cast<double>(r + 1), -s);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<std::size_t> counts(ranks);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t r = 0; r < ranks; ++r) {
    const double exact = static_cast<double>(n) * w[r] / total;
    counts[r] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[r];
    rem.emplace_back(exact - std::floor(exact), r);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rem[i % ranks].second];
  return counts;
}

struct ZipfOptions {
  std::size_t clusters = 10;
  std::size_t paraphrases_per_cluster = 20;
  std::size_t n_events = 1000;
  double zipf_s = 0.99;
  std::uint64_t seed = 1;
  // Near-miss clusters: the content words of base cluster d plus one more.
  // Each sits right after its base in popularity order.
  std::size_t distractors = 0;
  std::size_t content_words = 6;
  double rate_per_s = 0;  // 0: every event arrives at time 0 (closed loop)
  std::string tool = "search";
};

inline Trace gen_zipf(const ZipfOptions& o) {
  if (o.clusters == 0) throw ValidationError("gen_zipf: clusters must be >= 1");
  if (o.paraphrases_per_cluster == 0) throw ValidationError("gen_zipf: paraphrases must be >= 1");
  if (o.distractors > o.clusters) throw ValidationError("gen_zipf: more distractors than clusters");
  std::mt19937_64 rng(o.seed);
  WordSource vocab(o.seed ^ 0x9e3779b97f4a7c15ULL);

  struct Cluster {
    int id;
    std::vector<std::string> words;
    std::vector<std::string> forms;
    std::string key;
  };
  std::vector<Cluster> base;
  for (std::size_t c = 0; c < o.clusters; ++c) {
    base.push_back({static_cast<int>(c), vocab.words(o.content_words), {}, "c" + std::to_string(c)});
  }
  std::vector<Cluster> ranked;
  for (std::size_t c = 0; c < o.clusters; ++c) {
    ranked.push_back(base[c]);
    if (c < o.distractors) {
      auto words = base[c].words;
      words.push_back(vocab.next());
      ranked.push_back({static_cast<int>(o.clusters + c), words, {}, "d" + std::to_string(c)});
    }
  }

  Trace t;
  for (auto& cl : ranked) {
    cl.forms = paraphrases(cl.words, o.paraphrases_per_cluster, rng);
    t.truth.put(cl.key, answer_text(cl.words, "fact-" + cl.key));
  }

  const auto counts = zipf_counts(ranked.size(), o.n_events, o.zipf_s);
  std::vector<std::size_t> picks;
  for (std::size_t r = 0; r < ranked.size(); ++r) picks.insert(picks.end(), counts[r], r);
  std::shuffle(picks.begin(), picks.end(), rng);

  std::exponential_distribution<double> gap(o.rate_per_s > 0 ? o.rate_per_s / 1000.0 : 1.0);
  double now = 0;
  for (const auto r : picks) {
    const auto& cl = ranked[r];
    TraceEvent e;
    if (o.rate_per_s > 0) now += gap(rng);
    e.arrival_ms = now;
    e.tool = o.tool;
    e.cluster_id = cl.id;
    e.ground_truth_key = cl.key;
    e.query_text = cl.forms[rng() % cl.forms.size()];
    t.events.push_back(std::move(e));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Trending topics
// ---------------------------------------------------------------------------

struct TrendTopic {
  double peak_ms = 0;
  std::size_t intensity = 0;  // events in the burst
  double width_ms = 0;        // standard deviation of the envelope
  // Optional follower burst on a related topic, `lag_ms` later.
  double follower_lag_ms = 0;
  double follower_share = 0;  // follower events as a fraction of intensity
};

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double standard_normal_quantile(double p) {
  double lo = -40, hi = 40;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (standard_normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline constexpr double kEnvelopeSigmas = 3.0;

// Expected share of a burst that falls in [a, b): a Gaussian around the peak
// cut at +/-3 widths and renormalized.
inline double envelope_mass(double peak, double width, double a, double b) {
  if (width <= 0) return (peak >= a && peak < b) ? 1.0 : 0.0;
  const double lo = standard_normal_cdf(-kEnvelopeSigmas);
  const double hi = standard_normal_cdf(kEnvelopeSigmas);
  const auto cdf = [&](double x) {
    const double z = std::clamp((x - peak) / width, -kEnvelopeSigmas, kEnvelopeSigmas);
    return (standard_normal_cdf(z) - lo) / (hi - lo);
  };
  return cdf(b) - cdf(a);
}

// Times for n events under the envelope: one jittered draw per equal-mass
// stratum, so counts in any interval track the envelope closely.
inline std::vector<double> burst_times(double peak, double width, std::size_t n, std::mt19937_64& rng) {
  std::vector<double> out;
  if (width <= 0) return std::vector<double>(n, peak);
  const double lo = standard_normal_cdf(-kEnvelopeSigmas);
  const double hi = standard_normal_cdf(kEnvelopeSigmas);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double q = (static_cast<double>(i) + u(rng)) / static_cast<double>(n);
    out.push_back(peak + width * standard_normal_quantile(lo + (hi - lo) * q));
  }
  return out;
}

struct TrendOptions {
  std::vector<TrendTopic> topics;
  double duration_ms = 600000;
  std::uint64_t seed = 1;
  std::size_t paraphrases_per_topic = 20;
  std::size_t content_words = 6;
  std::string tool = "search";
};

// Topic i gets cluster id i; followers get ids after all topics. Events
// outside [0, duration) are dropped; the result is sorted by arrival.
inline Trace gen_trend(const TrendOptions& o) {
  if (!(o.duration_ms > 0)) throw ValidationError("gen_trend: duration must be positive");
  std::mt19937_64 rng(o.seed);
  WordSource vocab(o.seed ^ 0x51ed270b27e3ULL);
  Trace t;
  int next_follower = static_cast<int>(o.topics.size());

  const auto emit = [&](int id, const std::vector<std::string>& words, double peak, double width,
                        std::size_t n) {
    const auto key = "topic" + std::to_string(id);
    const auto forms = paraphrases(words, o.paraphrases_per_topic, rng);
    t.truth.put(key, answer_text(words, "trend-" + key, "today"));
    for (double at : burst_times(peak, width, n, rng)) {
      if (at < 0 || at >= o.duration_ms) continue;
      t.events.push_back({at, o.tool, forms[rng() % forms.size()], id, key});
    }
  };

  for (std::size_t i = 0; i < o.topics.size(); ++i) {
    const auto& tp = o.topics[i];
    if (tp.width_ms < 0 || tp.follower_share < 0) throw ValidationError("gen_trend: negative topic parameter");
    const auto words = vocab.words(o.content_words);
    emit(static_cast<int>(i), words, tp.peak_ms, tp.width_ms, tp.intensity);
    if (tp.follower_lag_ms > 0 && tp.follower_share > 0) {
      auto fwords = vocab.words(o.content_words - 2);
      fwords.insert(fwords.end(), words.begin(), words.begin() + 2);
      const auto n = static_cast<std::size_t>(std::llround(tp.follower_share * static_cast<double>(tp.intensity)));
      emit(next_follower++, fwords, tp.peak_ms + tp.follower_lag_ms, tp.width_ms, n);
    }
  }
  std::stable_sort(t.events.begin(), t.events.end(),
                   [](const TraceEvent& a, const TraceEvent& b) { return a.arrival_ms < b.arrival_ms; });
  return t;
}

// Four bursts over ten minutes, the second one trailed by a follower.
inline std::vector<TrendTopic> default_trend_topics() {
  return {
      {90000, 120, 30000, 0, 0},
      {240000, 200, 40000, 60000, 0.4},
      {390000, 150, 25000, 0, 0},
      {510000, 100, 30000, 0, 0},
  };
}

// ---------------------------------------------------------------------------
// Code-repository reads
// ---------------------------------------------------------------------------

struct RepoFile {
  std::string path;
  double relative_freq = 1.0;
};

inline std::vector<RepoFile> default_repo_files() {
  return {{"src/core/engine.py", 1.0},  {"src/core/config.py", 0.28}, {"src/io/loader.py", 0.22},
          {"src/io/writer.py", 0.14},   {"src/util/strings.py", 0.1}, {"tests/test_engine.py", 0.08},
          {"docs/setup.md", 0.04},      {"scripts/release.sh", 0.04}, {"src/cli/main.py", 0.04}};
}

inline const std::vector<std::string_view>& read_frames() {
  static const std::vector<std::string_view> frames = {
      "{}",
      "open {}",
      "read {}",
      "show me the file {}",
      "read the contents of {}",
      "please open the file {}",
      "can you read {} for me",
      "what is in {}?",
      "let me look at {}",
      "i need the contents of {}",
      "get the file {}",
      "open up {} please",
  };
  return frames;
}

struct RepoOptions {
  std::vector<RepoFile> files = default_repo_files();
  std::size_t n_tasks = 1000;
  std::uint64_t seed = 1;
  double task_gap_ms = 0;  // arrival spacing between tasks; 0 = closed loop
  std::string tool = "file_read";
};

// Each task reads file i with probability relative_freq, independently.
inline Trace gen_repo(const RepoOptions& o) {
  for (const auto& f : o.files) {
    if (!(f.relative_freq > 0) || f.relative_freq > 1) {
      throw ValidationError("gen_repo: frequency of " + f.path + " must lie in (0,1]");
    }
    if (trim(f.path).empty()) throw ValidationError("gen_repo: empty path");
  }
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto& frames = read_frames();
  Trace t;
  for (std::size_t i = 0; i < o.files.size(); ++i) {
    t.truth.put(o.files[i].path, "contents of " + o.files[i].path + " : revision " + std::to_string(i + 1) +
                                     " , " + std::to_string(40 + 13 * i) + " lines");
  }
  for (std::size_t task = 0; task < o.n_tasks; ++task) {
    for (std::size_t i = 0; i < o.files.size(); ++i) {
      if (u(rng) >= o.files[i].relative_freq) continue;
      TraceEvent e;
      e.arrival_ms = static_cast<double>(task) * o.task_gap_ms;
      e.tool = o.tool;
      e.cluster_id = static_cast<int>(i);
      e.ground_truth_key = o.files[i].path;
      e.query_text = fill_frame(frames[rng() % frames.size()], o.files[i].path);
      t.events.push_back(std::move(e));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Mixed cost workload: slow, expensive, stable lookups next to cheap,
// short-lived ones.
// ---------------------------------------------------------------------------

struct MixedOptions {
  std::size_t static_clusters = 20;
  std::size_t ephemeral_clusters = 20;
  std::size_t paraphrases_per_cluster = 10;
  std::size_t n_events = 2000;
  double zipf_s = 0.8;
  std::uint64_t seed = 1;
  std::string static_tool = "search";
  std::string ephemeral_tool = "news";
  std::size_t static_answer_words = 12;
  std::size_t ephemeral_answer_words = 12;
};

// Popularity ranks alternate, ephemeral first, so the cheap clusters are
// slightly hotter. Static answers read like reference facts, ephemeral ones
// like news.
inline Trace gen_mixed(const MixedOptions& o) {
  if (o.static_clusters + o.ephemeral_clusters == 0) throw ValidationError("gen_mixed: no clusters");
  std::mt19937_64 rng(o.seed);
  WordSource vocab(o.seed ^ 0x2545f4914f6cdd1dULL);
  struct Cluster {
    int id;
    std::string tool;
    std::vector<std::string> forms;
    std::string key;
  };
  std::vector<Cluster> ranked;
  const auto filler = [&](std::size_t n) {
    std::vector<std::string> w;
    for (std::size_t i = 0; i < n; ++i) w.push_back(vocab.next());
    return join_words(w);
  };
  const auto add = [&](bool stable, int id) {
    auto words = vocab.words(5);
    const auto key = (stable ? "s" : "e") + std::to_string(id);
    auto extra = stable ? "history located origin " + filler(o.static_answer_words)
                        : "latest news today price " + filler(o.ephemeral_answer_words);
    ranked.push_back({id, stable ? o.static_tool : o.ephemeral_tool, paraphrases(words, o.paraphrases_per_cluster, rng), key});
    return std::make_pair(key, answer_text(words, key, extra));
  };
  Trace t;
  int id = 0;
  std::size_t s = 0, e = 0;
  while (s < o.static_clusters || e < o.ephemeral_clusters) {
    if (e < o.ephemeral_clusters) {
      auto [k, v] = add(false, id++);
      t.truth.put(k, v);
      ++e;
    }
    if (s < o.static_clusters) {
      auto [k, v] = add(true, id++);
      t.truth.put(k, v);
      ++s;
    }
  }
  const auto counts = zipf_counts(ranked.size(), o.n_events, o.zipf_s);
  std::vector<std::size_t> picks;
  for (std::size_t r = 0; r < ranked.size(); ++r) picks.insert(picks.end(), counts[r], r);
  std::shuffle(picks.begin(), picks.end(), rng);
  for (const auto r : picks) {
    const auto& cl = ranked[r];
    t.events.push_back({0.0, cl.tool, cl.forms[rng() % cl.forms.size()], cl.id, cl.key});
  }
  return t;
}

// Maps (tool, query text) to the ground-truth key seen in the trace.
inline SimulatedService::Resolver trace_resolver(const Trace& t) {
  auto map = std::make_shared<std::map<std::pair<std::string, std::string>, std::string>>();
  for (const auto& e : t.events) map->emplace(std::make_pair(e.tool, e.query_text), e.ground_truth_key);
  return [map](const SemanticKey& k) -> std::optional<std::string> {
    auto it = map->find({k.tool, k.text});
    if (it == map->end()) return std::nullopt;
    return it->second;
  };
}

// Tokens needed to hold an answer for every distinct request text.
inline std::size_t footprint_tokens(const Trace& t) {
  std::set<std::pair<std::string, std::string>> seen;
  std::size_t total = 0;
  for (const auto& e : t.events) {
    if (!seen.emplace(e.tool, e.query_text).second) continue;
    total += token_count(*t.truth.find(e.ground_truth_key));
  }
  return total;
}

// Tokens needed to hold each distinct answer once.
inline std::size_t unique_result_tokens(const Trace& t) {
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const auto& e : t.events) {
    if (!seen.insert(e.ground_truth_key).second) continue;
    total += token_count(*t.truth.find(e.ground_truth_key));
  }
  return total;
}

}  // namespace semcache
