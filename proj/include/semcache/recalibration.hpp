#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "semcache/embedder.hpp"
#include "semcache/judge.hpp"

namespace semcache {

// One served cache hit: the new query, the cached element's query, and the
// result the cache returned for it.
struct RecentLogEntry {
  std::string query;
  std::string cached_query;
  std::string served_result;
  double s_lsm = 0;
};

// A judged pair with a ground-truth label (true = the cached result was a
// correct answer). Labels come from the ground-truth evaluator, never from
// the judge.
struct AnnotatedSample {
  std::string query;
  std::string cached_query;
  std::string cached_result;
  double s_lsm = 0;
  bool label = false;
};

struct ScoredLabel {
  double score = 0;
  bool correct = false;
};

struct PrecisionPoint {
  double threshold = 0;
  double precision = 0;
  std::size_t accepted = 0;
};

// Precision of "score >= t" at every distinct observed score t, ascending in
// t. Precision is a step function between observed scores, so these points
// cover every threshold.
inline std::vector<PrecisionPoint> precision_curve(std::span<const ScoredLabel> samples) {
  std::vector<ScoredLabel> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });
  std::vector<PrecisionPoint> curve;
  std::size_t accepted = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    ++accepted;
    correct += sorted[i].correct ? 1 : 0;
    const bool last_of_score = i + 1 == sorted.size() || sorted[i + 1].score != sorted[i].score;
    if (last_of_score) {
      curve.push_back({sorted[i].score,
                       static_cast<double>(correct) / static_cast<double>(accepted), accepted});
    }
  }
  std::reverse(curve.begin(), curve.end());
  return curve;
}

struct ThresholdChoice {
  double tau = 0;
  bool flagged = false;  // no threshold reaches the target
  double precision = 0;
};

// Smallest observed score whose precision meets the target. When none does,
// returns a threshold strictly above every observed score, which disables
// hits until the judge improves, and flags it.
inline ThresholdChoice find_threshold(std::span<const ScoredLabel> samples, double p_target) {
  if (samples.empty()) throw ValidationError("find_threshold: no samples");
  const auto curve = precision_curve(samples);
  for (const auto& point : curve) {
    if (point.precision >= p_target) return {point.threshold, false, point.precision};
  }
  const double max_score = curve.back().threshold;
  return {std::nextafter(max_score, std::numeric_limits<double>::infinity()), true, 0.0};
}

// Greedy farthest-point selection over the log's query embeddings
// (distance = 1 - cosine). Starts from the first entry; each step takes the
// entry farthest from everything chosen, earliest on ties. Repeated query
// texts (after canonicalization) collapse. Returns indices into the log.
inline std::vector<std::size_t> sample_diverse(const Embedder& embedder,
                                               std::span<const RecentLogEntry> log, std::size_t n) {
  if (n == 0) throw ValidationError("sample_diverse: n must be >= 1");
  std::vector<std::size_t> pool;
  std::vector<EmbeddingVector> vecs;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (!seen.insert(canonicalize(log[i].query)).second) continue;
    pool.push_back(i);
    vecs.push_back(embedder.embed(log[i].query));
  }
  std::vector<std::size_t> chosen;
  if (pool.empty()) return chosen;

  std::vector<double> min_dist(pool.size(), std::numeric_limits<double>::infinity());
  std::vector<char> taken(pool.size(), 0);
  std::size_t next = 0;
  while (chosen.size() < n) {
    taken[next] = 1;
    chosen.push_back(pool[next]);
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (!taken[j]) min_dist[j] = std::min(min_dist[j], 1.0 - cosine(vecs[next], vecs[j]));
    }
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (taken[j]) continue;
      if (!best || min_dist[j] > min_dist[*best]) best = j;
    }
    if (!best) break;
    next = *best;
  }
  return chosen;
}

inline constexpr std::size_t kSamplesPerMinute = 5;

inline std::size_t sample_budget(double elapsed_minutes, std::size_t per_minute = kSamplesPerMinute) {
  if (!(elapsed_minutes > 0)) return 0;
  return static_cast<std::size_t>(std::floor(elapsed_minutes * static_cast<double>(per_minute)));
}

using GroundTruthFetch = std::function<std::optional<std::string>(const std::string& query)>;
using GroundTruthEval = std::function<bool(const std::string& served, const std::string& ground)>;

struct RecalibrationOutcome {
  double tau_lsm = 0;
  bool flagged = false;
  double precision = 0;
  std::size_t annotated = 0;
  std::size_t dropped = 0;
  std::size_t validation_size = 0;
};

// Samples the recent log, labels the samples against ground truth, folds
// them into the validation set, re-scores the whole set with the current
// judge and picks the smallest threshold meeting p_target.
inline RecalibrationOutcome recalibrate(const Judge& judge, const Embedder& embedder,
                                        std::span<const RecentLogEntry> recent_log,
                                        std::vector<AnnotatedSample>& validation, double p_target,
                                        std::size_t sample_size, const GroundTruthFetch& fetch_gt,
                                        const GroundTruthEval& evaluate) {
  if (!(p_target > 0) || p_target > 1) throw ValidationError("recalibrate: p_target outside (0,1]");
  RecalibrationOutcome out;

  if (sample_size > 0 && !recent_log.empty()) {
    const auto picked = sample_diverse(embedder, recent_log, sample_size);
    for (std::size_t idx : picked) {
      const auto& entry = recent_log[idx];
      std::optional<std::string> ground;
      try {
        ground = fetch_gt(entry.query);
      } catch (const Error&) {
        ground.reset();
      }
      if (!ground) {
        ++out.dropped;
        continue;
      }
      validation.push_back({entry.query, entry.cached_query, entry.served_result, entry.s_lsm,
                            evaluate(entry.served_result, *ground)});
      ++out.annotated;
    }
    if (out.annotated == 0) throw Error("recalibrate: every ground-truth fetch failed");
  }
  if (validation.empty()) throw ValidationError("recalibrate: validation set is empty");

  std::vector<ScoredLabel> scored;
  scored.reserve(validation.size());
  for (auto& sample : validation) {
    sample.s_lsm = judge.score(sample.query, sample.cached_query, sample.cached_result);
    scored.push_back({sample.s_lsm, sample.label});
  }
  const auto choice = find_threshold(scored, p_target);
  out.tau_lsm = choice.tau;
  out.flagged = choice.flagged;
  out.precision = choice.precision;
  out.validation_size = validation.size();
  return out;
}

}  // namespace semcache
