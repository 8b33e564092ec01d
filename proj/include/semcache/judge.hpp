#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "semcache/element.hpp"

namespace semcache {

// Fine-grained validator. score() says how well a cached result answers a
// new query; staticity() rates how time-invariant a query/result pair is.
// Implementations must be deterministic and thread-safe. Remote backends
// report failures as RetriableError.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual double score(std::string_view query, std::string_view cached_query,
                       std::string_view cached_result) const = 0;
  virtual int staticity(std::string_view query, std::string_view result) const = 0;
};

struct JudgeVerdict {
  double s_lsm = 0;
  bool hit = false;
};

inline JudgeVerdict validate(const Judge& judge, std::string_view query,
                             const SemanticElement& candidate, double tau_lsm) {
  const double s = judge.score(query, candidate.key.text, candidate.value);
  if (!(s >= 0.0 && s <= 1.0)) throw RetriableError("judge returned a score outside [0,1]");
  return JudgeVerdict{s, s >= tau_lsm};
}

// Deterministic stand-in for a small judge model.
//
//   identical word sequences          -> 1.0
//   otherwise  overlap * (0.5 + 0.5 * containment)
//
// overlap is the Jaccard index of the two queries' content-word sets and
// containment is the fraction of the new query's content words that occur
// in the cached result. Disjoint queries score 0; a full content-word match
// whose result mentions every content word scores 1.
inline double reference_score(std::string_view query, std::string_view cached_query,
                              std::string_view cached_result) {
  const auto q_tokens = word_tokens(query);
  if (!q_tokens.empty() && q_tokens == word_tokens(cached_query)) return 1.0;

  const auto q_words = content_words(query);
  const auto c_words = content_words(cached_query);
  const std::set<std::string> q(q_words.begin(), q_words.end());
  const std::set<std::string> c(c_words.begin(), c_words.end());
  if (q.empty() || c.empty()) return 0.0;

  std::size_t shared = 0;
  for (const auto& w : q) shared += c.count(w);
  const std::size_t united = q.size() + c.size() - shared;
  const double overlap = static_cast<double>(shared) / static_cast<double>(united);

  const auto r_tokens = word_tokens(cached_result);
  const std::set<std::string> r(r_tokens.begin(), r_tokens.end());
  std::size_t contained = 0;
  for (const auto& w : q) contained += r.count(w);
  const double containment = static_cast<double>(contained) / static_cast<double>(q.size());

  return overlap * (0.5 + 0.5 * containment);
}

namespace detail {

struct StaticityLexicon {
  std::vector<std::string_view> volatile_words;
  std::vector<std::string_view> stable_words;
  std::vector<std::string_view> stable_phrases;  // two-word cues
};

inline const StaticityLexicon& staticity_lexicon() {
  static const StaticityLexicon lex{
      {"today", "tonight", "tomorrow", "yesterday", "now", "current", "currently", "latest",
       "live", "breaking", "news", "weather", "forecast", "price", "prices", "stock", "stocks",
       "score", "scores", "trending", "recent", "update", "updates", "traffic", "rate"},
      {"located", "location", "born", "founded", "invented", "inventor", "painted", "wrote",
       "written", "author", "discovered", "built", "capital", "history", "historical",
       "definition", "meaning", "origin", "ancient", "formula", "theorem"},
      {"where is", "who was", "who painted", "who wrote", "what is", "when was"},
  };
  return lex;
}

}  // namespace detail

inline constexpr int kStaticityStep = 3;

// Lexicon scorer. Starts at the neutral 5, subtracts 3 per distinct volatile
// cue and adds 3 per distinct stable cue found in the query or result, then
// clamps to [1, 10]. No cue at all yields 5.
inline int staticity_score(std::string_view query, std::string_view result) {
  const auto& lex = detail::staticity_lexicon();
  std::set<std::string> words;
  std::set<std::string> bigrams;
  for (const auto text : {query, result}) {
    const auto tokens = word_tokens(text);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      words.insert(tokens[i]);
      if (i + 1 < tokens.size()) bigrams.insert(tokens[i] + " " + tokens[i + 1]);
    }
  }
  int score = kDefaultStaticity;
  for (auto w : lex.volatile_words) {
    if (words.count(std::string(w))) score -= kStaticityStep;
  }
  for (auto w : lex.stable_words) {
    if (words.count(std::string(w))) score += kStaticityStep;
  }
  for (auto p : lex.stable_phrases) {
    if (bigrams.count(std::string(p))) score += kStaticityStep;
  }
  return std::clamp(score, kMinStaticity, kMaxStaticity);
}

class ReferenceJudge final : public Judge {
 public:
  double score(std::string_view query, std::string_view cached_query,
               std::string_view cached_result) const override {
    return reference_score(query, cached_query, cached_result);
  }
  int staticity(std::string_view query, std::string_view result) const override {
    return staticity_score(query, result);
  }
};

}  // namespace semcache
