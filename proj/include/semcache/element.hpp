#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "semcache/common.hpp"

namespace semcache {

// The agent's query or tool action, e.g. the body of a <search> tag.
struct SemanticKey {
  std::string text;
  std::string tool;

  static SemanticKey make(std::string_view text, std::string_view tool) {
    if (trim(text).empty()) throw ValidationError("semantic key text is empty");
    if (trim(tool).empty()) throw ValidationError("semantic key tool is empty");
    return SemanticKey{std::string(text), std::string(tool)};
  }

  friend bool operator==(const SemanticKey&, const SemanticKey&) = default;
};

// Fixed-dimension vector. Vectors handed to the index are L2-normalized.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<float> components) : components_(std::move(components)) {}

  // Scales to unit length. A zero vector cannot be normalized.
  static EmbeddingVector normalized(std::span<const double> raw) {
    double sq = 0;
    for (double v : raw) sq += v * v;
    if (!(sq > 0)) throw ValidationError("cannot normalize a zero vector");
    const double inv = 1.0 / std::sqrt(sq);
    std::vector<float> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i] * inv);
    return EmbeddingVector(std::move(out));
  }

  std::size_t dimension() const { return components_.size(); }
  std::span<const float> components() const { return components_; }

  double norm() const {
    double sq = 0;
    for (float v : components_) sq += static_cast<double>(v) * v;
    return std::sqrt(sq);
  }

  bool is_normalized(double tolerance = 1e-6) const {
    return !components_.empty() && std::abs(norm() - 1.0) <= tolerance;
  }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<float> components_;
};

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

// Cosine similarity clamped to [-1, 1].
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dimension() != b.dimension()) throw ValidationError("cosine: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0) || !(nb > 0)) return 0.0;
  return std::clamp(dot(a.components(), b.components()) / (na * nb), -1.0, 1.0);
}

// Size unit of a cached value: whitespace-separated tokens.
inline std::size_t token_count(std::string_view value) {
  const auto n = split_whitespace(value).size();
  if (n == 0) throw ValidationError("token_count: empty value");
  return n;
}

inline constexpr int kMinStaticity = 1;
inline constexpr int kMaxStaticity = 10;
inline constexpr int kDefaultStaticity = 5;

// The caching unit: a key, its retrieved value, and the metadata that drives
// matching and eviction.
struct SemanticElement {
  SemanticKey key;
  std::string value;
  EmbeddingVector embedding;
  int staticity = kDefaultStaticity;
  std::uint64_t frequency = 0;  // judge-confirmed hits
  double retrieval_latency_ms = 0;
  double retrieval_cost_usd = 0;
  std::size_t size_tokens = 1;
  Timestamp created_at{};
  Timestamp expiration_time{};
  double value_score = 0;

  bool expired(Timestamp now) const { return expiration_time <= now; }

  friend bool operator==(const SemanticElement&, const SemanticElement&) = default;
};

struct CacheConfig {
  std::size_t capacity_tokens = 100000;
  double tau_sim = 0.9;
  double tau_lsm = 0.9;
  double ttl_seconds = 3600;
  std::size_t candidate_k = 5;
  double prefetch_theta = 0.5;
  double p_target = 0.99;

  void validate() const {
    if (capacity_tokens == 0) throw ConfigError("capacity_tokens must be positive");
    if (tau_sim < 0 || tau_sim > 1) throw ConfigError("tau_sim must lie in [0,1]");
    if (tau_lsm < 0 || tau_lsm > 1) throw ConfigError("tau_lsm must lie in [0,1]");
    if (!(ttl_seconds > 0)) throw ConfigError("ttl_seconds must be positive");
    if (candidate_k == 0) throw ConfigError("candidate_k must be positive");
    if (prefetch_theta < 0 || prefetch_theta > 1) throw ConfigError("prefetch_theta must lie in [0,1]");
    if (!(p_target > 0) || p_target > 1) throw ConfigError("p_target must lie in (0,1]");
  }
};

inline SemanticElement make_element(SemanticKey key, std::string value, EmbeddingVector embedding,
                                    int staticity, double latency_ms, double cost_usd,
                                    Timestamp now, double ttl_seconds) {
  if (trim(key.text).empty() || trim(key.tool).empty()) {
    throw ValidationError("make_element: empty key");
  }
  if (trim(value).empty()) throw ValidationError("make_element: empty value");
  if (!embedding.is_normalized()) throw ValidationError("make_element: embedding not normalized");
  if (staticity < kMinStaticity || staticity > kMaxStaticity) {
    throw ValidationError("make_element: staticity outside [1,10]");
  }
  if (!(latency_ms >= 0)) throw ValidationError("make_element: negative latency");
  if (!(cost_usd >= 0)) throw ValidationError("make_element: negative cost");
  if (!(ttl_seconds > 0)) throw ValidationError("make_element: ttl must be positive");

  SemanticElement se;
  se.size_tokens = token_count(value);
  se.key = std::move(key);
  se.value = std::move(value);
  se.embedding = std::move(embedding);
  se.staticity = staticity;
  se.frequency = 0;
  se.retrieval_latency_ms = latency_ms;
  se.retrieval_cost_usd = cost_usd;
  se.created_at = now;
  se.expiration_time = now + Millis{ttl_seconds * 1000.0};
  se.value_score = 0;
  return se;
}

// ---------------------------------------------------------------------------
// Flat text record. One field per line, in this order:
//
//   tool, text, value, staticity, frequency, latency_ms, cost_usd,
//   size_tokens, created_at_ms, expiration_ms, value_score, embedding
//
// Each line is "name=value" with values escaped (see escape_field). The
// embedding line holds the dimension followed by the components, separated
// by single spaces. Numbers use the shortest round-trip representation.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kRecordFields[] = {
    "tool",         "text",          "value",       "staticity",
    "frequency",    "latency_ms",    "cost_usd",    "size_tokens",
    "created_at_ms", "expiration_ms", "value_score", "embedding"};

inline std::string serialize(const SemanticElement& se) {
  std::string emb = std::to_string(se.embedding.dimension());
  for (float c : se.embedding.components()) {
    emb += ' ';
    emb += format_double(static_cast<double>(c));
  }
  return encode_kv({
      {"tool", se.key.tool},
      {"text", se.key.text},
      {"value", se.value},
      {"staticity", std::to_string(se.staticity)},
      {"frequency", std::to_string(se.frequency)},
      {"latency_ms", format_double(se.retrieval_latency_ms)},
      {"cost_usd", format_double(se.retrieval_cost_usd)},
      {"size_tokens", std::to_string(se.size_tokens)},
      {"created_at_ms", format_double(to_ms(se.created_at))},
      {"expiration_ms", format_double(to_ms(se.expiration_time))},
      {"value_score", format_double(se.value_score)},
      {"embedding", emb},
  });
}

inline SemanticElement deserialize_element(std::string_view record) {
  std::vector<std::pair<std::string, std::string>> lines;
  std::size_t pos = 0;
  while (pos < record.size()) {
    auto end = record.find('\n', pos);
    if (end == std::string_view::npos) end = record.size();
    auto line = record.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ValidationError("element record: missing '='");
    lines.emplace_back(std::string(line.substr(0, eq)), unescape_field(line.substr(eq + 1)));
  }
  if (lines.size() != std::size(kRecordFields)) {
    throw ValidationError("element record: expected " + std::to_string(std::size(kRecordFields)) +
                          " fields, got " + std::to_string(lines.size()));
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].first != kRecordFields[i]) {
      throw ValidationError("element record: field " + std::to_string(i) + " should be '" +
                            std::string(kRecordFields[i]) + "', got '" + lines[i].first + "'");
    }
  }
  const auto field = [&](std::size_t i) -> const std::string& { return lines[i].second; };

  SemanticElement se;
  se.key = SemanticKey::make(field(1), field(0));
  se.value = field(2);
  se.staticity = parse_int<int>(field(3));
  se.frequency = parse_int<std::uint64_t>(field(4));
  se.retrieval_latency_ms = parse_double(field(5));
  se.retrieval_cost_usd = parse_double(field(6));
  se.size_tokens = parse_int<std::size_t>(field(7));
  se.created_at = at_ms(parse_double(field(8)));
  se.expiration_time = at_ms(parse_double(field(9)));
  se.value_score = parse_double(field(10));

  const auto parts = split_whitespace(field(11));
  if (parts.empty()) throw ValidationError("element record: empty embedding");
  const auto dim = parse_int<std::size_t>(parts[0]);
  if (parts.size() != dim + 1) throw ValidationError("element record: embedding length mismatch");
  std::vector<float> comps(dim);
  for (std::size_t i = 0; i < dim; ++i) comps[i] = static_cast<float>(parse_double(parts[i + 1]));
  se.embedding = EmbeddingVector(std::move(comps));

  if (se.staticity < kMinStaticity || se.staticity > kMaxStaticity) {
    throw ValidationError("element record: staticity outside [1,10]");
  }
  if (se.size_tokens == 0) throw ValidationError("element record: size_tokens must be positive");
  if (se.expiration_time < se.created_at) {
    throw ValidationError("element record: expiration before creation");
  }
  return se;
}

}  // namespace semcache
