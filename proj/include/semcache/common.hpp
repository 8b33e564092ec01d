#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <unordered_set>
#include <vector>

namespace semcache {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input or a violated precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Transport or backend failure; the caller may retry or fall back.
class RetriableError : public Error {
 public:
  using Error::Error;
};

// Remote endpoint kept throttling past the retry budget.
class RateLimitError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Element larger than the whole cache budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

using Millis = std::chrono::duration<double, std::milli>;

// Tag clock for simulation and service timestamps. Timestamps are
// milliseconds since an arbitrary epoch chosen by the active Clock.
struct SimClock {
  using duration = Millis;
  using rep = duration::rep;
  using period = duration::period;
  using time_point = std::chrono::time_point<SimClock, duration>;
  static constexpr bool is_steady = true;
};

using Timestamp = SimClock::time_point;

inline Timestamp at_ms(double ms) { return Timestamp{Millis{ms}}; }
inline double to_ms(Timestamp t) { return t.time_since_epoch().count(); }

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
  virtual void sleep_for(Millis d) = 0;
};

// Deterministic clock: sleeping advances time instantly. Intended for
// single-threaded tests and tools.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start = Timestamp{}) : now_(start) {}

  Timestamp now() const override {
    std::lock_guard lock(mu_);
    return now_;
  }
  void sleep_for(Millis d) override { advance(d); }
  void advance(Millis d) {
    std::lock_guard lock(mu_);
    if (d.count() > 0) now_ += d;
  }
  void set(Timestamp t) {
    std::lock_guard lock(mu_);
    now_ = t;
  }

 private:
  mutable std::mutex mu_;
  Timestamp now_;
};

// Wall clock with an optional speed-up. With scale 0.01 one simulated second
// passes in 10 real milliseconds.
class ScaledSystemClock final : public Clock {
 public:
  explicit ScaledSystemClock(double scale = 1.0)
      : scale_(scale), origin_(std::chrono::steady_clock::now()) {
    if (!(scale > 0)) throw ConfigError("clock scale must be positive");
  }

  Timestamp now() const override {
    const auto real = std::chrono::steady_clock::now() - origin_;
    return Timestamp{Millis{std::chrono::duration<double, std::milli>(real).count() / scale_}};
  }
  void sleep_for(Millis d) override {
    if (d.count() <= 0) return;
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(d.count() * scale_));
  }

 private:
  double scale_;
  std::chrono::steady_clock::time_point origin_;
};

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Lowercase, collapse whitespace runs to one space, trim.
inline std::string canonicalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : trim(text)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

// Lowercased alphanumeric words; every other ASCII byte separates words.
// Bytes >= 0x80 are kept so UTF-8 text still tokenizes.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

inline bool is_function_word(std::string_view w) {
  static const std::unordered_set<std::string_view> words = {
      "a",      "an",    "the",   "of",    "in",    "on",    "at",     "to",    "for",
      "by",     "with",  "from",  "about", "into",  "as",    "and",    "or",    "but",
      "is",     "are",   "was",   "were",  "be",    "been",  "being",  "am",    "do",
      "does",   "did",   "has",   "have",  "had",   "it",    "its",    "this",  "that",
      "these",  "those", "who",   "whom",  "whose", "what",  "which",  "when",  "where",
      "why",    "how",   "me",    "my",    "i",     "you",   "your",   "we",    "our",
      "they",   "their", "he",    "she",   "his",   "her",   "them",   "us",    "can",
      "could",  "would", "should", "will", "shall", "may",   "might",  "must",  "please",
      "tell",   "show",  "give",  "find",  "explain", "know", "look",  "up",    "some",
      "any",    "there", "here",  "so",    "then",  "than",  "also",   "just",  "out",
      "let",    "get",   "want",  "need",  "info",  "information", "details", "regarding",
      "quick",  "question", "search", "query", "lookup", "open", "read", "contents", "file"};
  return words.count(w) != 0;
}

// Word tokens minus function words. Falls back to all tokens when nothing
// content-bearing remains, so "what is it" still has a fingerprint.
inline std::vector<std::string> content_words(std::string_view text) {
  auto tokens = word_tokens(text);
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    if (!is_function_word(t)) out.push_back(t);
  }
  if (out.empty()) return tokens;
  return out;
}

// ---------------------------------------------------------------------------
// Number formatting (shortest round-trip representation)
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(std::string_view s) {
  s = trim(s);
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Key-value text format: one "key=value" per line, values escaped so that
// they never contain a raw newline, tab or carriage return.
// ---------------------------------------------------------------------------

inline std::string escape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i == s.size()) throw ValidationError("dangling escape");
    switch (s[i]) {
      case '\\': out.push_back('\\'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 't': out.push_back('\t'); break;
      default: throw ValidationError(std::string("unknown escape \\") + s[i]);
    }
  }
  return out;
}

// Ordered so the encoding is deterministic.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string encode_kv(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += escape_field(v);
    out += '\n';
  }
  return out;
}

inline std::map<std::string, std::string> decode_kv(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("expected key=value, got '" + std::string(line) + "'");
    }
    out[std::string(trim(line.substr(0, eq)))] = unescape_field(line.substr(eq + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, mixed with a seed. Stable across platforms and runs.
inline std::uint64_t seeded_hash(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ splitmix64(seed);
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return splitmix64(h);
}

}  // namespace semcache
