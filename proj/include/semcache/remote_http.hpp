#pragma once

// HTTP-backed embedder, judge and tool adapter. Include only where
// cpp-httplib is on the include path.

#include <chrono>
#include <cstdlib>
#include <string>

#include <httplib.h>

#include "semcache/embedder.hpp"
#include "semcache/judge.hpp"
#include "semcache/remote_client.hpp"

namespace semcache {

struct HttpTarget {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

inline HttpTarget split_url(std::string_view url) {
  const auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw ConfigError("url without scheme: " + std::string(url));
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

inline std::string percent_encode(std::string_view s) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

namespace detail {

inline httplib::Client make_client(const std::string& origin, double timeout_ms) {
  httplib::Client cli(origin);
  const auto t = std::chrono::milliseconds(static_cast<long long>(timeout_ms));
  cli.set_connection_timeout(t);
  cli.set_read_timeout(t);
  cli.set_write_timeout(t);
  return cli;
}

inline std::string post_text(const HttpTarget& target, double timeout_ms, const std::string& body,
                             const char* what) {
  auto cli = make_client(target.origin, timeout_ms);
  auto res = cli.Post(target.path, body, "text/plain");
  if (!res) throw RetriableError(std::string(what) + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw RetriableError(std::string(what) + ": HTTP " + std::to_string(res->status));
  return res->body;
}

}  // namespace detail

// POSTs the text; expects "<dim>\n<c1> <c2> ..." back and normalizes it.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(std::string url, std::size_t dimension, std::uint64_t seed, double timeout_ms = 2000)
      : target_(split_url(url)), dimension_(dimension), seed_(seed), timeout_ms_(timeout_ms) {
    if (dimension == 0) throw ConfigError("remote embedder dimension must be positive");
  }

  std::size_t dimension() const override { return dimension_; }
  std::uint64_t seed() const override { return seed_; }

  EmbeddingVector embed(std::string_view text) const override {
    if (trim(text).empty()) throw ValidationError("embed: empty text");
    const auto body = detail::post_text(target_, timeout_ms_, std::string(text), "embedder");
    const auto parts = split_whitespace(body);
    if (parts.empty()) throw RetriableError("embedder: empty response");
    const auto dim = parse_int<std::size_t>(parts[0]);
    if (dim != dimension_ || parts.size() != dim + 1) throw RetriableError("embedder: dimension mismatch");
    std::vector<double> raw(dim);
    for (std::size_t i = 0; i < dim; ++i) raw[i] = parse_double(parts[i + 1]);
    return EmbeddingVector::normalized(raw);
  }

 private:
  HttpTarget target_;
  std::size_t dimension_;
  std::uint64_t seed_;
  double timeout_ms_;
};

// Key-value bodies both ways: score=<x> from <base>/score and
// staticity=<n> from <base>/staticity.
class RemoteJudge final : public Judge {
 public:
  explicit RemoteJudge(std::string base_url, double timeout_ms = 2000)
      : base_(split_url(base_url)), timeout_ms_(timeout_ms) {
    if (base_.path.empty() || base_.path.back() != '/') base_.path += '/';
  }

  double score(std::string_view query, std::string_view cached_query,
               std::string_view cached_result) const override {
    const auto body = encode_kv({{"query", std::string(query)},
                                 {"cached_query", std::string(cached_query)},
                                 {"cached_result", std::string(cached_result)}});
    const auto kv = decode_kv(detail::post_text({base_.origin, base_.path + "score"}, timeout_ms_, body, "judge"));
    auto it = kv.find("score");
    if (it == kv.end()) throw RetriableError("judge: response without score");
    return parse_double(it->second);
  }

  int staticity(std::string_view query, std::string_view result) const override {
    const auto body = encode_kv({{"query", std::string(query)}, {"result", std::string(result)}});
    const auto kv =
        decode_kv(detail::post_text({base_.origin, base_.path + "staticity"}, timeout_ms_, body, "judge"));
    auto it = kv.find("staticity");
    if (it == kv.end()) throw RetriableError("judge: response without staticity");
    return std::clamp(parse_int<int>(it->second), kMinStaticity, kMaxStaticity);
  }

 private:
  HttpTarget base_;
  double timeout_ms_;
};

struct HttpToolConfig {
  std::string url_template;  // "{query}" is replaced by the encoded query
  double timeout_ms = 5000;
  std::string auth_env;      // name of the environment variable with the credential
  std::string auth_header = "Authorization";
  std::string auth_prefix = "Bearer ";
};

// GET on the templated URL; the body is the result. 404 means not found;
// anything else that is not 200 is retriable.
class HttpToolAdapter final : public RemoteBackend {
 public:
  explicit HttpToolAdapter(HttpToolConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.url_template.find("{query}") == std::string::npos) {
      throw ConfigError("tool url template needs a {query} placeholder");
    }
  }

  std::string url_for(std::string_view query) const {
    auto url = cfg_.url_template;
    const auto at = url.find("{query}");
    return url.replace(at, 7, percent_encode(query));
  }

  BackendReply call(const SemanticKey& query) override {
    const auto target = split_url(url_for(query.text));
    auto cli = detail::make_client(target.origin, cfg_.timeout_ms);
    httplib::Headers headers;
    if (!cfg_.auth_env.empty()) {
      if (const char* v = std::getenv(cfg_.auth_env.c_str())) headers.emplace(cfg_.auth_header, cfg_.auth_prefix + v);
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto res = cli.Get(target.path, headers);
    BackendReply r;
    r.observed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!res) throw RetriableError("tool: " + httplib::to_string(res.error()));
    if (res->status == 404) {
      r.not_found = true;
      r.result = std::string(kNotFoundMarker);
      return r;
    }
    if (res->status != 200) throw RetriableError("tool: HTTP " + std::to_string(res->status));
    r.result = res->body;
    return r;
  }

 private:
  HttpToolConfig cfg_;
};

}  // namespace semcache
