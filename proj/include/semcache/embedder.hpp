#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "semcache/element.hpp"

namespace semcache {

// Produces L2-normalized vectors from key text. Implementations must be
// deterministic and safe to call from many threads.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dimension() const = 0;
  // Identifies the vector space; vectors from different seeds are never mixed.
  virtual std::uint64_t seed() const { return 0; }
  virtual EmbeddingVector embed(std::string_view text) const = 0;
};

inline constexpr std::size_t kDefaultDimension = 256;

// Hashed bag of words over content words: lowercase, split on anything that
// is not alphanumeric, drop function words, hash each remaining word with the
// seed into a bucket, count, L2-normalize. Word order does not matter.
inline EmbeddingVector reference_embed(std::string_view text, std::size_t dimension,
                                       std::uint64_t seed) {
  if (dimension < 8) throw ValidationError("reference_embed: dimension must be >= 8");
  if (trim(text).empty()) throw ValidationError("reference_embed: empty text");
  const auto words = content_words(text);
  if (words.empty()) throw ValidationError("reference_embed: no word tokens in input");
  std::vector<double> buckets(dimension, 0.0);
  for (const auto& w : words) buckets[seeded_hash(w, seed) % dimension] += 1.0;
  return EmbeddingVector::normalized(buckets);
}

class ReferenceEmbedder final : public Embedder {
 public:
  explicit ReferenceEmbedder(std::size_t dimension = kDefaultDimension, std::uint64_t seed = 1)
      : dimension_(dimension), seed_(seed) {
    if (dimension < 8) throw ConfigError("reference embedder dimension must be >= 8");
  }

  std::size_t dimension() const override { return dimension_; }
  std::uint64_t seed() const override { return seed_; }
  EmbeddingVector embed(std::string_view text) const override {
    return reference_embed(text, dimension_, seed_);
  }

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

}  // namespace semcache
