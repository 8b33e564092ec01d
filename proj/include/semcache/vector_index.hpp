#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include "semcache/element.hpp"

namespace semcache {

struct ElementId {
  std::uint64_t value = 0;
  auto operator<=>(const ElementId&) const = default;
};

struct Candidate {
  ElementId id;
  double similarity = 0;
};

struct HnswParams {
  std::size_t max_neighbors = 24;  // M; layer 0 keeps 2*M
  std::size_t ef_construction = 200;
  std::size_t ef_search = 200;
  std::size_t exact_fallback = 64;  // at or below this many entries, approx == exact
  std::uint64_t level_seed = 0x5eed;
};

// Cosine index over normalized embeddings. Offers an exact linear scan and a
// hierarchical small-world graph search whose hits are re-scored exactly.
// Queries take a shared lock; insert/remove take an exclusive one.
class VectorIndex {
 public:
  VectorIndex(std::size_t dimension, std::uint64_t seed, HnswParams params = {})
      : dimension_(dimension), seed_(seed), params_(params), rng_(params.level_seed) {
    if (dimension == 0) throw ConfigError("index dimension must be positive");
    if (params_.max_neighbors < 2) throw ConfigError("max_neighbors must be >= 2");
    level_mult_ = 1.0 / std::log(static_cast<double>(params_.max_neighbors));
  }

  VectorIndex(VectorIndex&& other) noexcept {
    std::unique_lock lock(other.mu_);
    move_from(other);
  }
  VectorIndex& operator=(VectorIndex&& other) noexcept {
    if (this != &other) {
      std::scoped_lock lock(mu_, other.mu_);
      move_from(other);
    }
    return *this;
  }

  std::size_t dimension() const { return dimension_; }
  std::uint64_t seed() const { return seed_; }
  const HnswParams& params() const { return params_; }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return slot_of_.size();
  }

  bool contains(ElementId id) const {
    std::shared_lock lock(mu_);
    return slot_of_.count(id.value) != 0;
  }

  void insert(ElementId id, const EmbeddingVector& embedding) {
    if (embedding.dimension() != dimension_) {
      throw ValidationError("index insert: dimension " + std::to_string(embedding.dimension()) +
                            " does not match index dimension " + std::to_string(dimension_));
    }
    if (!embedding.is_normalized()) throw ValidationError("index insert: embedding not normalized");
    std::unique_lock lock(mu_);
    if (slot_of_.count(id.value)) {
      throw ValidationError("index insert: duplicate id " + std::to_string(id.value));
    }
    const auto c = embedding.components();
    insert_locked(id, std::vector<float>(c.begin(), c.end()));
  }

  void remove(ElementId id) {
    std::unique_lock lock(mu_);
    auto it = slot_of_.find(id.value);
    if (it == slot_of_.end()) {
      throw NotFoundError("index remove: unknown id " + std::to_string(id.value));
    }
    nodes_[it->second].deleted = true;
    slot_of_.erase(it);
    ++deleted_count_;
    if (deleted_count_ > params_.exact_fallback && deleted_count_ > slot_of_.size()) compact_locked();
  }

  // Exact top-k over a full scan: similarity >= tau_sim, descending
  // similarity, ties by ascending id.
  std::vector<Candidate> query(const EmbeddingVector& q, double tau_sim, std::size_t k) const {
    check_query(q, k);
    std::shared_lock lock(mu_);
    std::vector<Candidate> out;
    for (const auto& node : nodes_) {
      if (node.deleted) continue;
      const double s = dot(q.components(), node.vec);
      if (s >= tau_sim) out.push_back({node.id, s});
    }
    return top_k(std::move(out), k);
  }

  // Same contract as query() but may miss entries. Small indexes fall back to
  // the exact scan. Reported similarities are always exact.
  std::vector<Candidate> approx_query(const EmbeddingVector& q, double tau_sim, std::size_t k) const {
    check_query(q, k);
    {
      std::shared_lock lock(mu_);
      if (slot_of_.size() > params_.exact_fallback) {
        const std::size_t ef = std::max(params_.ef_search, k);
        auto found = search_locked(q.components(), ef);
        std::vector<Candidate> out;
        for (const auto& [sim, slot] : found) {
          const auto& node = nodes_[slot];
          if (node.deleted) continue;
          const double s = dot(q.components(), node.vec);
          if (s >= tau_sim) out.push_back({node.id, s});
        }
        return top_k(std::move(out), k);
      }
    }
    return query(q, tau_sim, k);
  }

  std::vector<ElementId> ids() const {
    std::shared_lock lock(mu_);
    std::vector<ElementId> out;
    out.reserve(slot_of_.size());
    for (const auto& node : nodes_) {
      if (!node.deleted) out.push_back(node.id);
    }
    return out;
  }

  std::optional<EmbeddingVector> embedding(ElementId id) const {
    std::shared_lock lock(mu_);
    auto it = slot_of_.find(id.value);
    if (it == slot_of_.end()) return std::nullopt;
    return EmbeddingVector(nodes_[it->second].vec);
  }

  // Snapshot layout (little-endian):
  //   magic "SCVI", u32 version, u32 dimension, u64 seed, u64 count,
  //   then count x (u64 id, dimension x f32)
  // Entries are written in insertion order.
  void save(std::ostream& out) const {
    std::shared_lock lock(mu_);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(dimension_));
    write_pod(out, seed_);
    write_pod(out, static_cast<std::uint64_t>(slot_of_.size()));
    for (const auto& node : nodes_) {
      if (node.deleted) continue;
      write_pod(out, node.id.value);
      for (float v : node.vec) write_pod(out, v);
    }
    if (!out) throw Error("index snapshot: write failed");
  }

  static VectorIndex load(std::istream& in, HnswParams params = {}) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("index snapshot: bad magic");
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion) throw ValidationError("index snapshot: unsupported version");
    const auto dim = read_pod<std::uint32_t>(in);
    const auto seed = read_pod<std::uint64_t>(in);
    const auto count = read_pod<std::uint64_t>(in);
    VectorIndex index(dim, seed, params);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto id = read_pod<std::uint64_t>(in);
      std::vector<float> vec(dim);
      for (auto& v : vec) v = read_pod<float>(in);
      if (index.slot_of_.count(id)) throw ValidationError("index snapshot: duplicate id");
      index.insert_locked(ElementId{id}, std::move(vec));
    }
    return index;
  }

 private:
  static constexpr char kMagic[4] = {'S', 'C', 'V', 'I'};
  static constexpr std::uint32_t kVersion = 1;

  struct Node {
    ElementId id;
    std::vector<float> vec;
    int level = 0;
    std::vector<std::vector<std::uint32_t>> links;  // per layer
    bool deleted = false;
  };

  using Scored = std::pair<double, std::uint32_t>;  // (similarity, slot)

  void move_from(VectorIndex& o) {
    dimension_ = o.dimension_;
    seed_ = o.seed_;
    params_ = o.params_;
    level_mult_ = o.level_mult_;
    rng_ = o.rng_;
    nodes_ = std::move(o.nodes_);
    slot_of_ = std::move(o.slot_of_);
    entry_ = o.entry_;
    max_level_ = o.max_level_;
    deleted_count_ = o.deleted_count_;
  }

  template <typename T>
  static void write_pod(std::ostream& out, T v) {
    static_assert(std::endian::native == std::endian::little, "snapshot format is little-endian");
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ValidationError("index snapshot: truncated");
    return v;
  }

  void check_query(const EmbeddingVector& q, std::size_t k) const {
    if (k == 0) throw ValidationError("index query: k must be >= 1");
    if (q.dimension() != dimension_) throw ValidationError("index query: dimension mismatch");
  }

  static std::vector<Candidate> top_k(std::vector<Candidate> all, std::size_t k) {
    const auto better = [](const Candidate& a, const Candidate& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return a.id < b.id;
    };
    if (all.size() > k) {
      std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
      all.resize(k);
    } else {
      std::sort(all.begin(), all.end(), better);
    }
    return all;
  }

  // Graph traversal only; reported similarities use the double-precision dot.
  static double fast_dot(std::span<const float> a, std::span<const float> b) {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
      for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    }
    float tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return static_cast<double>(((acc[0] + acc[1]) + (acc[2] + acc[3])) +
                               ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail);
  }
  double sim(std::span<const float> q, std::uint32_t slot) const { return fast_dot(q, nodes_[slot].vec); }
  double sim(std::uint32_t a, std::uint32_t b) const { return fast_dot(nodes_[a].vec, nodes_[b].vec); }

  std::size_t max_links(int layer) const {
    return layer == 0 ? 2 * params_.max_neighbors : params_.max_neighbors;
  }

  int draw_level() {
    std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
    return static_cast<int>(std::floor(-std::log(u(rng_)) * level_mult_));
  }

  // Beam search on one layer. Returns up to ef results, best first.
  std::vector<Scored> search_layer(std::span<const float> q, const std::vector<Scored>& entries,
                                   std::size_t ef, int layer, std::vector<char>& visited) const {
    auto worse_first = [](const Scored& a, const Scored& b) { return a.first > b.first; };
    auto best_first = [](const Scored& a, const Scored& b) { return a.first < b.first; };
    std::priority_queue<Scored, std::vector<Scored>, decltype(best_first)> frontier(best_first);
    std::priority_queue<Scored, std::vector<Scored>, decltype(worse_first)> results(worse_first);
    for (const auto& e : entries) {
      if (visited[e.second]) continue;
      visited[e.second] = 1;
      frontier.push(e);
      results.push(e);
    }
    while (results.size() > ef) results.pop();
    while (!frontier.empty()) {
      const auto current = frontier.top();
      if (results.size() >= ef && current.first < results.top().first) break;
      frontier.pop();
      const auto& node = nodes_[current.second];
      if (layer > node.level) continue;
      for (std::uint32_t nb : node.links[static_cast<std::size_t>(layer)]) {
        if (visited[nb]) continue;
        visited[nb] = 1;
        const double s = sim(q, nb);
        if (results.size() < ef || s > results.top().first) {
          frontier.push({s, nb});
          results.push({s, nb});
          if (results.size() > ef) results.pop();
        }
      }
    }
    std::vector<Scored> out;
    out.reserve(results.size());
    while (!results.empty()) {
      out.push_back(results.top());
      results.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  std::vector<Scored> search_locked(std::span<const float> q, std::size_t ef) const {
    if (!entry_) return {};
    std::vector<char> visited(nodes_.size(), 0);
    std::vector<Scored> current{{sim(q, *entry_), *entry_}};
    for (int layer = max_level_; layer > 0; --layer) {
      std::fill(visited.begin(), visited.end(), 0);
      current = search_layer(q, current, 1, layer, visited);
    }
    std::fill(visited.begin(), visited.end(), 0);
    return search_layer(q, current, ef, 0, visited);
  }

  // Keeps candidates that are closer to the base than to any already kept
  // neighbor, which spreads links across directions.
  std::vector<std::uint32_t> select_neighbors(const std::vector<Scored>& sorted_candidates,
                                              std::size_t m) const {
    std::vector<std::uint32_t> kept;
    for (const auto& [s_base, c] : sorted_candidates) {
      if (kept.size() >= m) break;
      bool good = true;
      for (std::uint32_t k : kept) {
        if (sim(c, k) > s_base) {
          good = false;
          break;
        }
      }
      if (good) kept.push_back(c);
    }
    return kept;
  }

  void insert_locked(ElementId id, std::vector<float> vec) {
    const auto slot = static_cast<std::uint32_t>(nodes_.size());
    Node node;
    node.id = id;
    node.vec = std::move(vec);
    node.level = draw_level();
    node.links.resize(static_cast<std::size_t>(node.level) + 1);
    nodes_.push_back(std::move(node));
    slot_of_[id.value] = slot;

    if (!entry_) {
      entry_ = slot;
      max_level_ = nodes_[slot].level;
      return;
    }

    const std::span<const float> q = nodes_[slot].vec;
    const int level = nodes_[slot].level;
    std::vector<char> visited(nodes_.size(), 0);
    std::vector<Scored> current{{sim(q, *entry_), *entry_}};
    for (int layer = max_level_; layer > level; --layer) {
      std::fill(visited.begin(), visited.end(), 0);
      current = search_layer(q, current, 1, layer, visited);
    }
    for (int layer = std::min(level, max_level_); layer >= 0; --layer) {
      std::fill(visited.begin(), visited.end(), 0);
      auto found = search_layer(q, current, params_.ef_construction, layer, visited);
      const auto neighbors = select_neighbors(found, params_.max_neighbors);
      nodes_[slot].links[static_cast<std::size_t>(layer)] = neighbors;
      for (std::uint32_t nb : neighbors) link_back(nb, slot, layer);
      current = std::move(found);
    }
    if (level > max_level_) {
      max_level_ = level;
      entry_ = slot;
    }
  }

  void link_back(std::uint32_t from, std::uint32_t to, int layer) {
    auto& links = nodes_[from].links[static_cast<std::size_t>(layer)];
    links.push_back(to);
    const auto limit = max_links(layer);
    if (links.size() <= limit) return;
    std::vector<Scored> scored;
    scored.reserve(links.size());
    for (std::uint32_t l : links) scored.push_back({sim(from, l), l});
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    links = select_neighbors(scored, limit);
  }

  void compact_locked() {
    std::vector<Node> old = std::move(nodes_);
    nodes_.clear();
    slot_of_.clear();
    entry_.reset();
    max_level_ = -1;
    deleted_count_ = 0;
    for (auto& node : old) {
      if (!node.deleted) insert_locked(node.id, std::move(node.vec));
    }
  }

  std::size_t dimension_ = 0;
  std::uint64_t seed_ = 0;
  HnswParams params_;
  double level_mult_ = 1.0;
  std::mt19937_64 rng_;

  mutable std::shared_mutex mu_;
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::uint32_t> slot_of_;
  std::optional<std::uint32_t> entry_;
  int max_level_ = -1;
  std::size_t deleted_count_ = 0;
};

}  // namespace semcache
