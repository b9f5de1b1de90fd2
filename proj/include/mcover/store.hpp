#ifndef MCOVER_STORE_HPP
#define MCOVER_STORE_HPP

// Embedding store and exact brute-force retrieval. For unit vectors the
// squared distance is 2 - 2 * dot, with the dot product accumulated in double.
//
// File layout ("CVRE", little-endian):
//   magic "CVRE" | u32 version | u64 count | u32 dim | u64 checkpoint_hash
//   count x { u16 id_len | id bytes | f32[dim] }

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcover/binary_io.hpp"
#include "mcover/encoder.hpp"
#include "mcover/error.hpp"
#include "mcover/frontend.hpp"
#include "mcover/metrics.hpp"
#include "mcover/triplet.hpp"

namespace mcover {

inline constexpr std::uint32_t kStoreVersion = 1;

namespace detail {

// Four independent partial sums keep the reduction order fixed.
inline double dot_f64(const float* a, const float* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline double unit_sq_distance(const float* a, const float* b, std::size_t n) {
  return std::max(0.0, 2.0 - 2.0 * dot_f64(a, b, n));
}

}  // namespace detail

class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::uint32_t dim, std::uint64_t checkpoint_hash = 0)
      : dim_(dim), checkpoint_hash_(checkpoint_hash) {
    require(dim >= 1, ErrorKind::kInvalidInput, "embedding store needs dim >= 1");
  }

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::uint64_t checkpoint_hash() const { return checkpoint_hash_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(std::size_t row) const { return ids_[row]; }
  std::span<const float> matrix() const { return data_; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Validates before mutating, so a failed append leaves the store unchanged.
  void append(const std::string& id, std::span<const float> vector) {
    require(vector.size() == dim_, ErrorKind::kShape,
            "store append: '" + id + "' has dim " + std::to_string(vector.size()) + ", store dim is " +
                std::to_string(dim_));
    require(!id.empty() && id.size() <= 0xFFFF, ErrorKind::kInvalidInput, "store append: invalid id length");
    require(!index_.contains(id), ErrorKind::kInvalidInput, "store append: duplicate id '" + id + "'");
    double sq = 0.0;
    for (float v : vector) {
      require(std::isfinite(v), ErrorKind::kNumeric, "store append: non-finite value in '" + id + "'");
      sq += static_cast<double>(v) * v;
    }
    require(std::abs(std::sqrt(sq) - 1.0) <= kUnitNormTolerance, ErrorKind::kInvalidInput,
            "store append: '" + id + "' is not unit norm (|v| = " + std::to_string(std::sqrt(sq)) + ")");
    // Reserve up front (geometrically) so nothing below can throw half-way.
    grow(data_, data_.size() + dim_);
    grow(ids_, ids_.size() + 1);
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    data_.insert(data_.end(), vector.begin(), vector.end());
  }

  void append(const Embedding& e) { append(e.track_id, e.vector); }

  bool operator==(const EmbeddingStore& o) const {
    return dim_ == o.dim_ && checkpoint_hash_ == o.checkpoint_hash_ && ids_ == o.ids_ && data_ == o.data_;
  }

 private:
  template <typename V>
  static void grow(V& v, std::size_t needed) {
    if (needed > v.capacity()) v.reserve(std::max(needed, 2 * v.capacity()));
  }

  std::uint32_t dim_ = 0;
  std::uint64_t checkpoint_hash_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<std::uint8_t> encode_store(const EmbeddingStore& store) {
  io::ByteWriter w;
  w.put_magic("CVRE");
  w.put<std::uint32_t>(kStoreVersion);
  w.put<std::uint64_t>(store.size());
  w.put<std::uint32_t>(store.dim());
  w.put<std::uint64_t>(store.checkpoint_hash());
  for (std::size_t i = 0; i < store.size(); ++i) {
    w.put_string16(store.id(i));
    w.put_array<float>(store.row(i));
  }
  return w.take();
}

inline EmbeddingStore decode_store(std::span<const std::uint8_t> bytes, const std::string& context = "store") {
  io::ByteReader r(bytes, context);
  r.expect_magic("CVRE");
  const auto version = r.get<std::uint32_t>();
  if (version != kStoreVersion) r.corrupt("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint32_t>();
  const auto hash = r.get<std::uint64_t>();
  if (dim == 0) r.corrupt("dim is zero");
  // Each record needs at least 2 + 4*dim bytes; reject impossible counts early.
  if (count > r.remaining() / (2 + 4ull * dim)) r.corrupt("count header exceeds file size");
  EmbeddingStore store(dim, hash);
  std::vector<float> v(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id = r.get_string16();
    r.get_array<float>(v);
    try {
      store.append(id, v);
    } catch (const Error& e) {
      r.corrupt("record " + std::to_string(i) + ": " + e.what());
    }
  }
  r.expect_end();
  return store;
}

inline void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  io::write_file(path, encode_store(store));
}

inline EmbeddingStore load_store(const std::filesystem::path& path) {
  return decode_store(io::read_file(path), path.string());
}

struct Neighbor {
  std::string id;
  double sq_distance = 0.0;
  bool operator==(const Neighbor&) const = default;
};

namespace detail {

inline std::vector<double> distances_to_all(std::span<const float> query, const EmbeddingStore& store) {
  require(query.size() == store.dim(), ErrorKind::kShape,
          "query dim " + std::to_string(query.size()) + " does not match store dim " + std::to_string(store.dim()));
  std::vector<double> d(store.size());
  const float* base = store.matrix().data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = unit_sq_distance(query.data(), base + i * store.dim(), store.dim());
  return d;
}

// Ascending distance, ties by id.
inline auto ranking_order(const std::vector<double>& d, const EmbeddingStore& store) {
  return [&d, &store](std::size_t a, std::size_t b) {
    if (d[a] != d[b]) return d[a] < d[b];
    return store.id(a) < store.id(b);
  };
}

}  // namespace detail

// k nearest stored vectors, ascending; all of them when k exceeds the store.
inline std::vector<Neighbor> query_topk(std::span<const float> query, const EmbeddingStore& store, std::size_t k) {
  require(k >= 1, ErrorKind::kConfig, "top-k needs k >= 1");
  if (store.empty()) return {};
  const auto d = detail::distances_to_all(query, store);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t kk = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                    detail::ranking_order(d, store));
  std::vector<Neighbor> out;
  out.reserve(kk);
  for (std::size_t i = 0; i < kk; ++i) out.push_back({store.id(order[i]), d[order[i]]});
  return out;
}

inline std::vector<Neighbor> query_topk(const Embedding& query, const EmbeddingStore& store, std::size_t k) {
  return query_topk(query.vector, store, k);
}

struct CrossOptions {
  bool exclude_self = false;
  int parallelism = 1;
};

using WorkLookup = std::unordered_map<std::string, std::string>;  // track id -> work id

namespace detail {

inline bool same_work(const WorkLookup& work_of, const std::string& a, const std::string& b) {
  auto ia = work_of.find(a);
  auto ib = work_of.find(b);
  return ia != work_of.end() && ib != work_of.end() && ia->second == ib->second;
}

inline QueryRanking rank_one(const Embedding& q, const EmbeddingStore& store, const WorkLookup& work_of,
                             bool exclude_self) {
  const auto d = distances_to_all(q.vector, store);
  std::vector<std::size_t> order;
  order.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (exclude_self && store.id(i) == q.track_id) continue;
    order.push_back(i);
  }
  std::sort(order.begin(), order.end(), ranking_order(d, store));
  QueryRanking r;
  r.query_id = q.track_id;
  r.entries.reserve(order.size());
  for (std::size_t i : order) r.entries.push_back({store.id(i), d[i], same_work(work_of, q.track_id, store.id(i))});
  return r;
}

}  // namespace detail

// Full ranking of every stored vector for each query. A reference is a cover
// when both ids map to the same work.
inline RankingSet cross_distances(std::span<const Embedding> queries, const EmbeddingStore& store,
                                  const WorkLookup& work_of, const CrossOptions& options = {}) {
  RankingSet set;
  set.queries.resize(queries.size());
  set.reference_count = store.size();
  for (const auto& q : queries) {
    require(q.vector.size() == store.dim(), ErrorKind::kShape, "query '" + q.track_id + "' dim mismatch");
  }
  detail::parallel_for(queries.size(), options.parallelism, [&](std::size_t i) {
    set.queries[i] = detail::rank_one(queries[i], store, work_of, options.exclude_self);
  });
  return set;
}

// Cover / non-cover pair distances of a ranking set, for ROC and histograms.
struct PairDistances {
  std::vector<double> cover;
  std::vector<double> noncover;
};

inline PairDistances pair_distances(const RankingSet& set) {
  PairDistances p;
  for (const auto& q : set.queries) {
    for (const auto& e : q.entries) (e.is_cover ? p.cover : p.noncover).push_back(e.sq_distance);
  }
  return p;
}

// Streams query rankings straight into the metric accumulators without
// keeping the full Q x N ranking in memory.
struct StoreEvaluation {
  RankingMetrics ranking;
  RocResult roc;
  DistanceHistogramPair histogram;
  double bc = 0.0;
};

inline StoreEvaluation evaluate_store(std::span<const Embedding> queries, const EmbeddingStore& store,
                                      const WorkLookup& work_of, const CrossOptions& options = {}) {
  std::vector<QueryStats> stats(queries.size());
  std::vector<PairDistances> pairs(queries.size());
  detail::parallel_for(queries.size(), options.parallelism, [&](std::size_t i) {
    const auto r = detail::rank_one(queries[i], store, work_of, options.exclude_self);
    stats[i] = query_stats(r.entries);
    for (const auto& e : r.entries) (e.is_cover ? pairs[i].cover : pairs[i].noncover).push_back(e.sq_distance);
  });
  RankingAccumulator acc;
  for (const auto& s : stats) acc.add(s);
  PairDistances all;
  for (auto& p : pairs) {
    all.cover.insert(all.cover.end(), p.cover.begin(), p.cover.end());
    all.noncover.insert(all.noncover.end(), p.noncover.begin(), p.noncover.end());
    p = {};
  }
  StoreEvaluation ev;
  ev.ranking = acc.finish(store.size());
  ev.roc = roc(all.cover, all.noncover);
  ev.histogram = make_histogram(all.cover, all.noncover);
  ev.bc = bhattacharyya(ev.histogram);
  return ev;
}

inline std::string ranking_csv(const RankingSet& set, std::size_t top_k = 0) {
  std::ostringstream out;
  out.precision(9);
  out << "query_id,rank,reference_id,sq_distance,is_cover\n";
  for (const auto& q : set.queries) {
    const std::size_t n = top_k == 0 ? q.entries.size() : std::min(top_k, q.entries.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = q.entries[i];
      out << q.query_id << ',' << (i + 1) << ',' << e.reference_id << ',' << e.sq_distance << ','
          << (e.is_cover ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

}  // namespace mcover

#endif  // MCOVER_STORE_HPP
