#ifndef MCOVER_METRICS_HPP
#define MCOVER_METRICS_HPP

// Evaluation metrics. Pair-distribution metrics (ROC AuC, TPR at 5% FPR,
// Bhattacharyya coefficient, Bayes cover posterior) work on cover / non-cover
// squared distances; ranking metrics (MAP, MT@10, MR1, MR1 percentile) work
// on per-query rankings.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcover/error.hpp"

namespace mcover {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // pairs with distance <= threshold are predicted covers
};

struct RocResult {
  double auc = 0.0;
  double tpr_at_5 = 0.0;
  std::vector<RocPoint> points;
};

inline constexpr double kOperatingFpr = 0.05;

// Highest TPR of the piecewise-linear ROC curve at the given FPR.
inline double tpr_at_fpr(std::span<const RocPoint> points, double fpr) {
  double best = 0.0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const auto& a = points[i];
    const auto& b = points[i + 1];
    if (fpr < a.fpr || fpr > b.fpr) continue;
    const double v = b.fpr == a.fpr ? std::max(a.tpr, b.tpr)
                                    : a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr);
    best = std::max(best, v);
  }
  return best;
}

// Threshold sweep over the sorted distances (smaller distance = cover);
// tied distances form a single ROC step.
inline RocResult roc(std::span<const double> cover, std::span<const double> noncover) {
  require(!cover.empty(), ErrorKind::kInvalidInput, "ROC needs at least one cover pair");
  require(!noncover.empty(), ErrorKind::kInvalidInput, "ROC needs at least one non-cover pair");
  std::vector<std::pair<double, bool>> all;
  all.reserve(cover.size() + noncover.size());
  for (double d : cover) all.emplace_back(d, true);
  for (double d : noncover) all.emplace_back(d, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  const auto pos = static_cast<double>(cover.size());
  const auto neg = static_cast<double>(noncover.size());
  RocResult r;
  r.points.push_back({0.0, 0.0, -std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double threshold = all[i].first;
    for (; i < all.size() && all[i].first == threshold; ++i) (all[i].second ? tp : fp)++;
    r.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, threshold});
  }
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const auto& a = r.points[i - 1];
    const auto& b = r.points[i];
    r.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  r.tpr_at_5 = tpr_at_fpr(r.points, kOperatingFpr);
  return r;
}

inline std::string roc_csv(const RocResult& r) {
  std::ostringstream out;
  out.precision(9);
  out << "threshold,fpr,tpr\n";
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    out << r.points[i].threshold << ',' << r.points[i].fpr << ',' << r.points[i].tpr << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Distance histograms over [0, 4] and the measures built on them.

inline constexpr std::size_t kDefaultHistogramBins = 200;
inline constexpr double kMaxSqDistance = 4.0;

struct DistanceHistogramPair {
  std::vector<double> edges;  // bins + 1 uniform edges
  std::vector<double> cover_counts;
  std::vector<double> noncover_counts;

  std::size_t bins() const { return cover_counts.size(); }
};

inline DistanceHistogramPair make_histogram(std::span<const double> cover, std::span<const double> noncover,
                                            std::size_t bins = kDefaultHistogramBins, double hi = kMaxSqDistance) {
  require(bins >= 1, ErrorKind::kConfig, "histogram needs at least one bin");
  DistanceHistogramPair h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = hi * static_cast<double>(i) / static_cast<double>(bins);
  h.cover_counts.assign(bins, 0.0);
  h.noncover_counts.assign(bins, 0.0);
  auto bin_of = [&](double d) {
    const double x = std::floor(d / hi * static_cast<double>(bins));
    return static_cast<std::size_t>(std::clamp(x, 0.0, static_cast<double>(bins - 1)));
  };
  for (double d : cover) h.cover_counts[bin_of(d)] += 1.0;
  for (double d : noncover) h.noncover_counts[bin_of(d)] += 1.0;
  return h;
}

inline std::vector<double> normalize_counts(std::span<const double> counts, double pseudo_count = 0.0) {
  double total = 0.0;
  for (double c : counts) {
    require(c >= 0.0, ErrorKind::kInvalidInput, "histogram counts must be non-negative");
    total += c + pseudo_count;
  }
  require(total > 0.0, ErrorKind::kInvalidInput, "cannot normalise an empty histogram");
  std::vector<double> p(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) p[i] = (counts[i] + pseudo_count) / total;
  return p;
}

inline constexpr double kNormalizationTolerance = 1e-6;

// Sum over bins of sqrt(p_c * p_nc) for two normalised densities.
inline double bhattacharyya(std::span<const double> p_cover, std::span<const double> p_noncover) {
  require(p_cover.size() == p_noncover.size(), ErrorKind::kShape, "Bhattacharyya: histograms differ in size");
  double sc = 0.0, sn = 0.0, bc = 0.0;
  for (std::size_t i = 0; i < p_cover.size(); ++i) {
    require(p_cover[i] >= 0.0 && p_noncover[i] >= 0.0, ErrorKind::kInvalidInput,
            "Bhattacharyya: negative density");
    sc += p_cover[i];
    sn += p_noncover[i];
    bc += std::sqrt(p_cover[i] * p_noncover[i]);
  }
  require(std::abs(sc - 1.0) <= kNormalizationTolerance && std::abs(sn - 1.0) <= kNormalizationTolerance,
          ErrorKind::kInvalidInput, "Bhattacharyya: densities must each sum to 1");
  return std::clamp(bc, 0.0, 1.0);
}

inline double bhattacharyya(const DistanceHistogramPair& h) {
  return bhattacharyya(normalize_counts(h.cover_counts), normalize_counts(h.noncover_counts));
}

struct PosteriorOptions {
  std::optional<double> prior_cover;  // defaults to the empirical cover-pair fraction
  bool laplace_smoothing = false;     // +1 pseudo-count per bin and class
};

struct PosteriorCurve {
  std::vector<std::optional<double>> probability;  // empty where both densities vanish
  double prior_cover = 0.0;
  bool laplace_smoothing = false;
};

// P(cover | d) = pi_c p_c(d) / (pi_c p_c(d) + pi_nc p_nc(d)) per bin.
inline std::vector<std::optional<double>> posterior(std::span<const double> p_cover,
                                                    std::span<const double> p_noncover, double prior_cover) {
  require(p_cover.size() == p_noncover.size(), ErrorKind::kShape, "posterior: histograms differ in size");
  require(prior_cover > 0.0 && prior_cover < 1.0, ErrorKind::kInvalidInput, "cover prior must lie in (0, 1)");
  std::vector<std::optional<double>> out(p_cover.size());
  for (std::size_t i = 0; i < p_cover.size(); ++i) {
    const double c = prior_cover * p_cover[i];
    const double total = c + (1.0 - prior_cover) * p_noncover[i];
    if (total > 0.0) out[i] = c / total;
  }
  return out;
}

inline PosteriorCurve posterior_curve(const DistanceHistogramPair& h, const PosteriorOptions& options = {}) {
  PosteriorCurve curve;
  curve.laplace_smoothing = options.laplace_smoothing;
  double nc = 0.0, nn = 0.0;
  for (double c : h.cover_counts) nc += c;
  for (double c : h.noncover_counts) nn += c;
  curve.prior_cover = options.prior_cover.value_or(nc + nn > 0.0 ? nc / (nc + nn) : 0.0);
  const double pseudo = options.laplace_smoothing ? 1.0 : 0.0;
  curve.probability = posterior(normalize_counts(h.cover_counts, pseudo), normalize_counts(h.noncover_counts, pseudo),
                                curve.prior_cover);
  return curve;
}

// ---------------------------------------------------------------------------
// Ranking metrics.

struct RankingEntry {
  std::string reference_id;
  double sq_distance = 0.0;
  bool is_cover = false;
};

struct QueryRanking {
  std::string query_id;
  std::vector<RankingEntry> entries;  // ascending distance, ties by reference id
};

struct RankingSet {
  std::vector<QueryRanking> queries;
  std::size_t reference_count = 0;  // size of the reference collection, for the MR1 percentile
};

inline void sort_ranking(std::vector<RankingEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const RankingEntry& a, const RankingEntry& b) {
    if (a.sq_distance != b.sq_distance) return a.sq_distance < b.sq_distance;
    return a.reference_id < b.reference_id;
  });
}

inline constexpr std::size_t kTopT = 10;

struct QueryStats {
  bool has_cover = false;
  double average_precision = 0.0;
  std::size_t covers_in_top10 = 0;
  std::size_t first_cover_rank = 0;  // 1-based; 0 when there is no cover
};

inline QueryStats query_stats(std::span<const RankingEntry> ranking) {
  QueryStats s;
  std::size_t hits = 0;
  double precision_sum = 0.0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (!ranking[i].is_cover) continue;
    ++hits;
    precision_sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    if (s.first_cover_rank == 0) s.first_cover_rank = i + 1;
    if (i < kTopT) ++s.covers_in_top10;
  }
  s.has_cover = hits > 0;
  if (hits > 0) s.average_precision = precision_sum / static_cast<double>(hits);
  return s;
}

struct RankingMetrics {
  double map = 0.0;
  double mt10 = 0.0;
  double mr1 = 0.0;
  double mr1_percentile = 0.0;
  std::size_t evaluated_queries = 0;
  std::size_t excluded_queries = 0;  // no cover in the reference set
};

// Running aggregate so large evaluations can stream queries.
class RankingAccumulator {
 public:
  void add(const QueryStats& s) {
    if (!s.has_cover) {
      ++excluded_;
      return;
    }
    ++evaluated_;
    ap_sum_ += s.average_precision;
    top10_sum_ += static_cast<double>(s.covers_in_top10);
    rank_sum_ += static_cast<double>(s.first_cover_rank);
  }

  RankingMetrics finish(std::size_t reference_count) const {
    require(evaluated_ > 0, ErrorKind::kInvalidInput, "no query has a cover in the reference set");
    require(reference_count > 0, ErrorKind::kInvalidInput, "reference set is empty");
    RankingMetrics m;
    const auto n = static_cast<double>(evaluated_);
    m.map = ap_sum_ / n;
    m.mt10 = top10_sum_ / n;
    m.mr1 = rank_sum_ / n;
    m.mr1_percentile = 100.0 * m.mr1 / static_cast<double>(reference_count);
    m.evaluated_queries = evaluated_;
    m.excluded_queries = excluded_;
    return m;
  }

 private:
  std::size_t evaluated_ = 0, excluded_ = 0;
  double ap_sum_ = 0.0, top10_sum_ = 0.0, rank_sum_ = 0.0;
};

// Queries without any cover in their ranking are excluded and counted.
inline RankingMetrics ranking_metrics(const RankingSet& set) {
  RankingAccumulator acc;
  std::size_t longest = 0;
  for (const auto& q : set.queries) {
    acc.add(query_stats(q.entries));
    longest = std::max(longest, q.entries.size());
  }
  return acc.finish(set.reference_count > 0 ? set.reference_count : longest);
}

// ---------------------------------------------------------------------------
// Report.

inline nlohmann::json optional_array(const std::vector<std::optional<double>>& values) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& v : values) out.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return out;
}

inline nlohmann::json distribution_report(const DistanceHistogramPair& h, const PosteriorCurve& curve) {
  nlohmann::json j;
  j["histogram"] = {{"edges", h.edges},
                    {"cover_counts", h.cover_counts},
                    {"noncover_counts", h.noncover_counts},
                    {"cover_density", normalize_counts(h.cover_counts)},
                    {"noncover_density", normalize_counts(h.noncover_counts)}};
  j["posterior"] = optional_array(curve.probability);
  j["posterior_meta"] = {{"prior_cover", curve.prior_cover}, {"laplace_smoothing", curve.laplace_smoothing}};
  return j;
}

}  // namespace mcover

#endif  // MCOVER_METRICS_HPP
