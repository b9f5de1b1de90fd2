#pragma once
// Randomized library-vs-oracle comparisons shared by the unit tests and the
// acceptance harness.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mcover/metrics.hpp"
#include "mcover/nn/random.hpp"
#include "mcover/preprocess.hpp"
#include "mcover/triplet.hpp"
#include "oracles/bilinear_oracle.hpp"
#include "oracles/metrics_oracle.hpp"
#include "oracles/mining_oracle.hpp"

namespace suites {

using mcover::nn::Rng;

// Random symmetric distance matrices; half of them are quantised to 0.25 so
// that ties between candidates are common.
inline std::size_t mining_mismatches(std::uint64_t seed, std::size_t instances) {
  Rng rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t works = 2 + rng.below(4), per = 2 + rng.below(3);
    const std::size_t n = works * per;
    std::vector<std::uint32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % works);
    rng.shuffle(labels);
    const bool quantise = it % 2 == 0;
    mcover::DistanceMatrix d{n, std::vector<double>(n * n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double v = rng.uniform(0.0, 4.0);
        if (quantise) v = std::round(v * 4.0) / 4.0;
        d(i, j) = d(j, i) = v;
      }
    }
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t p = 0; p < n; ++p) {
        if (a == p || labels[a] != labels[p]) continue;
        const auto got = mcover::mine_negative(d, labels, a, p);
        const auto want = oracle::mine(d.values, n, labels, a, p);
        const bool semi = got.d_an < got.d_ap;
        if (!want || got.negative != *want || semi != (got.kind == mcover::NegativeKind::kSemiHard)) ++mismatches;
      }
    }
  }
  return mismatches;
}

// Largest |library - brute force| loss over random batches of 12.
inline double loss_max_error(std::uint64_t seed, std::size_t batches) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t it = 0; it < batches; ++it) {
    const std::size_t works = 2 + rng.below(3);  // 2..4 works, 12 tracks
    std::vector<std::uint32_t> labels(12);
    for (std::size_t i = 0; i < 12; ++i) labels[i] = static_cast<std::uint32_t>(i % works);
    const std::size_t e = 3 + rng.below(6);
    std::vector<std::vector<double>> rows(12, std::vector<double>(e));
    mcover::nn::Tensor<double> t({12, e});
    for (std::size_t i = 0; i < 12; ++i) {
      double sq = 0.0;
      for (auto& v : rows[i]) {
        v = rng.normal();
        sq += v * v;
      }
      for (std::size_t k = 0; k < e; ++k) {
        rows[i][k] /= std::sqrt(sq);
        t[i * e + k] = rows[i][k];
      }
    }
    const double margin = rng.uniform(0.1, 2.0);
    const double got = mcover::batch_triplet_loss(t, labels, margin).loss;
    worst = std::max(worst, std::abs(got - oracle::triplet_loss(rows, labels, margin)));
  }
  return worst;
}

inline double bilinear_max_error(std::uint64_t seed, std::size_t matrices) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t it = 0; it < matrices; ++it) {
    const std::size_t rows = 1 + rng.below(200), cols = 1 + rng.below(200);
    const std::size_t out_rows = 1 + rng.below(200), out_cols = 1 + rng.below(200);
    mcover::MatrixF m(rows, cols);
    for (auto& v : m.values()) v = static_cast<float>(rng.uniform());
    const std::vector<double> in(m.values().begin(), m.values().end());
    const auto out = mcover::bilinear_resize(m, out_rows, out_cols);
    for (std::size_t r = 0; r < out_rows; ++r) {
      for (std::size_t c = 0; c < out_cols; ++c) {
        worst = std::max(worst, std::abs(out(r, c) - oracle::bilinear_at(in, rows, cols, r, c, out_rows, out_cols)));
      }
    }
  }
  return worst;
}

struct MetricsMismatch {
  std::size_t instances = 0;
  std::size_t mismatches = 0;
};

// Random small ranking instances: MAP, MR1, MT@10 and AuC against brute force.
// Distances are drawn from a coarse grid so that ties occur. Draws without a
// cover or a non-cover are redrawn, so exactly `instances` are compared.
inline MetricsMismatch metrics_mismatches(std::uint64_t seed, std::size_t instances) {
  Rng rng(seed);
  MetricsMismatch out;
  while (out.instances < instances) {
    const std::size_t queries = 1 + rng.below(5), refs = 2 + rng.below(14);
    mcover::RankingSet set;
    set.reference_count = refs;
    std::vector<double> cover, noncover;
    double ap = 0.0, top = 0.0, rank = 0.0;
    std::size_t eligible = 0;
    for (std::size_t q = 0; q < queries; ++q) {
      mcover::QueryRanking qr;
      qr.query_id = "q" + std::to_string(q);
      for (std::size_t r = 0; r < refs; ++r) {
        const bool is_cover = rng.uniform() < 0.3;
        const double d = static_cast<double>(rng.below(9)) * 0.5;
        qr.entries.push_back({"r" + std::to_string(100 + r), d, is_cover});
        (is_cover ? cover : noncover).push_back(d);
      }
      mcover::sort_ranking(qr.entries);
      std::vector<bool> flags;
      for (const auto& e : qr.entries) flags.push_back(e.is_cover);
      if (oracle::first_rank(flags) > 0) {
        ++eligible;
        ap += oracle::average_precision(flags);
        top += static_cast<double>(oracle::covers_in_top(flags, 10));
        rank += static_cast<double>(oracle::first_rank(flags));
      }
      set.queries.push_back(std::move(qr));
    }
    if (eligible == 0 || cover.empty() || noncover.empty()) continue;
    ++out.instances;
    const auto m = mcover::ranking_metrics(set);
    const auto n = static_cast<double>(eligible);
    const double auc = mcover::roc(cover, noncover).auc;
    const bool same = m.map == ap / n && m.mt10 == top / n && m.mr1 == rank / n &&
                      std::abs(auc - oracle::auc_by_pairs(cover, noncover)) <= 1e-12 &&
                      m.excluded_queries == queries - eligible;
    if (!same) ++out.mismatches;
  }
  return out;
}

// The worked example: one query with ten covers at ranks 1-10, four queries
// whose first cover sits at rank 100.
inline mcover::RankingMetrics worked_example() {
  mcover::RankingSet set;
  set.reference_count = 1000;
  for (int q = 0; q < 5; ++q) {
    mcover::QueryRanking qr;
    qr.query_id = "q" + std::to_string(q);
    for (int r = 1; r <= 120; ++r) {
      const bool cover = q == 0 ? r <= 10 : r == 100;
      char id[16];
      std::snprintf(id, sizeof id, "r%04d", r);
      qr.entries.push_back({id, static_cast<double>(r) / 100.0, cover});
    }
    set.queries.push_back(std::move(qr));
  }
  return mcover::ranking_metrics(set);
}

}  // namespace suites
