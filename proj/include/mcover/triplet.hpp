#ifndef MCOVER_TRIPLET_HPP
#define MCOVER_TRIPLET_HPP

// Batch triplet loss on squared Euclidean distances with online semi-hard
// negative mining. Every track in the batch serves as anchor against each of
// its in-batch covers; per (anchor, positive) pair a single negative is kept:
//   - among negatives closer than the positive (d_an < d_ap), the farthest;
//   - if there is none, the closest negative overall.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mcover/error.hpp"
#include "mcover/nn/tensor.hpp"

namespace mcover {

using WorkLabel = std::uint32_t;

inline constexpr double kUnitNormTolerance = 1e-4;

// Symmetric n x n matrix of squared distances.
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
};

// D[i][j] = ||v_i - v_j||^2 for unit-norm rows of a [B, E] tensor.
template <typename T>
DistanceMatrix pairwise_sq_distances(const nn::Tensor<T>& vectors) {
  require(vectors.rank() == 2, ErrorKind::kShape, "pairwise distances expect [B, E]");
  require(vectors.all_finite(), ErrorKind::kNumeric, "pairwise distances: non-finite embedding");
  const std::size_t b = vectors.dim(0), e = vectors.dim(1);
  for (std::size_t i = 0; i < b; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < e; ++k) sq += static_cast<double>(vectors[i * e + k]) * vectors[i * e + k];
    require(std::abs(std::sqrt(sq) - 1.0) <= kUnitNormTolerance, ErrorKind::kInvalidInput,
            "pairwise distances: row " + std::to_string(i) + " is not unit norm");
  }
  DistanceMatrix d{b, std::vector<double>(b * b, 0.0)};
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < e; ++k) {
        const double diff = static_cast<double>(vectors[i * e + k]) - vectors[j * e + k];
        sq += diff * diff;
      }
      d(i, j) = sq;
      d(j, i) = sq;
    }
  }
  return d;
}

enum class NegativeKind { kSemiHard, kEasiestHard };

struct MiningOutcome {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  double d_ap = 0.0;
  double d_an = 0.0;
  NegativeKind kind = NegativeKind::kSemiHard;
};

// Ties are broken towards the lowest batch index.
inline MiningOutcome mine_negative(const DistanceMatrix& d, std::span<const WorkLabel> labels, std::size_t anchor,
                                   std::size_t positive) {
  require(labels.size() == d.n, ErrorKind::kShape, "mining: label count does not match distance matrix");
  require(anchor < d.n && positive < d.n, ErrorKind::kInvalidInput, "mining: index out of range");
  require(anchor != positive, ErrorKind::kInvalidInput, "mining: anchor and positive must differ");
  require(labels[anchor] == labels[positive], ErrorKind::kInvalidInput, "mining: positive is not a cover of the anchor");

  MiningOutcome out;
  out.anchor = anchor;
  out.positive = positive;
  out.d_ap = d(anchor, positive);

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t semi_hard = kNone, closest = kNone;
  for (std::size_t n = 0; n < d.n; ++n) {
    if (labels[n] == labels[anchor]) continue;
    const double dn = d(anchor, n);
    if (dn < out.d_ap && (semi_hard == kNone || dn > d(anchor, semi_hard))) semi_hard = n;
    if (closest == kNone || dn < d(anchor, closest)) closest = n;
  }
  if (closest == kNone) fail(ErrorKind::kMining, "batch holds a single work; no negative available");
  out.kind = semi_hard != kNone ? NegativeKind::kSemiHard : NegativeKind::kEasiestHard;
  out.negative = semi_hard != kNone ? semi_hard : closest;
  out.d_an = d(anchor, out.negative);
  return out;
}

template <typename T>
struct TripletLossResult {
  double loss = 0.0;
  nn::Tensor<T> gradient;  // d loss / d embeddings, [B, E]
  std::vector<MiningOutcome> triplets;
  std::size_t active = 0;  // triplets with a positive hinge

  double active_fraction() const {
    return triplets.empty() ? 0.0 : static_cast<double>(active) / static_cast<double>(triplets.size());
  }
};

// Mean over all (anchor, positive) pairs of max(0, d_ap + margin - d_an).
template <typename T>
TripletLossResult<T> batch_triplet_loss(const nn::Tensor<T>& embeddings, std::span<const WorkLabel> labels,
                                        double margin) {
  require(margin > 0.0, ErrorKind::kConfig, "triplet margin must be positive");
  require(embeddings.rank() == 2 && embeddings.dim(0) == labels.size(), ErrorKind::kShape,
          "triplet loss: embeddings and labels disagree on batch size");
  const std::size_t b = embeddings.dim(0), e = embeddings.dim(1);
  const DistanceMatrix d = pairwise_sq_distances(embeddings);

  TripletLossResult<T> result;
  result.gradient = nn::Tensor<T>(embeddings.shape());
  for (std::size_t a = 0; a < b; ++a) {
    bool has_positive = false;
    for (std::size_t p = 0; p < b; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      has_positive = true;
      result.triplets.push_back(mine_negative(d, labels, a, p));
    }
    require(has_positive, ErrorKind::kMining, "track " + std::to_string(a) + " has no cover in the batch");
  }

  const double scale = 1.0 / static_cast<double>(result.triplets.size());
  double total = 0.0;
  std::vector<double> grad(b * e, 0.0);
  for (const auto& t : result.triplets) {
    const double hinge = t.d_ap + margin - t.d_an;
    if (hinge <= 0.0) continue;
    total += hinge;
    ++result.active;
    // d(d_ap)/dv_a = 2(v_a - v_p), d(d_an)/dv_a = 2(v_a - v_n)
    for (std::size_t k = 0; k < e; ++k) {
      const double va = embeddings[t.anchor * e + k];
      const double vp = embeddings[t.positive * e + k];
      const double vn = embeddings[t.negative * e + k];
      grad[t.anchor * e + k] += 2.0 * scale * (vn - vp);
      grad[t.positive * e + k] += 2.0 * scale * (vp - va);
      grad[t.negative * e + k] += 2.0 * scale * (va - vn);
    }
  }
  result.loss = total * scale;
  for (std::size_t i = 0; i < grad.size(); ++i) result.gradient[i] = static_cast<T>(grad[i]);
  return result;
}

}  // namespace mcover

#endif  // MCOVER_TRIPLET_HPP
