#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msdml/error.hpp"

namespace msdml {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Squared Euclidean distances between the rows of `e`.
template <typename Derived>
auto pairwise_sq_distances(const Eigen::MatrixBase<Derived>& e) {
  using T = typename Derived::Scalar;
  require<UsageError>(e.rows() > 0, "pairwise distances of an empty embedding set");
  const Eigen::Index n = e.rows();
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = T(0);
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (e.row(i) - e.row(j)).squaredNorm();
  }
  return d;
}

enum class Hardness { hard, semi_hard, satisfied };

inline const char* to_string(Hardness h) {
  switch (h) {
    case Hardness::hard: return "hard";
    case Hardness::semi_hard: return "semi-hard";
    default: return "satisfied";
  }
}

// Hard when d_an <= d_ap, semi-hard when d_ap < d_an < d_ap + alpha, else
// satisfied. Distances are Euclidean (not squared).
inline Hardness classify_triplet(double d_ap, double d_an, double alpha) {
  require<UsageError>(d_ap >= 0.0 && d_an >= 0.0, "triplet distances must be non-negative");
  require<UsageError>(alpha > 0.0, "margin must be positive");
  if (d_an <= d_ap) return Hardness::hard;
  if (d_an < d_ap + alpha) return Hardness::semi_hard;
  return Hardness::satisfied;
}

struct Triplet {
  int anchor = 0;
  int positive = 0;
  int negative = 0;
  double d_ap = 0.0;
  double d_an = 0.0;
  Hardness hardness = Hardness::satisfied;
};

// Online semi-hard mining: for every ordered same-class (anchor, positive)
// pair, one negative drawn uniformly from the semi-hard candidates (if any).
template <typename Derived>
std::vector<Triplet> mine_semi_hard(const Eigen::MatrixBase<Derived>& embeddings, std::span<const int> labels,
                                    double alpha, std::mt19937_64& rng) {
  require<ShapeError>(static_cast<Eigen::Index>(labels.size()) == embeddings.rows(), "labels and embeddings differ in count");
  std::vector<Triplet> out;
  if (embeddings.rows() == 0) return out;
  const auto sq = pairwise_sq_distances(embeddings);
  const int n = static_cast<int>(labels.size());
  std::vector<int> candidates;
  for (int a = 0; a < n; ++a) {
    for (int p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double d_ap = std::sqrt(static_cast<double>(sq(a, p)));
      candidates.clear();
      for (int k = 0; k < n; ++k) {
        if (labels[k] == labels[a]) continue;
        const double d_an = std::sqrt(static_cast<double>(sq(a, k)));
        if (classify_triplet(d_ap, d_an, alpha) == Hardness::semi_hard) candidates.push_back(k);
      }
      if (candidates.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      const int k = candidates[pick(rng)];
      out.push_back({a, p, k, d_ap, std::sqrt(static_cast<double>(sq(a, k))), Hardness::semi_hard});
    }
  }
  return out;
}

// Splits mined triplets into consecutive groups of at most `cap`.
inline std::vector<std::vector<Triplet>> group_triplets(const std::vector<Triplet>& triplets, std::size_t cap) {
  require<UsageError>(cap >= 1, "triplet batch cap must be at least 1");
  std::vector<std::vector<Triplet>> groups;
  for (std::size_t i = 0; i < triplets.size(); i += cap)
    groups.emplace_back(triplets.begin() + static_cast<std::ptrdiff_t>(i),
                        triplets.begin() + static_cast<std::ptrdiff_t>(std::min(i + cap, triplets.size())));
  return groups;
}

// L = sum_i max(|a_i - p_i|^2 - |a_i - n_i|^2 + alpha, 0). When `grad` is
// given it receives dL/d(embeddings) with the same shape as `embeddings`.
template <typename T>
T triplet_loss(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& embeddings, std::span<const Triplet> triplets,
               double alpha, Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>* grad = nullptr) {
  if (grad != nullptr) grad->setZero(embeddings.rows(), embeddings.cols());
  T loss = 0;
  for (const auto& t : triplets) {
    const auto a = embeddings.row(t.anchor);
    const auto p = embeddings.row(t.positive);
    const auto n = embeddings.row(t.negative);
    const T term = (a - p).squaredNorm() - (a - n).squaredNorm() + static_cast<T>(alpha);
    if (term <= T(0)) continue;
    loss += term;
    if (grad != nullptr) {
      grad->row(t.anchor) += T(2) * (n - p);
      grad->row(t.positive) += T(2) * (p - a);
      grad->row(t.negative) += T(2) * (a - n);
    }
  }
  return loss;
}

// Dynamic margin schedule. After three consecutive counts below `thresh`
// (counted since the last increment) alpha grows by `step`, clamped at `cap`.
struct MarginState {
  double alpha_init = 0.2;
  double alpha_step = 0.05;
  double alpha_cap = 0.6;
  int thresh = 15;
  int increments = 0;
  std::size_t window_start = 0;
  std::vector<long> count_list;
  double alpha = 0.2;

  static MarginState initial(double init = 0.2, double step = 0.05, double cap = 0.6, int thresh = 15) {
    MarginState s;
    s.alpha_init = init;
    s.alpha_step = step;
    s.alpha_cap = cap;
    s.thresh = thresh;
    s.alpha = init;
    return s;
  }

  bool at_cap() const { return alpha >= alpha_cap; }
};

inline MarginState scheduler_update(MarginState s, long t) {
  require<UsageError>(t >= 0, "mined count must be non-negative");
  s.count_list.push_back(t);
  const std::size_t window = s.count_list.size() - s.window_start;
  if (window >= 3 && s.alpha < s.alpha_cap) {
    const auto n = s.count_list.size();
    if (s.count_list[n - 1] < s.thresh && s.count_list[n - 2] < s.thresh && s.count_list[n - 3] < s.thresh) {
      ++s.increments;
      s.alpha = std::min(s.alpha_init + s.alpha_step * s.increments, s.alpha_cap);
      s.window_start = n;
    }
  }
  return s;
}

// Example indices of one mini-batch, grouped by class.
struct BatchPlan {
  std::map<int, std::vector<int>> by_class;

  std::vector<int> indices() const {
    std::vector<int> out;
    for (const auto& [cls, idx] : by_class) out.insert(out.end(), idx.begin(), idx.end());
    return out;
  }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [cls, idx] : by_class) n += idx.size();
    return n;
  }
};

// Draws exactly `per_class` examples of every class: without replacement when
// the class is large enough, with replacement otherwise.
inline BatchPlan build_minibatch(std::span<const int> labels, std::mt19937_64& rng, int per_class = 5) {
  require<DataError>(!labels.empty(), "cannot build a mini-batch from an empty dataset");
  require<UsageError>(per_class >= 1, "per-class count must be at least 1");
  std::map<int, std::vector<int>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<int>(i));
  BatchPlan plan;
  for (auto& [cls, idx] : members) {
    auto& chosen = plan.by_class[cls];
    if (static_cast<int>(idx.size()) >= per_class) {
      std::vector<int> pool = idx;
      std::shuffle(pool.begin(), pool.end(), rng);
      chosen.assign(pool.begin(), pool.begin() + per_class);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
      for (int k = 0; k < per_class; ++k) chosen.push_back(idx[pick(rng)]);
    }
  }
  return plan;
}

}  // namespace msdml
