#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "keap/errors.hpp"
#include "keap/rng.hpp"
#include "keap/tensor.hpp"

namespace keap {

// Symmetric ground-truth contacts and predicted probabilities for one protein.
struct ContactMap {
  std::size_t length = 0;
  BoolMat truth;                // [L, L]
  std::vector<double> prob;     // [L, L] row-major

  explicit ContactMap(std::size_t l = 0)
      : length(l), truth(l, l, false), prob(l * l, 0.0) {}

  double prob_at(std::size_t i, std::size_t j) const { return prob[i * length + j]; }
  void set_prob(std::size_t i, std::size_t j, double v) {
    prob[i * length + j] = v;
    prob[j * length + i] = v;
  }
  void set_contact(std::size_t i, std::size_t j) {
    truth.set(i, j, true);
    truth.set(j, i, true);
  }
};

// Sequence-separation buckets: short [6,12), medium [12,24), long [24,inf).
enum class RangeBucket { kShort, kMedium, kLong };

inline std::string bucket_name(RangeBucket b) {
  switch (b) {
    case RangeBucket::kShort: return "short";
    case RangeBucket::kMedium: return "medium";
    case RangeBucket::kLong: return "long";
  }
  throw ConfigError("unknown bucket enum");
}

inline bool bucket_contains(RangeBucket b, std::size_t separation) {
  switch (b) {
    case RangeBucket::kShort: return separation >= 6 && separation < 12;
    case RangeBucket::kMedium: return separation >= 12 && separation < 24;
    case RangeBucket::kLong: return separation >= 24;
  }
  return false;
}

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::map<std::string, std::string> params;
  std::string fingerprint;
};

// Precision over the floor(L/divisor) highest-probability upper-triangle
// pairs inside the bucket; ties broken by (i,j) lexicographic order.
// Returns nullopt when the bucket holds no pairs (undefined, distinct from 0).
inline std::optional<double> precision_at_k(const ContactMap& map, RangeBucket bucket,
                                            std::size_t divisor) {
  if (divisor == 0) throw ConfigError("precision_at_k: divisor must be positive");
  const std::size_t l = map.length;
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = i + 1; j < l; ++j)
      if (bucket_contains(bucket, j - i)) pairs.emplace_back(map.prob_at(i, j), i, j);
  if (pairs.empty()) return std::nullopt;
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  const std::size_t k = std::min(l / divisor, pairs.size());
  if (k == 0) return std::nullopt;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < k; ++t)
    if (map.truth.at(std::get<1>(pairs[t]), std::get<2>(pairs[t]))) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

// Micro-averaged F1 over all (sample, label) decisions; 0/0 counts as 0.
// Set micro=false for the macro average over labels.
inline double multilabel_f1(const BoolMat& pred, const BoolMat& truth, bool micro = true) {
  if (pred.rows != truth.rows || pred.cols != truth.cols)
    throw ShapeError("multilabel_f1: " + std::to_string(pred.rows) + "x" +
                     std::to_string(pred.cols) + " vs " + std::to_string(truth.rows) + "x" +
                     std::to_string(truth.cols));
  auto f1_of = [](std::size_t tp, std::size_t fp, std::size_t fn) {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  };
  if (micro) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
      if (pred.v[i] && truth.v[i]) ++tp;
      else if (pred.v[i]) ++fp;
      else if (truth.v[i]) ++fn;
    }
    return f1_of(tp, fp, fn);
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < pred.cols; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t r = 0; r < pred.rows; ++r) {
      if (pred.at(r, c) && truth.at(r, c)) ++tp;
      else if (pred.at(r, c)) ++fp;
      else if (truth.at(r, c)) ++fn;
    }
    sum += f1_of(tp, fp, fn);
  }
  return pred.cols == 0 ? 0.0 : sum / static_cast<double>(pred.cols);
}

// Fractional (average) ranks with ties averaged.
inline std::vector<double> fractional_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

// Pearson correlation of fractional ranks; nullopt when either side has zero
// rank variance.
inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ContractError("spearman: need two equally sized lists of length >= 2");
  const std::vector<double> rx = fractional_ranks(x);
  const std::vector<double> ry = fractional_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// 1 - L1(u, v) / normalizer.
inline double manhattan_similarity(const std::vector<double>& u, const std::vector<double>& v,
                                   double normalizer) {
  if (u.size() != v.size()) throw ShapeError("manhattan_similarity: length mismatch");
  if (!(normalizer > 0.0)) throw ContractError("manhattan_similarity: normalizer must be positive");
  double dist = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dist += std::abs(u[i] - v[i]);
  return 1.0 - dist / normalizer;
}

inline double manhattan_distance(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw ShapeError("manhattan_distance: length mismatch");
  double dist = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dist += std::abs(u[i] - v[i]);
  return dist;
}

inline double mse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw ContractError("mse: need two equally sized nonempty lists");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// ridge-regression k-fold protocol
// ---------------------------------------------------------------------------

// Solves (X^T X + lambda I) w = X^T y by Gaussian elimination with partial
// pivoting; a constant feature is appended for the intercept.
inline std::vector<double> fit_ridge(const std::vector<std::vector<double>>& features,
                                     const std::vector<double>& targets, double lambda = 1e-3) {
  if (features.empty() || features.size() != targets.size())
    throw ContractError("fit_ridge: feature/target size mismatch");
  const std::size_t d = features[0].size() + 1;
  std::vector<double> a(d * d, 0.0), b(d, 0.0);
  for (std::size_t s = 0; s < features.size(); ++s) {
    std::vector<double> row(features[s]);
    row.push_back(1.0);
    for (std::size_t i = 0; i < d; ++i) {
      b[i] += row[i] * targets[s];
      for (std::size_t j = 0; j < d; ++j) a[i * d + j] += row[i] * row[j];
    }
  }
  for (std::size_t i = 0; i + 1 < d; ++i) a[i * d + i] += lambda;  // no penalty on intercept
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(a[r * d + col]) > std::abs(a[piv * d + col])) piv = r;
    if (piv != col) {
      for (std::size_t j = 0; j < d; ++j) std::swap(a[col * d + j], a[piv * d + j]);
      std::swap(b[col], b[piv]);
    }
    const double diag = a[col * d + col];
    if (std::abs(diag) < 1e-12) throw NumericError("fit_ridge: singular normal matrix");
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double f = a[r * d + col] / diag;
      for (std::size_t j = col; j < d; ++j) a[r * d + j] -= f * a[col * d + j];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> w(d);
  for (std::size_t i = 0; i < d; ++i) w[i] = b[i] / a[i * d + i];
  return w;
}

inline double ridge_predict(const std::vector<double>& w, const std::vector<double>& x) {
  double acc = w.back();
  for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i];
  return acc;
}

struct KFoldResult {
  double mean_mse = 0.0;
  std::vector<double> fold_mse;
};

// Deterministic k-fold split by seed; fits the ridge probe per fold and
// reports the mean held-out MSE.
inline KFoldResult kfold_mse(const std::vector<std::vector<double>>& features,
                             const std::vector<double>& targets, std::size_t k,
                             std::uint64_t seed, double lambda = 1e-3) {
  if (features.size() != targets.size())
    throw ContractError("kfold_mse: feature/target size mismatch");
  if (k < 2 || k > features.size())
    throw ConfigError("kfold_mse: k=" + std::to_string(k) + " out of range for " +
                      std::to_string(features.size()) + " samples");
  std::vector<std::size_t> order(features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  KFoldResult result;
  const std::size_t base = features.size() / k;
  const std::size_t extra = features.size() % k;
  std::size_t start = 0;
  for (std::size_t fold = 0; fold < k; ++fold) {
    const std::size_t size = base + (fold < extra ? 1 : 0);
    std::vector<std::vector<double>> train_x, test_x;
    std::vector<double> train_y, test_y;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const bool in_test = i >= start && i < start + size;
      (in_test ? test_x : train_x).push_back(features[order[i]]);
      (in_test ? test_y : train_y).push_back(targets[order[i]]);
    }
    const std::vector<double> w = fit_ridge(train_x, train_y, lambda);
    std::vector<double> preds(test_x.size());
    for (std::size_t i = 0; i < test_x.size(); ++i) preds[i] = ridge_predict(w, test_x[i]);
    result.fold_mse.push_back(mse(preds, test_y));
    start += size;
  }
  for (const double v : result.fold_mse) result.mean_mse += v;
  result.mean_mse /= static_cast<double>(k);
  return result;
}

}  // namespace keap
