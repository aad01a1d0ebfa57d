#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "keap/rng.hpp"
#include "keap/tensor.hpp"

namespace keap::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = false,
                                    double scale = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = (rng.uniform() * 2.0 - 1.0) * scale;
  return t;
}

inline Tensor<float> random_tensor_f(Shape shape, Rng& rng, bool requires_grad = false,
                                     float scale = 1.0f) {
  Tensor<float> t = Tensor<float>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<float>((rng.uniform() * 2.0 - 1.0) * scale);
  return t;
}

// Central-difference check of d(forward)/d(inputs) against one backward pass.
// forward must be a pure function of the current input values.
inline double max_grad_rel_err(const std::vector<Tensor<double>*>& inputs,
                               const std::function<Tensor<double>()>& forward,
                               double fd_step = 1e-6) {
  for (Tensor<double>* t : inputs) t->zero_grad();
  Graph<double> graph;
  {
    GraphScope<double> scope(graph);
    Tensor<double> loss = forward();
    graph.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor<double>* t : inputs) analytic.push_back(t->grad());

  double worst = 0.0;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    Tensor<double>& t = *inputs[which];
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + fd_step;
      const double up = forward().item();
      t.data()[i] = saved - fd_step;
      const double down = forward().item();
      t.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * fd_step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[which][i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic[which][i]) / denom);
    }
  }
  return worst;
}

// Independent triple-loop reference for the matrix product.
inline std::vector<double> matmul_reference(const std::vector<double>& a,
                                            const std::vector<double>& b, std::size_t m,
                                            std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a[i * k + p] * b[p * n + j];
  return out;
}

// 64-bit reference softmax of one row.
inline std::vector<double> softmax_reference(const std::vector<double>& logits) {
  double mx = logits[0];
  for (const double v : logits) mx = std::max(mx, v);
  std::vector<double> out(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) denom += (out[i] = std::exp(logits[i] - mx));
  for (auto& v : out) v /= denom;
  return out;
}

}  // namespace keap::testing
