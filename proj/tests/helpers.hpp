#pragma once

#include <random>
#include <vector>

#include "orchmoe/tensor.hpp"

namespace testutil {

// Independent reference product, deliberately the naive triple loop.
inline orchmoe::Tensor matmul_oracle(const orchmoe::Tensor& a, const orchmoe::Tensor& b) {
  orchmoe::Tensor c = orchmoe::Tensor::zeros(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

inline orchmoe::Tensor rand_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& eng,
                                   double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  orchmoe::Tensor t = orchmoe::Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = dist(eng);
  return t;
}

inline double max_abs_diff(const orchmoe::Tensor& a, const orchmoe::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst;
}

inline double max_abs(const std::vector<double>& v) {
  double worst = 0.0;
  for (double x : v) worst = std::max(worst, std::fabs(x));
  return worst;
}

}  // namespace testutil
