#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "orchmoe/errors.hpp"
#include "orchmoe/rng.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

// One skill module: a rank-r update to a d x d projection, factored as
// down (d x r) times up (r x d).
struct LoraAdapter {
  Tensor down;  // d x r
  Tensor up;    // r x d
  std::size_t dim = 0;
  std::size_t rank = 0;

  // Dense d x d update matrix down * up.
  Tensor delta() const { return matmul(down, up); }
};

// down ~ Gaussian(0, 1/d), up = 0, so the initial update is exactly zero and
// the layer starts as the frozen base projection.
inline LoraAdapter init_adapter(std::size_t d, std::size_t r, std::uint64_t seed) {
  if (r < 1 || r >= d)
    throw ContractError("init_adapter: rank " + std::to_string(r) +
                        " must satisfy 1 <= r < d = " + std::to_string(d));
  LoraAdapter a;
  a.dim = d;
  a.rank = r;
  a.down = Tensor::zeros(d, r);
  a.up = Tensor::zeros(r, d);
  std::mt19937_64 eng = make_engine(seed, 0x6c6f7261);  // per-adapter stream
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (double& v : a.down.data()) v = gauss(eng);
  return a;
}

// x (n x d) -> x * w0^T + x * up^T * down^T, identical to x * (w0 + delta)^T
// but computed through the two skinny factors.
inline Tensor lora_forward(const Tensor& x, const Tensor& w0, const LoraAdapter& adapter) {
  if (x.cols() != w0.rows() || w0.rows() != w0.cols())
    throw ShapeError("lora_forward: input " + detail::shape_str(*x.node()) +
                     " does not match base " + detail::shape_str(*w0.node()));
  if (adapter.down.rows() != w0.rows())
    throw ShapeError("lora_forward: adapter dim " + std::to_string(adapter.down.rows()) +
                     " does not match base " + detail::shape_str(*w0.node()));
  Tensor base = matmul(x, transpose(w0));
  Tensor mid = matmul(x, transpose(adapter.up));      // n x r
  Tensor update = matmul(mid, transpose(adapter.down));  // n x d
  return add(base, update);
}

// Dense weighted merge: sum_i w_i * down_i * up_i.
inline Tensor merge_adapters(const std::vector<LoraAdapter>& adapters,
                             const std::vector<double>& weights) {
  if (adapters.empty()) throw ContractError("merge_adapters: empty adapter list");
  if (adapters.size() != weights.size())
    throw ContractError("merge_adapters: " + std::to_string(adapters.size()) + " adapters vs " +
                        std::to_string(weights.size()) + " weights");
  const std::size_t d = adapters.front().dim;
  Tensor merged = Tensor::zeros(d, d);
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    if (adapters[i].dim != d)
      throw ShapeError("merge_adapters: adapter " + std::to_string(i) + " has dim " +
                       std::to_string(adapters[i].dim) + ", expected " + std::to_string(d));
    Tensor delta = adapters[i].delta();
    for (std::size_t j = 0; j < merged.size(); ++j)
      merged.data()[j] += weights[i] * delta.data()[j];
  }
  return merged;
}

}  // namespace orchmoe
