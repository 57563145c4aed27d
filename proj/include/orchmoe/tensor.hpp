#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "orchmoe/errors.hpp"

namespace orchmoe {

class GradTape;

namespace detail {

struct Node {
  std::vector<std::size_t> shape;  // {rows, cols}, row-major storage
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  GradTape* tape = nullptr;

  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  std::size_t size() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline std::string shape_str(const Node& n) {
  return std::to_string(n.rows()) + "x" + std::to_string(n.cols());
}

}  // namespace detail

// Reverse-mode tape. Ops append one entry per executed forward op; backward
// replays the entries once, in reverse execution order.
class GradTape {
 public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

  std::size_t size() const { return entries_.size(); }

  void replay_reverse() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void clear() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

// Dense 2-D tensor of doubles with value semantics on the handle. Copies of
// a Tensor share the same underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    Tensor t;
    t.n_ = std::make_shared<detail::Node>();
    t.n_->shape = {rows, cols};
    t.n_->value.assign(rows * cols, 0.0);
    return t;
  }

  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> data) {
    if (data.size() != rows * cols)
      throw ContractError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    Tensor t = zeros(rows, cols);
    t.n_->value = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return from(1, 1, {v}); }

  bool defined() const { return n_ != nullptr; }
  std::size_t rows() const { return n_->rows(); }
  std::size_t cols() const { return n_->cols(); }
  std::size_t size() const { return n_->size(); }
  const std::vector<std::size_t>& shape() const { return n_->shape; }

  double at(std::size_t r, std::size_t c) const { return n_->value[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return n_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + detail::shape_str(*n_));
    return n_->value[0];
  }

  const std::vector<double>& data() const { return n_->value; }
  std::vector<double>& data() { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  GradTape* tape() const { return n_->tape; }

  // Marks a leaf as trainable and registers it on the tape. Gradients
  // accumulate into grad() until zero_grad().
  void attach(GradTape& tape) {
    n_->tape = &tape;
    n_->requires_grad = true;
  }

  void detach() {
    n_->tape = nullptr;
    n_->requires_grad = false;
  }

  const std::vector<double>& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad.size() == n_->size(); }
  void zero_grad() { n_->grad.assign(n_->size(), 0.0); }

  detail::Node* node() const { return n_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

namespace detail {

// The tape an op records on: the unique live tape among its inputs.
inline GradTape* merge_tapes(std::initializer_list<const Tensor*> inputs) {
  GradTape* t = nullptr;
  for (const Tensor* in : inputs) {
    GradTape* it = in->node()->tape;
    if (!it) continue;
    if (t && t != it) throw ContractError("inputs belong to different gradient tapes");
    t = it;
  }
  return t;
}

inline bool any_requires(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* in : inputs)
    if (in->node()->requires_grad) return true;
  return false;
}

// Marks `out` as tracked and records the adjoint closure when any input is
// tracked. The closure runs only if the output's grad was ever touched.
template <typename Fn>
void track(Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& backward) {
  GradTape* t = merge_tapes(inputs);
  if (!t || !any_requires(inputs)) return;
  out.node()->tape = t;
  out.node()->requires_grad = true;
  auto keep = out.node_ptr();  // keep the output alive for the replay
  t->record([keep, fn = std::forward<Fn>(backward)]() {
    if (keep->grad.size() != keep->value.size()) return;  // no downstream use
    fn(keep->grad);
  });
}

}  // namespace detail

// ---- forward ops with reverse-mode adjoints ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ, " + detail::shape_str(*a.node()) +
                     " vs " + detail::shape_str(*b.node()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) pc[i * n + j] += av * pb[l * n + j];
    }

  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  detail::track(out, {&a, &b}, [an, bn, m, k, n](const std::vector<double>& g) {
    if (an->requires_grad) {
      an->ensure_grad();  // dA += dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bn->value[l * n + j];
          an->grad[i * k + l] += s;
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();  // dB += A^T * dC
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i) s += an->value[i * k + l] * g[i * n + j];
          bn->grad[l * n + j] += s;
        }
    }
  });
  return out;
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  auto an = a.node_ptr();
  detail::track(out, {&a}, [an, m, n](const std::vector<double>& g) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g[j * m + i];
  });
  return out;
}

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(*a.node()) + " vs " +
                     shape_str(*b.node()));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  detail::track(out, {&a, &b}, [an, bn](const std::vector<double>& g) {
    for (auto* n : {an.get(), bn.get()}) {
      if (!n->requires_grad) continue;
      n->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
    }
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  detail::track(out, {&a, &b}, [an, bn](const std::vector<double>& g) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
    }
  });
  return out;
}

// Elementwise product.
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "hadamard");
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  detail::track(out, {&a, &b}, [an, bn](const std::vector<double>& g) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->value[i];
    }
  });
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = c * a.data()[i];
  auto an = a.node_ptr();
  detail::track(out, {&a}, [an, c](const std::vector<double>& g) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += c * g[i];
  });
  return out;
}

// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = a.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(a.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= sum;
  }
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  detail::track(out, {&a}, [an, on, m, n](const std::vector<double>& g) {
    if (!an->requires_grad) return;
    an->ensure_grad();  // dx = y .* (dy - <dy, y>) per row
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * on->value[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        an->grad[i * n + j] += on->value[i * n + j] * (g[i * n + j] - dot);
    }
  });
  return out;
}

// Numerically stable logistic function, branch per sign.
inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = sigmoid_scalar(a.data()[i]);
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  detail::track(out, {&a}, [an, on](const std::vector<double>& g) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = on->value[i];
      an->grad[i] += g[i] * y * (1.0 - y);
    }
  });
  return out;
}

// Mean over rows: [m x n] -> [1 x n].
inline Tensor mean_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(1, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(0, j) += a.at(i, j);
  for (std::size_t j = 0; j < n; ++j) out.at(0, j) /= static_cast<double>(m);
  auto an = a.node_ptr();
  detail::track(out, {&a}, [an, m, n](const std::vector<double>& g) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g[j] / static_cast<double>(m);
  });
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  auto an = a.node_ptr();
  detail::track(out, {&a}, [an](const std::vector<double>& g) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g[0];
  });
  return out;
}

// out = gates(0, idx) * mat. The gate entry participates in the graph, so
// gradients reach both the matrix and the selected gate.
inline Tensor scale_by_entry(const Tensor& mat, const Tensor& gates, std::size_t idx) {
  if (gates.rows() != 1 || idx >= gates.cols())
    throw ContractError("scale_by_entry: gate index " + std::to_string(idx) +
                        " out of range for " + detail::shape_str(*gates.node()));
  const double v = gates.at(0, idx);
  Tensor out = Tensor::zeros(mat.rows(), mat.cols());
  for (std::size_t i = 0; i < mat.size(); ++i) out.data()[i] = v * mat.data()[i];
  auto mn = mat.node_ptr();
  auto gn = gates.node_ptr();
  detail::track(out, {&mat, &gates}, [mn, gn, v, idx](const std::vector<double>& g) {
    if (mn->requires_grad) {
      mn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) mn->grad[i] += v * g[i];
    }
    if (gn->requires_grad) {
      gn->ensure_grad();
      double s = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * mn->value[i];
      gn->grad[idx] += s;
    }
  });
  return out;
}

// Single row as a [1 x n] view copy.
inline Tensor row(const Tensor& a, std::size_t i) {
  if (i >= a.rows())
    throw ContractError("row: index " + std::to_string(i) + " out of range for " +
                        detail::shape_str(*a.node()));
  const std::size_t n = a.cols();
  Tensor out = Tensor::zeros(1, n);
  for (std::size_t j = 0; j < n; ++j) out.at(0, j) = a.at(i, j);
  auto an = a.node_ptr();
  detail::track(out, {&a}, [an, i, n](const std::vector<double>& g) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g[j];
  });
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& rows_in) {
  if (rows_in.empty()) throw ContractError("concat_rows: empty input");
  const std::size_t n = rows_in.front().cols();
  std::size_t m = 0;
  for (const Tensor& r : rows_in) {
    if (r.cols() != n) throw ShapeError("concat_rows: column counts differ");
    m += r.rows();
  }
  Tensor out = Tensor::zeros(m, n);
  std::size_t at_row = 0;
  std::vector<const Tensor*> ptrs;
  for (const Tensor& r : rows_in) {
    for (std::size_t i = 0; i < r.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(at_row + i, j) = r.at(i, j);
    at_row += r.rows();
    ptrs.push_back(&r);
  }
  GradTape* t = nullptr;
  bool any = false;
  for (const Tensor* p : ptrs) {
    if (p->node()->tape) t = p->node()->tape;
    any = any || p->requires_grad();
  }
  if (t && any) {
    out.node()->tape = t;
    out.node()->requires_grad = true;
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const Tensor& r : rows_in) nodes.push_back(r.node_ptr());
    auto keep = out.node_ptr();
    t->record([keep, nodes, n]() {
      if (keep->grad.size() != keep->value.size()) return;
      std::size_t at = 0;
      for (auto& nd : nodes) {
        if (nd->requires_grad) {
          nd->ensure_grad();
          for (std::size_t i = 0; i < nd->value.size(); ++i) nd->grad[i] += keep->grad[at + i];
        }
        at += nd->value.size();
      }
    });
  }
  return out;
}

// Runs the adjoint sweep from a scalar loss. Gradients accumulate additively
// across fan-out; callers zero leaf grads between steps.
inline void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ContractError("backward: loss must be scalar, got " + detail::shape_str(*loss.node()));
  GradTape* t = loss.tape();
  if (!t) throw ContractError("backward: loss is not recorded on a tape");
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  t->replay_reverse();
}

}  // namespace orchmoe
