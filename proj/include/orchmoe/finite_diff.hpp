#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "orchmoe/errors.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

// Central-difference gradient estimate, one coordinate at a time. The
// callable must not retain references to the probe tensor.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step h must be positive");
  Tensor probe = Tensor::from(x.rows(), x.cols(), x.data());
  Tensor out = Tensor::zeros(x.rows(), x.cols());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double fp = f(probe);
    probe.data()[i] = orig - h;
    const double fm = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericalError("finite_diff_grad: non-finite evaluation at coordinate " +
                           std::to_string(i));
    out.data()[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

// Relative error with a unit floor: behaves like absolute error for small
// gradients and relative error for large ones.
inline double rel_error(double a, double b) {
  const double denom = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i]));
  return worst;
}

// One gradient check: a parameter point plus a loss builder. The builder
// receives a leaf already attached to a fresh tape and returns the scalar
// loss; the same builder evaluated without a tape provides the numeric side.
struct GradCheckCase {
  std::string name;
  Tensor x0;
  std::function<Tensor(Tensor&)> loss;
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline GradCheckResult run_grad_check(const GradCheckCase& c, double h = 1e-5,
                                      double tol = 1e-4) {
  // analytic side
  GradTape tape;
  Tensor param = Tensor::from(c.x0.rows(), c.x0.cols(), c.x0.data());
  param.attach(tape);
  param.zero_grad();
  Tensor l = c.loss(param);
  backward(l);
  std::vector<double> analytic = param.grad();

  // numeric side: same builder, untracked probe
  auto value = [&](const Tensor& x) {
    Tensor p = Tensor::from(x.rows(), x.cols(), x.data());
    return c.loss(p).item();
  };
  Tensor numeric = finite_diff_grad(value, c.x0, h);

  GradCheckResult r;
  r.name = c.name;
  r.max_rel_err = max_rel_error(analytic, numeric.data());
  r.pass = r.max_rel_err < tol;
  return r;
}

}  // namespace orchmoe
