// Dense NHWC tensors with a gradient slot, Adam parameter updates, the L1
// training loss and central-finite-difference gradient verification. All
// arithmetic is double precision; every op is deterministic given its inputs.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rawsim/errors.hpp"

namespace rawsim::nn {

struct Tensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<double> v;
  std::vector<double> g;  // sized lazily; empty means "no gradient yet"

  Tensor() = default;
  Tensor(int n_, int h_, int w_, int c_)
      : n(n_), h(h_), w(w_), c(c_), v(static_cast<size_t>(n_) * h_ * w_ * c_, 0.0) {}

  size_t size() const { return v.size(); }
  size_t index(int in, int ih, int iw, int ic) const {
    return ((static_cast<size_t>(in) * h + ih) * w + iw) * c + ic;
  }
  double& at(int in, int ih, int iw, int ic) { return v[index(in, ih, iw, ic)]; }
  double at(int in, int ih, int iw, int ic) const { return v[index(in, ih, iw, ic)]; }

  bool same_shape(const Tensor& o) const {
    return n == o.n && h == o.h && w == o.w && c == o.c;
  }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
  void zero_grad() { g.assign(v.size(), 0.0); }
};

// A trainable tensor plus its optimizer state.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> m1;  // first moment
  std::vector<double> m2;  // second moment
  long step = 0;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_) : name(std::move(name_)), value(std::move(value_)) {
    m1.assign(value.size(), 0.0);
    m2.assign(value.size(), 0.0);
    value.ensure_grad();
  }

  void zero_grad() { value.zero_grad(); }
};

// Bias-corrected Adam update. Gradients must have been populated by a
// backward pass; the step count advances even for zero gradients.
inline void adam_step(std::span<Parameter* const> params, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  for (Parameter* p : params) {
    if (p->value.g.size() != p->value.v.size()) {
      throw StateError("adam_step: parameter '" + p->name + "' has no gradient");
    }
    p->step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p->step));
    for (size_t i = 0; i < p->value.v.size(); ++i) {
      const double grad = p->value.g[i];
      p->m1[i] = beta1 * p->m1[i] + (1.0 - beta1) * grad;
      p->m2[i] = beta2 * p->m2[i] + (1.0 - beta2) * grad * grad;
      const double mhat = p->m1[i] / bc1;
      const double vhat = p->m2[i] / bc2;
      p->value.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DimensionError("add_inplace: shape mismatch");
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

inline void scale_inplace(Tensor& a, double s) {
  for (double& v : a.v) v *= s;
}

// Mean absolute error. With smooth_eps > 0 the kink is rounded to
// sqrt(d^2 + eps^2), which keeps finite-difference checks meaningful;
// training uses the exact absolute value (subgradient 0 at 0). When
// grad_pred is given it is overwritten with dLoss/dPred (plain values).
inline double l1_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred = nullptr,
                      double smooth_eps = 0.0) {
  if (!pred.same_shape(target)) throw DimensionError("l1_loss: shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  if (grad_pred) *grad_pred = Tensor(pred.n, pred.h, pred.w, pred.c);
  double total = 0.0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const double d = pred.v[i] - target.v[i];
    if (smooth_eps > 0.0) {
      const double s = std::sqrt(d * d + smooth_eps * smooth_eps);
      total += s;
      if (grad_pred) grad_pred->v[i] = (d / s) * inv_n;
    } else {
      total += std::abs(d);
      if (grad_pred) grad_pred->v[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv_n;
    }
  }
  return total * inv_n;
}

struct GradientCheckOptions {
  double delta = 1e-5;
  // 0 checks every component; otherwise this many components are sampled per
  // parameter (deterministically) so large nets stay affordable.
  int samples_per_parameter = 0;
  std::uint64_t seed = 0;
  // Floor of the relative-error denominator. Central differences cannot
  // resolve gradients below roughly eps * |loss| / delta (~1e-11 for unit
  // losses); deep composites should raise the floor to that resolution so
  // roundoff on negligible components is not reported as disagreement.
  double denominator_floor = 1e-12;
};

// Compares analytic gradients against central finite differences.
//   loss_backward: runs forward+backward once and must populate grads.
//   loss_only: evaluates the same scalar loss without touching grads.
// Returns the max over checked components of
//   |analytic - cd| / max(|analytic|, |cd|, 1e-12).
inline double gradient_check(const std::function<double()>& loss_backward,
                             const std::function<double()>& loss_only,
                             std::span<Parameter* const> params,
                             const GradientCheckOptions& opts = {}) {
  for (Parameter* p : params) p->zero_grad();
  const double base = loss_backward();
  if (!std::isfinite(base)) throw NumericError("gradient_check: non-finite loss");
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->value.g);

  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    std::vector<size_t> idx;
    const size_t count = p->value.size();
    if (opts.samples_per_parameter <= 0 ||
        static_cast<size_t>(opts.samples_per_parameter) >= count) {
      idx.resize(count);
      for (size_t i = 0; i < count; ++i) idx[i] = i;
    } else {
      std::uniform_int_distribution<size_t> pick(0, count - 1);
      for (int i = 0; i < opts.samples_per_parameter; ++i) idx.push_back(pick(rng));
    }
    for (size_t i : idx) {
      const double saved = p->value.v[i];
      p->value.v[i] = saved + opts.delta;
      const double up = loss_only();
      p->value.v[i] = saved - opts.delta;
      const double down = loss_only();
      p->value.v[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("gradient_check: non-finite perturbed loss");
      }
      const double cd = (up - down) / (2.0 * opts.delta);
      const double a = analytic[pi][i];
      const double rel =
          std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), opts.denominator_floor});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace rawsim::nn
