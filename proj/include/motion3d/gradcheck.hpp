#pragma once

// Central finite-difference verification of tape gradients (64-bit only).

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "motion3d/autodiff.hpp"

namespace motion3d {

/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace detail {

inline void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractError("grad_check: eps " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  }
}

template <class F>
double scalar_of(F& f, Tape<double>& tape) {
  Var<double> y = f(tape);
  if (y.value().numel() != 1) {
    throw ContractError("grad_check: function output has shape " + y.shape().str() + ", not scalar");
  }
  return y.value()[0];
}

/// Central difference of eval at x0. On a smooth stretch the second
/// difference (f(x0+s) - 2 f(x0) + f(x0-s)) / s halves with s; it is compared
/// across s = h, h/2, h/4, since one pair alone misses a kink at a particular
/// offset. When the halving fails, a ReLU or max-pool switch lies inside the
/// stencil and h shrinks by 10, down to 1e-7.
template <class E>
double central_slope(E&& eval, double x0, double eps) {
  const double f0 = eval(x0);
  const double roundoff = 64 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0));
  double h = eps;
  for (;;) {
    double fp[3], fm[3], bend[3];
    for (int k = 0; k < 3; ++k) {
      const double s = h / (1 << k);
      fp[k] = eval(x0 + s);
      fm[k] = eval(x0 - s);
      bend[k] = (fp[k] - 2 * f0 + fm[k]) / s;
    }
    bool smooth = true;
    for (int k = 0; k < 2; ++k) {
      const double s = h / (1 << k);
      smooth = smooth && std::abs(bend[k] - 2 * bend[k + 1]) <= 0.02 * std::abs(bend[k]) + roundoff / s;
    }
    if (smooth || h <= 1.5e-7) return (fp[0] - fm[0]) / (2 * h);
    h /= 10;
  }
}

}  // namespace detail

/// Max relative error between the tape gradient of the scalar function
/// f(tape, x) and its central difference, over all coordinates of x.
template <class F>
double grad_check(F&& f, const Tensor<double>& x, double eps = 1e-6) {
  detail::check_eps(eps);
  Tape<double> tape;
  Var<double> xv = tape.leaf(x);
  Var<double> y = f(tape, xv);
  if (y.value().numel() != 1) {
    throw ContractError("grad_check: function output has shape " + y.shape().str() + ", not scalar");
  }
  tape.backward(y);
  const Tensor<double> analytic = tape.grad(xv);

  double worst = 0;
  Tensor<double> probe = x;
  for (Index i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    auto eval = [&](double v) {
      probe[i] = v;
      Tape<double> t(false);
      auto g = [&](Tape<double>& tp) { return f(tp, tp.constant(probe)); };
      return detail::scalar_of(g, t);
    };
    const double numeric = detail::central_slope(eval, orig, eps);
    probe[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

/// Same check with respect to every coordinate of a set of parameters.
/// `loss(tape)` must bind the parameters itself via tape.param().
template <class F>
double grad_check_params(F&& loss, std::span<Parameter<double>* const> params, double eps = 1e-6) {
  detail::check_eps(eps);
  {
    Tape<double> tape;
    Var<double> y = loss(tape);
    if (y.value().numel() != 1) {
      throw ContractError("grad_check: loss has shape " + y.shape().str() + ", not scalar");
    }
    for (Parameter<double>* p : params) tape.param(*p);  // unreachable ones get zero grads
    tape.backward(y);
  }
  double worst = 0;
  for (Parameter<double>* p : params) {
    const Tensor<double> analytic = p->grad;
    for (Index i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value[i];
      auto eval = [&](double v) {
        p->value[i] = v;
        Tape<double> t(false);
        return detail::scalar_of(loss, t);
      };
      const double numeric = detail::central_slope(eval, orig, eps);
      p->value[i] = orig;
      worst = std::max(worst, relative_error(analytic[i], numeric));
    }
  }
  return worst;
}

}  // namespace motion3d
