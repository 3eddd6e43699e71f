#pragma once

// Finite-difference checks of every differentiable op and of each variant's
// total training loss, run at 64-bit on small random inputs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "motion3d/gradcheck.hpp"
#include "motion3d/networks.hpp"
#include "motion3d/ops3d.hpp"
#include "motion3d/train.hpp"

namespace motion3d {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  bool passed = false;
};

struct GradientSuiteConfig {
  double tolerance = 1e-4;
  double eps = 1e-4;
  Index draws = 3;  // random draws per elementary op
  std::uint64_t seed = 2024;
};

namespace suite_detail {

/// Values at least `gap` away from zero (ReLU kink).
inline Tensor<double> off_kink(Shape s, std::uint64_t seed, double gap = 1e-2) {
  Tensor<double> t(s, SeededNormal{seed, 1.0});
  for (double& v : t.data())
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  return t;
}

/// Shuffled distinct values (no near-ties for max pooling).
inline Tensor<double> distinct(Shape s, std::uint64_t seed) {
  Tensor<double> t(s);
  std::vector<double> v(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i);
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

/// Weighted sum with fixed random weights, turning any tensor into a scalar
/// loss whose gradient exercises every output coordinate.
inline Var<double> probe(const Var<double>& y, std::uint64_t seed) {
  Tape<double>& t = y.tape();
  const Index m = y.value().numel();
  return linear(reshape(y, Shape{1, m}), t.constant(Tensor<double>(Shape{1, m}, SeededNormal{seed, 1.0})),
                t.constant(Tensor<double>(Shape{1})));
}

/// Micro network for full-variant checks: clips (3, 4, 8, 8), 2-4 channels.
inline NetworkSpec micro_spec() {
  NetworkSpec s;
  s.base_conv_channels = {2, 3, 4, 4, 4};
  s.base_fc_width = 6;
  s.width_factor = 1.0;
  s.clip = {4, 8, 8};
  s.num_classes = 3;
  s.pools = {Extent3{1, 2, 2}, Extent3{2, 2, 2}, std::nullopt, std::nullopt, std::nullopt};
  return s;
}

}  // namespace suite_detail

/// Runs the whole suite; each entry is one named check.
inline std::vector<GradCheckResult> run_gradient_suite(const GradientSuiteConfig& cfg = {},
                                                       const std::function<void(const GradCheckResult&)>& on_result = {}) {
  using namespace suite_detail;
  std::vector<GradCheckResult> out;
  auto report = [&](const std::string& name, double err) {
    GradCheckResult r{name, err, err < cfg.tolerance};
    out.push_back(r);
    if (on_result) on_result(r);
  };
  std::mt19937_64 rng(cfg.seed);
  auto next = [&] { return rng(); };
  auto pick = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  const double eps = cfg.eps;

  // relu
  {
    double worst = 0;
    for (Index d = 0; d < cfg.draws; ++d) {
      const Shape s{pick(1, 3), pick(1, 4), pick(1, 5)};
      const std::uint64_t ws = next();
      worst = std::max(worst, grad_check([&](Tape<double>&, Var<double> x) { return probe(relu(x), ws); },
                                         off_kink(s, next()), eps));
    }
    report("relu", worst);
  }
  // linear (x, W, b)
  {
    double worst = 0;
    for (Index d = 0; d < cfg.draws; ++d) {
      const Index n = pick(1, 3), i = pick(1, 6), o = pick(1, 5);
      const Tensor<double> x(Shape{n, i}, SeededNormal{next(), 1.0});
      const Tensor<double> w(Shape{o, i}, SeededNormal{next(), 1.0});
      const Tensor<double> b(Shape{o}, SeededNormal{next(), 1.0});
      const std::uint64_t ws = next();
      worst = std::max(worst, grad_check([&](Tape<double>& t, Var<double> v) {
                         return probe(linear(v, t.constant(w), t.constant(b)), ws);
                       }, x, eps));
      worst = std::max(worst, grad_check([&](Tape<double>& t, Var<double> v) {
                         return probe(linear(t.constant(x), v, t.constant(b)), ws);
                       }, w, eps));
      worst = std::max(worst, grad_check([&](Tape<double>& t, Var<double> v) {
                         return probe(linear(t.constant(x), t.constant(w), v), ws);
                       }, b, eps));
    }
    report("linear", worst);
  }
  // channel concat (both operands)
  {
    double worst = 0;
    for (Index d = 0; d < cfg.draws; ++d) {
      const Index n = pick(1, 3);
      const Tensor<double> a(Shape{n, pick(1, 4)}, SeededNormal{next(), 1.0});
      const Tensor<double> b(Shape{n, pick(1, 4)}, SeededNormal{next(), 1.0});
      const std::uint64_t ws = next();
      worst = std::max(worst, grad_check([&](Tape<double>& t, Var<double> v) {
                         return probe(channel_concat(v, t.constant(b)), ws);
                       }, a, eps));
      worst = std::max(worst, grad_check([&](Tape<double>& t, Var<double> v) {
                         return probe(channel_concat(t.constant(a), v), ws);
                       }, b, eps));
    }
    report("channel_concat", worst);
  }
  // conv3d and deconv3d (input, weight, bias)
  for (const bool transposed : {false, true}) {
    double worst = 0;
    for (Index d = 0; d < cfg.draws; ++d) {
      ConvSpec cs;
      cs.in_channels = pick(1, 3);
      cs.out_channels = pick(1, 3);
      cs.kernel = {pick(1, 3), pick(1, 3), pick(1, 3)};
      cs.stride = {pick(1, 2), pick(1, 2), pick(1, 2)};
      cs.padding = {pick(0, cs.kernel.t - 1), pick(0, cs.kernel.h - 1), pick(0, cs.kernel.w - 1)};
      const Extent3 g{pick(cs.kernel.t, 4), pick(cs.kernel.h, 4), pick(cs.kernel.w, 4)};
      const Index n = pick(1, 2);
      const Index ci = cs.in_channels, co = cs.out_channels;
      const Tensor<double> x(Shape{n, ci, g.t, g.h, g.w}, SeededNormal{next(), 1.0});
      // conv weights are (C_out, C_in, k), deconv weights (C_in, C_out, k)
      const Tensor<double> wt(transposed ? Shape{ci, co, cs.kernel.t, cs.kernel.h, cs.kernel.w}
                                         : Shape{co, ci, cs.kernel.t, cs.kernel.h, cs.kernel.w},
                              SeededNormal{next(), 0.5});
      const Tensor<double> b(Shape{co}, SeededNormal{next(), 1.0});
      const std::uint64_t ws = next();
      auto op = [&](const Var<double>& xv, const Var<double>& wv, const Var<double>& bv) {
        return transposed ? deconv3d(xv, wv, bv, cs) : conv3d(xv, wv, bv, cs);
      };
      worst = std::max(worst, grad_check([&](Tape<double>& t, Var<double> v) {
                         return probe(op(v, t.constant(wt), t.constant(b)), ws);
                       }, x, eps));
      worst = std::max(worst, grad_check([&](Tape<double>& t, Var<double> v) {
                         return probe(op(t.constant(x), v, t.constant(b)), ws);
                       }, wt, eps));
      worst = std::max(worst, grad_check([&](Tape<double>& t, Var<double> v) {
                         return probe(op(t.constant(x), t.constant(wt), v), ws);
                       }, b, eps));
    }
    report(transposed ? "deconv3d" : "conv3d", worst);
  }
  // maxpool3d routing
  {
    double worst = 0;
    for (Index d = 0; d < cfg.draws; ++d) {
      const Extent3 win{pick(1, 2), pick(1, 2), pick(1, 2)};
      const Extent3 st{pick(1, 2), pick(1, 2), pick(1, 2)};
      const Shape s{pick(1, 2), pick(1, 2), pick(win.t, 4), pick(win.h, 4), pick(win.w, 4)};
      const std::uint64_t ws = next();
      worst = std::max(worst, grad_check([&](Tape<double>&, Var<double> v) { return probe(maxpool3d(v, win, st), ws); },
                                         distinct(s, next()), eps));
    }
    report("maxpool3d", worst);
  }
  // softmax cross-entropy
  {
    double worst = 0;
    for (Index d = 0; d < cfg.draws; ++d) {
      const Index n = pick(1, 4), k = pick(2, 5);
      std::vector<int> labels;
      for (Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(pick(0, k - 1)));
      worst = std::max(worst, grad_check([&](Tape<double>&, Var<double> v) {
                         return softmax_cross_entropy(v, std::span<const int>(labels));
                       }, Tensor<double>(Shape{n, k}, SeededNormal{next(), 2.0}), eps));
    }
    report("softmax_cross_entropy", worst);
  }
  // voxel flow loss
  {
    double worst = 0;
    for (Index d = 0; d < cfg.draws; ++d) {
      const Shape s{pick(1, 2), 2, pick(1, 3), pick(1, 4), pick(1, 4)};
      const Tensor<double> gt(s, SeededNormal{next(), 1.0});
      worst = std::max(worst, grad_check([&](Tape<double>&, Var<double> v) { return voxel_flow_loss(v, gt).loss; },
                                         Tensor<double>(s, SeededNormal{next(), 1.0}), eps));
    }
    report("voxel_flow_loss", worst);
  }
  // full variants: total loss w.r.t. every trained parameter, 2-sample batch
  {
    const NetworkSpec spec = micro_spec();
    const Extent3 c = spec.clip, f = spec.flow_grid();
    Batch<double> batch{Tensor<double>(Shape{2, 3, c.t, c.h, c.w}, SeededUniform{next(), 0.0, 1.0}),
                        Tensor<double>(Shape{2, 2, f.t, f.h, f.w}, SeededNormal{next(), 0.5}),
                        {0, 2}};
    for (VariantKind kind : {VariantKind::Initial, VariantKind::Combined, VariantKind::TwoStream}) {
      auto model = make_model<double>(kind, spec, next());
      std::vector<Parameter<double>*> params = sgd_parameters(model);
      // Zero biases put a ReLU exactly on its kink wherever its input patch is
      // all zero, where the one-sided slopes differ; small positive biases
      // move the check to a differentiable point.
      for (Parameter<double>* p : params) {
        if (p->value.shape().rank() == 1) p->value = Tensor<double>(p->value.shape(), SeededUniform{next(), 0.05, 0.15});
      }
      auto loss = [&](Tape<double>& t) { return variant_objective(model, t, batch, 0.7).total; };
      report(std::string("variant.") + to_string(kind), grad_check_params(loss, params, eps));
    }
  }
  return out;
}

}  // namespace motion3d
