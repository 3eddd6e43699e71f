// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all
// pass. Thresholds are fixed here and nowhere else.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "motion3d/gradient_suite.hpp"
#include "motion3d/train.hpp"
#include "oracles.hpp"

using namespace motion3d;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 120;
constexpr int kOracleDraws = 12;
constexpr double kConvTolerance = 1e-6;
constexpr double kAdjointTolerance = 1e-6;
constexpr double kSharingTolerance = 1e-6;
constexpr Index kDeskEpochs = 200;
constexpr double kDeskTrainAcc = 0.95;
constexpr double kDeskTrainEpe = 0.5;
constexpr double kDeskTestAcc = 0.90;
constexpr double kDeskSeconds = 15 * 60;
constexpr double kParityGap = 0.05;
constexpr Index kDeterminismEpochs = 3;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS  " : "FAIL  ") << name << ": " << detail << std::endl;
}

std::string fmt(double v, int precision = 3, bool sci = false) {
  std::ostringstream os;
  os << (sci ? std::scientific : std::fixed) << std::setprecision(precision) << v;
  return os.str();
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (Index i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  GradientSuiteConfig cfg;
  cfg.tolerance = kGradTolerance;
  double worst = 0;
  std::string worst_name;
  bool all = true;
  std::size_t n = 0;
  for (const auto& r : run_gradient_suite(cfg)) {
    ++n;
    all = all && r.passed;
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = r.name;
  }
  const double secs = seconds_since(t0);
  report(all && secs < kGradSeconds, "gradient suite",
         std::to_string(n) + " checks, worst rel err " + fmt(worst, 2, true) + " (" + worst_name + ") < " +
             fmt(kGradTolerance, 0, true) + ", " + fmt(secs, 1) + " s < " + fmt(kGradSeconds, 0) + " s");
}

void kernel_oracles() {
  std::mt19937_64 rng(2718);
  auto pick = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  double conv_err = 0, adjoint_err = 0;
  bool pool_exact = true;
  for (int i = 0; i < kOracleDraws; ++i) {
    ConvSpec s;
    s.in_channels = pick(1, 4);
    s.out_channels = pick(1, 4);
    s.kernel = {pick(1, 3), pick(1, 3), pick(1, 3)};
    s.stride = {pick(1, 2), pick(1, 2), pick(1, 2)};
    s.padding = {pick(0, s.kernel.t - 1), pick(0, s.kernel.h - 1), pick(0, s.kernel.w - 1)};
    const Extent3 g{s.kernel.t + pick(0, 4), s.kernel.h + pick(0, 5), s.kernel.w + pick(0, 5)};
    const Index n = pick(1, 2);
    const Tensor<double> x(Shape{n, s.in_channels, g.t, g.h, g.w}, SeededNormal{rng(), 1.0});
    const Tensor<double> w(Shape{s.out_channels, s.in_channels, s.kernel.t, s.kernel.h, s.kernel.w},
                           SeededNormal{rng(), 1.0});
    const Tensor<double> b(Shape{s.out_channels}, SeededNormal{rng(), 1.0});
    Tape<double> t(false);
    const Tensor<double> y = conv3d(t.constant(x), t.constant(w), t.constant(b), s).value();
    const oracle::Geom geom{s.kernel.t, s.kernel.h, s.kernel.w, s.stride.t, s.stride.h,
                            s.stride.w, s.padding.t, s.padding.h, s.padding.w};
    conv_err = std::max(conv_err, max_abs_diff(y, oracle::conv3d(x, w, b, geom)));

    // <conv(x, w), u> = <x, deconv(u, w)> with zero biases, x on the grid deconv reproduces
    const Extent3 og = s.conv_output(g);
    const Extent3 back = s.deconv_output(og);
    const Tensor<double> xa(Shape{n, s.in_channels, back.t, back.h, back.w}, SeededNormal{rng(), 1.0});
    const Tensor<double> u(Shape{n, s.out_channels, og.t, og.h, og.w}, SeededNormal{rng(), 1.0});
    const ConvSpec ds{s.out_channels, s.in_channels, s.kernel, s.stride, s.padding};
    const double lhs =
        dot(conv3d(t.constant(xa), t.constant(w), t.constant(Tensor<double>(Shape{s.out_channels})), s).value(), u);
    const double rhs =
        dot(xa, deconv3d(t.constant(u), t.constant(w), t.constant(Tensor<double>(Shape{s.in_channels})), ds).value());
    adjoint_err = std::max(adjoint_err, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));

    const Extent3 win{pick(1, 2), pick(1, 3), pick(1, 3)}, st{pick(1, 2), pick(1, 2), pick(1, 3)};
    const Tensor<double> px(Shape{n, pick(1, 3), win.t + pick(0, 3), win.h + pick(0, 4), win.w + pick(0, 4)},
                            SeededNormal{rng(), 1.0});
    pool_exact = pool_exact && maxpool3d(t.constant(px), win, st).value() ==
                                   oracle::maxpool3d(px, win.t, win.h, win.w, st.t, st.h, st.w);
  }
  report(conv_err <= kConvTolerance && adjoint_err <= kAdjointTolerance && pool_exact, "kernel oracles",
         std::to_string(kOracleDraws) + " draws: conv3d max err " + fmt(conv_err, 1, true) + " <= " +
             fmt(kConvTolerance, 0, true) + ", maxpool3d " + (pool_exact ? "exact" : "MISMATCH") +
             ", deconv3d adjoint rel err " + fmt(adjoint_err, 1, true) + " <= " + fmt(kAdjointTolerance, 0, true));
}

void weight_sharing() {
  const NetworkSpec spec = suite_detail::micro_spec();
  const Extent3 c = spec.clip, f = spec.flow_grid();
  const Batch<double> batch{Tensor<double>(Shape{2, 3, c.t, c.h, c.w}, SeededUniform{31, 0.0, 1.0}),
                            Tensor<double>(Shape{2, 2, f.t, f.h, f.w}, SeededNormal{32, 0.5}),
                            {1, 2}};
  const double lambda = 0.7;

  auto combined = make_model<double>(VariantKind::Combined, spec, 33);
  auto grads = [&](int which) {
    Tape<double> tape;
    const auto o = variant_objective(combined, tape, batch, lambda);
    tape.backward(which == 0 ? o.total : which == 1 ? o.cls : o.flow);
    std::vector<Tensor<double>> g;
    for (auto* p : parameters(combined)) g.push_back(p->grad);
    return g;
  };
  const auto total = grads(0), cls = grads(1), flow = grads(2);
  std::vector<Parameter<double>*> shared;
  std::get<CombinedModel<double>>(combined).shared.collect(shared);
  double err = 0, flow_mass = 0;
  const auto all = parameters(combined);
  for (std::size_t i = 0; i < all.size(); ++i) {
    Tensor<double> sum = cls[i];
    for (Index j = 0; j < sum.numel(); ++j) sum[j] += lambda * flow[i][j];
    err = std::max(err, max_abs_diff(total[i], sum));
    if (std::find(shared.begin(), shared.end(), all[i]) != shared.end())
      for (double v : flow[i].data()) flow_mass = std::max(flow_mass, std::abs(v));
  }

  auto twostream = make_model<double>(VariantKind::TwoStream, spec, 34);
  std::vector<Parameter<double>*> appearance;
  std::get<TwoStreamModel<double>>(twostream).appearance.collect(appearance);
  Tape<double> tape;
  tape.backward(variant_objective(twostream, tape, batch, lambda).flow);
  double leak = 0;
  for (auto* p : appearance)
    for (double v : p->grad.data()) leak = std::max(leak, std::abs(v));

  report(err <= kSharingTolerance && flow_mass > 0 && leak == 0.0, "weight sharing",
         "combined grad(cls + " + fmt(lambda, 1) + " flow) vs sum of parts max diff " + fmt(err, 1, true) +
             " <= " + fmt(kSharingTolerance, 0, true) + " (flow reaches shared encoder: max |grad| " +
             fmt(flow_mass, 1, true) + "); twostream appearance max |grad flow| " + fmt(leak, 1, true) + " == 0");
}

void desk_learning_and_parity() {
  const Dataset data = gen_synthetic(SynthConfig{});
  auto model = make_model<float>(VariantKind::TwoStream, NetworkSpec::desk_scale(), 42);
  TrainConfig cfg;
  cfg.epochs = kDeskEpochs;
  const auto t0 = Clock::now();
  const auto history = train(model, data, cfg, [&](const Metrics& m) {
    if (m.epoch % 20 == 0)
      std::cerr << "  desk epoch " << m.epoch << ": train_acc " << m.train_acc << ", test_acc " << m.test_acc
                << ", train EPE " << m.flow_epe << ", " << fmt(seconds_since(t0), 0) << " s" << std::endl;
  });
  const double secs = seconds_since(t0);
  const Metrics& last = history.back();
  const bool ok = last.train_acc >= kDeskTrainAcc && last.flow_epe < kDeskTrainEpe && last.test_acc >= kDeskTestAcc &&
                  secs < kDeskSeconds;
  report(ok, "desk-scale learning",
         "twostream on " + std::to_string(data.train.size()) + " train clips after " + std::to_string(last.epoch) +
             " epochs: train acc " + fmt(last.train_acc) + " >= " + fmt(kDeskTrainAcc, 2) + ", train EPE " +
             fmt(last.flow_epe) + " < " + fmt(kDeskTrainEpe, 1) + " px, test acc " + fmt(last.test_acc) +
             " >= " + fmt(kDeskTestAcc, 2) + ", " + fmt(secs, 0) + " s < " + fmt(kDeskSeconds, 0) + " s");

  const ParityResult p = pipeline_parity(model, data, cfg.classifier);
  report(p.gap() <= kParityGap, "pipeline parity",
         "test acc linear classifier on features " + fmt(p.linear_accuracy) + " vs softmax " +
             fmt(p.softmax_accuracy) + ", gap " + fmt(p.gap()) + " <= " + fmt(kParityGap, 2));
}

void throughput() {
  BenchConfig cfg;
  std::vector<BenchResult> results;
  std::uint64_t flow_targets = 0;
  std::string table;
  for (VariantKind k : {VariantKind::Combined, VariantKind::TwoStream, VariantKind::Initial}) {
    results.push_back(benchmark_fps(k, cfg));
    flow_targets += results.back().flow_target_calls;
    table += std::string(table.empty() ? "" : ", ") + to_string(k) + " " + fmt(results.back().fps, 0);
  }
  report(throughput_ordering_holds(results) && flow_targets == 0, "throughput ordering",
         "fps " + table + " (combined >= twostream >= initial); flow-target computations during inference " +
             std::to_string(flow_targets) + " == 0");
}

std::string run_and_capture(const std::string& cmd, int& status) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) {
    status = -1;
    return out;
  }
  char buf[512];
  while (fgets(buf, sizeof buf, p)) out += buf;
  status = pclose(p);
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / "motion3d_acceptance_determinism";
  fs::remove_all(root);
  const std::string cmd = std::string(MOTION3D_CLI) + " train --deterministic --variant twostream --set train.epochs=" +
                          std::to_string(kDeterminismEpochs) + " --out " + root.string();
  std::vector<std::string> csvs;
  bool ran = true;
  for (int i = 0; i < 2; ++i) {
    int status = 0;
    const std::string out = run_and_capture(cmd, status);
    const auto pos = out.find("run directory: ");
    if (status != 0 || pos == std::string::npos) {
      ran = false;
      break;
    }
    const std::string dir = out.substr(pos + 15, out.find('\n', pos) - pos - 15);
    csvs.push_back(read_file(fs::path(dir) / "metrics.csv"));
  }
  const bool same = ran && csvs.size() == 2 && !csvs[0].empty() && csvs[0] == csvs[1];
  report(same, "determinism",
         ran ? "two `train --deterministic` runs (" + std::to_string(kDeterminismEpochs) + " epochs): metrics.csv " +
                   (same ? "bitwise identical (" + std::to_string(csvs[0].size()) + " bytes)" : "DIFFER")
             : "CLI run failed");
  fs::remove_all(root);
}

}  // namespace

int main() {
  gradient_suite();
  kernel_oracles();
  weight_sharing();
  throughput();
  determinism();
  desk_learning_and_parity();
  std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
