#pragma once

// SGD with momentum, the per-variant training schemes, evaluation, the
// one-vs-rest linear classifier and the inference throughput benchmark.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "motion3d/autodiff.hpp"
#include "motion3d/data.hpp"
#include "motion3d/kernel_stats.hpp"
#include "motion3d/networks.hpp"
#include "motion3d/ops3d.hpp"

namespace motion3d {

// ---------------------------------------------------------------------------
// Optimizer

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

template <class T>
struct SgdState {
  std::vector<Tensor<T>> velocity;  // one per parameter, created on first step
};

/// v <- mu v - lr (g + wd p);  p <- p + v.
template <class T>
void sgd_step(std::span<Parameter<T>* const> params, SgdState<T>& state, const SgdConfig& cfg) {
  if (state.velocity.empty()) {
    for (const Parameter<T>* p : params) state.velocity.emplace_back(p->value.shape());
  }
  if (state.velocity.size() != params.size()) {
    throw ContractError("sgd_step: optimizer state holds " + std::to_string(state.velocity.size()) +
                        " buffers for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    if (!(p.grad.shape() == p.value.shape()) || !(state.velocity[i].shape() == p.value.shape())) {
      throw ShapeError("sgd_step: " + p.name + " value " + p.value.shape().str() + ", grad " +
                       p.grad.shape().str() + ", velocity " + state.velocity[i].shape().str());
    }
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p.name);
  }
  const T lr = static_cast<T>(cfg.learning_rate), mu = static_cast<T>(cfg.momentum),
          wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    T* v = state.velocity[i].ptr();
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    for (Index j = 0; j < p.value.numel(); ++j) {
      v[j] = mu * v[j] - lr * (g[j] + wd * w[j]);
      w[j] += v[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Linear classifier (one-vs-rest L2-regularized hinge)

struct LinearClassifierConfig {
  double lambda = 1e-3;        // L2 weight
  double learning_rate = 0.1;  // initial step; decays as lr / (1 + lr * lambda * t)
  Index epochs = 100;
  std::uint64_t seed = 0;
};

struct LinearClassifier {
  Tensor<double> weight;  // (K, D)
  Tensor<double> bias;    // (K)

  Index num_classes() const { return weight.dim(0); }

  /// Argmax of the class scores; ties go to the lowest class index.
  template <class T>
  std::vector<int> predict(const Tensor<T>& features) const {
    const Index n = features.dim(0), d = features.dim(1), k = num_classes();
    if (d != weight.dim(1)) {
      throw ShapeError("classifier expects " + std::to_string(weight.dim(1)) + " features, got " +
                       features.shape().str());
    }
    std::vector<int> out(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_score = 0;
      for (Index c = 0; c < k; ++c) {
        double s = bias[c];
        for (Index j = 0; j < d; ++j) s += weight[c * d + j] * static_cast<double>(features[i * d + j]);
        if (c == 0 || s > best_score) best = static_cast<int>(c), best_score = s;
      }
      out[static_cast<std::size_t>(i)] = best;
    }
    return out;
  }

  template <class T>
  double accuracy(const Tensor<T>& features, std::span<const int> labels) const {
    const auto pred = predict(features);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
  }
};

/// Features are standardized per dimension during fitting; the returned
/// weights act on raw features.
template <class T>
LinearClassifier fit_linear_classifier(const Tensor<T>& features, std::span<const int> labels, Index num_classes,
                                       const LinearClassifierConfig& cfg = {}) {
  const Shape& s = features.shape();
  if (s.rank() != 2 || s[0] != static_cast<Index>(labels.size())) {
    throw ShapeError("fit_linear_classifier: features " + s.str() + " with " + std::to_string(labels.size()) +
                     " labels");
  }
  const Index n = s[0], d = s[1];
  if (num_classes < 2 || n < num_classes) {
    throw ContractError("fit_linear_classifier: " + std::to_string(n) + " samples for " +
                        std::to_string(num_classes) + " classes");
  }
  std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw IndexError("label " + std::to_string(l) + " out of range");
    seen[static_cast<std::size_t>(l)] = 1;
  }
  if (std::accumulate(seen.begin(), seen.end(), 0) < 2) {
    throw ContractError("fit_linear_classifier: all samples carry one label");
  }

  std::vector<double> mean(static_cast<std::size_t>(d), 0.0), sd(static_cast<std::size_t>(d), 0.0);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += static_cast<double>(features[i * d + j]);
  for (double& m : mean) m /= static_cast<double>(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) {
      const double e = static_cast<double>(features[i * d + j]) - mean[static_cast<std::size_t>(j)];
      sd[static_cast<std::size_t>(j)] += e * e;
    }
  for (double& v : sd) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v < 1e-12) v = 1.0;
  }
  std::vector<double> x(static_cast<std::size_t>(n * d));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      x[static_cast<std::size_t>(i * d + j)] = (static_cast<double>(features[i * d + j]) - mean[jj]) / sd[jj];
    }

  LinearClassifier out{Tensor<double>(Shape{num_classes, d}), Tensor<double>(Shape{num_classes})};
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (Index c = 0; c < num_classes; ++c) {
    std::vector<double> w(static_cast<std::size_t>(d), 0.0);
    double b = 0;
    std::mt19937_64 rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(c));
    std::uint64_t t = 0;
    for (Index e = 0; e < cfg.epochs; ++e) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i : order) {
        ++t;
        const double eta = cfg.learning_rate / (1.0 + cfg.learning_rate * cfg.lambda * static_cast<double>(t));
        const double y = labels[i] == c ? 1.0 : -1.0;
        const double* xi = x.data() + i * static_cast<std::size_t>(d);
        double score = b;
        for (std::size_t j = 0; j < w.size(); ++j) score += w[j] * xi[j];
        const double shrink = 1.0 - eta * cfg.lambda;
        for (double& wj : w) wj *= shrink;
        if (y * score < 1.0) {
          for (std::size_t j = 0; j < w.size(); ++j) w[j] += eta * y * xi[j];
          b += eta * y;
        }
      }
    }
    double bias = b;
    for (Index j = 0; j < d; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      out.weight[c * d + j] = w[jj] / sd[jj];
      bias -= w[jj] * mean[jj] / sd[jj];
    }
    out.bias[c] = bias;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objectives

template <class T>
struct Objective {
  Var<T> total;
  Var<T> cls;   // classification loss driving the trained parameters
  Var<T> flow;  // voxel flow loss
  double epe = 0;
  ForwardResult<T> out;
};

/// Combined / TwoStream: L = L_cls + lambda L_flow (lambda = 0 leaves the flow
/// term out of the graph). Initial: appearance-head cross-entropy plus the
/// flow loss of the motion network; the two terms touch disjoint parameters,
/// so one step on their sum is one step of each separate scheme and lambda
/// does not apply.
template <class T>
Objective<T> variant_objective(ModelVariant<T>& model, Tape<T>& tape, const Batch<T>& batch, double lambda_flow) {
  Objective<T> o;
  o.out = forward_variant(model, tape, tape.constant(batch.clips), FlowOutput::Produce);
  const auto labels = std::span<const int>(batch.labels);
  const FlowLoss<T> fl = voxel_flow_loss(*o.out.flow, batch.flow);
  o.flow = fl.loss;
  o.epe = fl.epe;
  if (kind_of(model) == VariantKind::Initial) {
    o.cls = softmax_cross_entropy(*o.out.appearance_logits, labels);
    o.total = add(o.cls, o.flow);
  } else {
    o.cls = softmax_cross_entropy(o.out.logits, labels);
    o.total = lambda_flow == 0 ? o.cls : add(o.cls, scale(o.flow, static_cast<T>(lambda_flow)));
  }
  return o;
}

/// Parameters updated by SGD: everything except the Initial variant's
/// linear head, which is fitted on frozen features instead.
template <class T>
std::vector<Parameter<T>*> sgd_parameters(ModelVariant<T>& model) {
  std::vector<Parameter<T>*> out;
  std::visit(
      [&](auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (M::kind == VariantKind::Initial) {
          m.appearance.collect(out);
          m.motion.collect(out);
          m.decoder.collect(out);
          m.appearance_head.collect(out);
        } else {
          m.collect(out);
        }
      },
      model);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double accuracy = 0;
  double flow_epe = 0;
};

inline std::vector<int> argmax_rows(const Tensor<float>& logits) {
  const Index n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index c = 1; c < k; ++c)
      if (logits[i * k + c] > logits[i * k + best]) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// Accuracy of the model's own classifier and mean EPE of its decoder.
inline EvalResult evaluate(ModelVariant<float>& model, std::span<const VideoSample<float>> samples,
                           Index batch_size = 16) {
  if (samples.empty()) throw ContractError("evaluate: empty split");
  EvalResult r;
  std::size_t hit = 0;
  double epe_sum = 0;
  for (std::size_t lo = 0; lo < samples.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(samples.size(), lo + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const Batch<float> b = make_batch<float>(samples, idx);
    Tape<float> tape(false);
    const auto out = forward_variant(model, tape, tape.constant(b.clips), FlowOutput::Produce);
    const auto pred = argmax_rows(out.logits.value());
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == b.labels[i];
    epe_sum += flow_epe(out.flow->value(), b.flow) * static_cast<double>(idx.size());
  }
  r.accuracy = static_cast<double>(hit) / static_cast<double>(samples.size());
  r.flow_epe = epe_sum / static_cast<double>(samples.size());
  return r;
}

/// Pre-classifier features of a whole split, (N, D).
inline Tensor<float> split_features(ModelVariant<float>& model, std::span<const VideoSample<float>> samples,
                                    Index batch_size = 16) {
  if (samples.empty()) throw ContractError("split_features: empty split");
  std::vector<float> rows;
  Index d = 0;
  for (std::size_t lo = 0; lo < samples.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(samples.size(), lo + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const Tensor<float> f = extract_features(model, make_batch<float>(samples, idx).clips);
    d = f.dim(1);
    rows.insert(rows.end(), f.data().begin(), f.data().end());
  }
  return Tensor<float>(Shape{static_cast<Index>(samples.size()), d}, std::move(rows));
}

inline std::vector<int> labels_of(std::span<const VideoSample<float>> samples) {
  std::vector<int> out;
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

/// Fits the Initial variant's head on frozen concatenated features.
inline LinearClassifier fit_initial_head(ModelVariant<float>& model, std::span<const VideoSample<float>> train,
                                         const LinearClassifierConfig& cfg) {
  auto* m = std::get_if<InitialModel<float>>(&model);
  if (!m) throw ContractError("fit_initial_head: model is not the Initial variant");
  const LinearClassifier clf =
      fit_linear_classifier(split_features(model, train), labels_of(train), m->spec.num_classes, cfg);
  m->head.weight.value = clf.weight.cast<float>();
  m->head.bias.value = clf.bias.cast<float>();
  return clf;
}

// ---------------------------------------------------------------------------
// Training loop

struct Metrics {
  Index epoch = 0;
  double cls_loss = 0;
  double flow_mse = 0;
  double flow_epe = 0;  // on the train split after the epoch
  double train_acc = 0;
  double test_acc = 0;
  double fps = 0;  // classification-only inference; 0 in deterministic mode

  bool operator==(const Metrics&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index batch_size = 8;
  Index epochs = 200;
  double lambda_flow = 1.0;
  std::uint64_t seed = 42;
  double lr_decay_factor = 0.1;
  Index lr_decay_every = 80;
  /// Stop once train accuracy >= stop_train_acc and train EPE < stop_train_epe
  /// (disabled when stop_train_acc <= 0).
  double stop_train_acc = 0;
  double stop_train_epe = 0;
  bool deterministic = true;
  LinearClassifierConfig classifier;

  void validate() const {
    auto bad = [](const std::string& k, const std::string& why) { throw ConfigError(k + ": " + why); };
    if (!(learning_rate >= 0)) bad("learning_rate", "must be >= 0");
    if (!(momentum >= 0)) bad("momentum", "must be >= 0");
    if (!(weight_decay >= 0)) bad("weight_decay", "must be >= 0");
    if (!(lambda_flow >= 0)) bad("lambda_flow", "must be >= 0");
    if (batch_size < 1) bad("batch_size", "must be >= 1");
    if (epochs < 1) bad("epochs", "must be >= 1");
    if (!(lr_decay_factor >= 0)) bad("lr_decay_factor", "must be >= 0");
    if (lr_decay_every < 1) bad("lr_decay_every", "must be >= 1");
  }

  double learning_rate_at(Index epoch_index) const {
    return learning_rate * std::pow(lr_decay_factor, static_cast<double>(epoch_index / lr_decay_every));
  }
};

using EpochCallback = std::function<void(const Metrics&)>;

/// Classification-only frames per second over `samples`.
inline double measure_fps(ModelVariant<float>& model, std::span<const VideoSample<float>> samples,
                          Index batch_size) {
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t lo = 0; lo < samples.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(samples.size(), lo + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const Batch<float> b = make_batch<float>(samples, idx);
    Tape<float> tape(false);
    (void)forward_variant(model, tape, tape.constant(b.clips), FlowOutput::Skip);
  }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double frames = static_cast<double>(samples.size()) * static_cast<double>(spec_of(model).clip.t);
  return frames / std::max(sec, 1e-12);
}

inline std::vector<Metrics> train(ModelVariant<float>& model, const Dataset& data, const TrainConfig& cfg,
                                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty()) throw ContractError("train: empty train split");
  const NetworkSpec& spec = spec_of(model);
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& s : *split) {
      const Shape& f = s.frames.shape();
      if (f.rank() != 4 || f[0] != spec.in_channels || !(Extent3{f[1], f[2], f[3]} == spec.clip)) {
        throw ShapeError("train: sample frames " + f.str() + " do not match network clip " + spec.clip.str());
      }
      if (s.label < 0 || s.label >= spec.num_classes) {
        throw IndexError("train: label " + std::to_string(s.label) + " outside the model's classes");
      }
    }
  }
  const bool initial = kind_of(model) == VariantKind::Initial;
  std::vector<Parameter<float>*> params = sgd_parameters(model);
  SgdState<float> state;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.train.size());
  std::vector<Metrics> history;

  for (Index e = 0; e < cfg.epochs; ++e) {
    const SgdConfig sgd{cfg.learning_rate_at(e), cfg.momentum, cfg.weight_decay};
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double cls_sum = 0, flow_sum = 0;
    Index batch_idx = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size), ++batch_idx) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const Batch<float> b = make_batch<float>(data.train, idx);
      Tape<float> tape;
      const Objective<float> obj = variant_objective(model, tape, b, cfg.lambda_flow);
      const double loss = obj.total.value()[0];
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(e + 1) +
                           ", batch " + std::to_string(batch_idx + 1));
      }
      tape.backward(obj.total);
      try {
        sgd_step<float>(params, state, sgd);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " at epoch " + std::to_string(e + 1) + ", batch " +
                           std::to_string(batch_idx + 1));
      }
      cls_sum += obj.cls.value()[0] * static_cast<double>(idx.size());
      flow_sum += obj.flow.value()[0] * static_cast<double>(idx.size());
    }

    if (initial) fit_initial_head(model, data.train, cfg.classifier);
    Metrics m;
    m.epoch = e + 1;
    m.cls_loss = cls_sum / static_cast<double>(order.size());
    m.flow_mse = flow_sum / static_cast<double>(order.size());
    const EvalResult tr = evaluate(model, data.train);
    m.train_acc = tr.accuracy;
    m.flow_epe = tr.flow_epe;
    if (!std::isfinite(m.flow_epe)) {
      throw NumericError("non-finite train EPE after epoch " + std::to_string(e + 1) + " (weights diverged)");
    }
    if (!data.test.empty()) m.test_acc = evaluate(model, data.test).accuracy;
    if (!cfg.deterministic) m.fps = measure_fps(model, data.test.empty() ? data.train : data.test, cfg.batch_size);
    history.push_back(m);
    if (on_epoch) on_epoch(m);
    if (cfg.stop_train_acc > 0 && m.train_acc >= cfg.stop_train_acc && m.flow_epe < cfg.stop_train_epe) break;
  }
  return history;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline const char* metrics_csv_header() { return "epoch,cls_loss,flow_mse,flow_epe,train_acc,test_acc,fps"; }

inline std::string metrics_csv_row(const Metrics& m) {
  std::ostringstream os;
  os << std::setprecision(9) << m.epoch << ',' << m.cls_loss << ',' << m.flow_mse << ',' << m.flow_epe << ','
     << m.train_acc << ',' << m.test_acc << ',' << m.fps;
  return os.str();
}

inline void write_metrics_csv(const std::filesystem::path& path, std::span<const Metrics> history) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << metrics_csv_header() << '\n';
  for (const Metrics& m : history) os << metrics_csv_row(m) << '\n';
}

// ---------------------------------------------------------------------------
// Throughput

struct BenchConfig {
  NetworkSpec spec = NetworkSpec::desk_scale();
  Index batch = 4;
  Index warmup = 2;
  Index runs = 20;  // raised to 20 if lower
  bool with_flow = false;
  std::uint64_t seed = 7;
};

struct BenchResult {
  VariantKind variant = VariantKind::Combined;
  double fps = 0;               // frames per second, median run
  double clips_per_second = 0;  // same run, in clips
  double median_seconds = 0;
  Index runs = 0;
  KernelCounts kernels_per_pass;  // network kernels issued by one forward pass
  std::uint64_t flow_target_calls = 0;  // flow-target computations during timed runs
};

/// Times forward passes on a resident random batch (no I/O, no data
/// generation in the timed region).
inline BenchResult benchmark_fps(VariantKind variant, const BenchConfig& cfg) {
  cfg.spec.validate();
  auto model = make_model<float>(variant, cfg.spec, cfg.seed);
  const Extent3 c = cfg.spec.clip;
  const Tensor<float> clips(Shape{cfg.batch, cfg.spec.in_channels, c.t, c.h, c.w},
                            SeededUniform{cfg.seed, 0.0, 1.0});
  const FlowOutput mode = cfg.with_flow ? FlowOutput::Produce : FlowOutput::Skip;
  auto pass = [&] {
    Tape<float> tape(false);
    (void)forward_variant(model, tape, tape.constant(clips), mode);
  };

  BenchResult r;
  r.variant = variant;
  for (Index i = 0; i < std::max<Index>(1, cfg.warmup); ++i) {
    const KernelCounts before = kernel_counts();
    pass();
    r.kernels_per_pass = kernel_counts() - before;
  }
  const Index runs = std::max<Index>(20, cfg.runs);
  std::vector<double> seconds;
  const KernelCounts before = kernel_counts();
  for (Index i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    pass();
    seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  r.flow_target_calls = (kernel_counts() - before).flow_target;
  std::sort(seconds.begin(), seconds.end());
  const std::size_t mid = seconds.size() / 2;
  r.median_seconds = seconds.size() % 2 ? seconds[mid] : 0.5 * (seconds[mid - 1] + seconds[mid]);
  r.runs = runs;
  r.clips_per_second = static_cast<double>(cfg.batch) / std::max(r.median_seconds, 1e-12);
  r.fps = r.clips_per_second * static_cast<double>(c.t);
  return r;
}

/// Test accuracy of the network's own head next to that of a linear
/// classifier fitted on train-split features.
struct ParityResult {
  double softmax_accuracy = 0;
  double linear_accuracy = 0;

  double gap() const { return std::abs(softmax_accuracy - linear_accuracy); }
};

inline ParityResult pipeline_parity(ModelVariant<float>& model, const Dataset& data,
                                    const LinearClassifierConfig& cfg = {}) {
  const Index k = spec_of(model).num_classes;
  const LinearClassifier clf = fit_linear_classifier(split_features(model, data.train), labels_of(data.train), k, cfg);
  ParityResult r;
  r.softmax_accuracy = evaluate(model, data.test).accuracy;
  r.linear_accuracy = clf.accuracy(split_features(model, data.test), labels_of(data.test));
  return r;
}

/// Combined >= TwoStream >= Initial, given results in any order.
inline bool throughput_ordering_holds(std::span<const BenchResult> results) {
  auto fps = [&](VariantKind k) {
    for (const auto& r : results)
      if (r.variant == k) return r.fps;
    throw ContractError(std::string("no benchmark result for ") + to_string(k));
  };
  return fps(VariantKind::Combined) >= fps(VariantKind::TwoStream) &&
         fps(VariantKind::TwoStream) >= fps(VariantKind::Initial);
}

}  // namespace motion3d
