#pragma once

// Encoder / decoder builders and the three model variants.
//
//   Initial    appearance encoder and a separate motion conv-deconv flow
//              network; a linear classifier over the concatenated features.
//   Combined   one shared encoder feeding a classification head and the
//              flow decoder.
//   TwoStream  appearance and motion encoders, flow decoder on the motion
//              stream, softmax head over the concatenated fc7 vectors.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "motion3d/autodiff.hpp"
#include "motion3d/io.hpp"
#include "motion3d/ops3d.hpp"

namespace motion3d {

/// One transposed-convolution stage of the flow decoder.
struct DeconvStage {
  Index out_channels = 1;
  Extent3 kernel{3, 3, 3};
  Extent3 stride{1, 1, 1};
  Extent3 padding{1, 1, 1};
  bool relu = true;
};

/// Which motion-stream representation the Initial variant feeds its classifier.
enum class MotionTap { Fc7, Conv5 };

struct NetworkSpec {
  static constexpr std::size_t kStages = 5;

  std::array<Index, kStages> base_conv_channels{64, 128, 256, 256, 256};
  Index base_fc_width = 2048;
  double width_factor = 1.0;
  Extent3 kernel{3, 3, 3};
  Extent3 padding{1, 1, 1};
  Index in_channels = 3;
  Extent3 clip{16, 112, 112};  // (T, H, W)
  Index num_classes = 101;
  /// Max pooling after each conv stage (window == stride); nullopt = none.
  std::array<std::optional<Extent3>, kStages> pools{Extent3{1, 2, 2}, Extent3{2, 2, 2}, Extent3{2, 2, 2},
                                                    Extent3{2, 2, 2}, std::nullopt};
  /// Explicit decoder; empty means the mirror of the encoder.
  std::vector<DeconvStage> decoder;
  MotionTap motion_tap = MotionTap::Fc7;
  /// Subtracted from every input voxel before conv1 (frames live in [0, 1]).
  double input_mean = 0.5;

  /// Full-width architecture: conv widths 64-128-256-256-256, fc 2048.
  static NetworkSpec full_scale(Index num_classes = 101) {
    NetworkSpec s;
    s.num_classes = num_classes;
    return s;
  }

  /// Laptop-sized default: 8x32x32 clips, widths scaled by 1/8.
  static NetworkSpec desk_scale(Index num_classes = 4) {
    NetworkSpec s;
    s.num_classes = num_classes;
    s.clip = {8, 32, 32};
    s.width_factor = 1.0 / 8.0;
    return s;
  }

  static Index scaled(Index base, double factor) {
    return std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(base) * factor)));
  }

  Index conv_channels(std::size_t stage) const { return scaled(base_conv_channels[stage], width_factor); }
  Index fc_width() const { return scaled(base_fc_width, width_factor); }

  ConvSpec conv_spec(std::size_t stage) const {
    return {stage == 0 ? in_channels : conv_channels(stage - 1), conv_channels(stage), kernel, {1, 1, 1},
            padding};
  }

  /// Grid after conv stage `stage` (before its pooling) and after pooling.
  struct StageGrid {
    Extent3 conv;
    Extent3 pooled;
  };

  std::array<StageGrid, kStages> stage_grids() const {
    std::array<StageGrid, kStages> out{};
    Extent3 g = clip;
    for (std::size_t i = 0; i < kStages; ++i) {
      const std::string name = "conv" + std::to_string(i + 1);
      try {
        g = conv_spec(i).conv_output(g);
      } catch (const SpecError& e) {
        throw SpecError(name + ": " + e.what());
      }
      out[i].conv = g;
      if (pools[i]) {
        const Extent3 w = *pools[i];
        if (w.t < 1 || w.h < 1 || w.w < 1) throw SpecError(name + ": pooling window must be >= 1");
        if (w.t > g.t || w.h > g.h || w.w > g.w) {
          throw SpecError(name + ": pooling " + w.str() + " collapses grid " + g.str() + " below 1");
        }
        g = {(g.t - w.t) / w.t + 1, (g.h - w.h) / w.h + 1, (g.w - w.w) / w.w + 1};
      }
      out[i].pooled = g;
    }
    return out;
  }

  Extent3 conv5_grid() const { return stage_grids()[kStages - 1].pooled; }
  Index conv5_size() const { return conv_channels(kStages - 1) * conv5_grid().volume(); }

  /// Flow field extents (T-1, H, W) the decoder must produce.
  Extent3 flow_grid() const { return {clip.t - 1, clip.h, clip.w}; }

  /// Decoder stage list: explicit if configured, otherwise the mirror of the
  /// conv/pool stack followed by a 2-channel stage that maps T frames to T-1
  /// flow steps.
  std::vector<DeconvStage> decoder_stages() const {
    if (!decoder.empty()) return decoder;
    std::vector<DeconvStage> out;
    for (std::size_t j = kStages - 1; j >= 1; --j) {
      DeconvStage st;
      st.out_channels = conv_channels(j - 1);
      const std::optional<Extent3>& pool = pools[j - 1];
      auto axis = [](Index w, Index& k, Index& s, Index& p) {
        if (w == 1) {
          k = 3, s = 1, p = 1;
        } else if (w % 2 == 0) {
          k = 2 * w, s = w, p = w / 2;
        } else {
          k = w, s = w, p = 0;
        }
      };
      const Extent3 w = pool.value_or(Extent3{1, 1, 1});
      axis(w.t, st.kernel.t, st.stride.t, st.padding.t);
      axis(w.h, st.kernel.h, st.stride.h, st.padding.h);
      axis(w.w, st.kernel.w, st.stride.w, st.padding.w);
      out.push_back(st);
    }
    out.push_back(DeconvStage{2, {2, 3, 3}, {1, 1, 1}, {1, 1, 1}, false});
    return out;
  }

  /// Throws SpecError if any stage is inconsistent.
  void validate() const {
    if (width_factor <= 0) throw SpecError("width_factor must be positive");
    if (num_classes < 2) throw SpecError("num_classes must be >= 2");
    if (!std::isfinite(input_mean)) throw SpecError("input_mean must be finite");
    if (in_channels < 1 || base_fc_width < 1) throw SpecError("channel counts must be >= 1");
    for (Index c : base_conv_channels)
      if (c < 1) throw SpecError("conv channel counts must be >= 1");
    if (clip.t < 2) throw SpecError("clips need at least 2 frames to define flow");
    const auto grids = stage_grids();
    // decoder replay
    Extent3 g = grids[kStages - 1].pooled;
    const auto stages = decoder_stages();
    for (std::size_t k = 0; k < stages.size(); ++k) {
      const DeconvStage& st = stages[k];
      const ConvSpec cs{1, st.out_channels, st.kernel, st.stride, st.padding};
      try {
        g = cs.deconv_output(g);
      } catch (const SpecError& e) {
        throw SpecError("decoder stage " + std::to_string(k + 1) + ": " + e.what());
      }
      if (decoder.empty() && k + 1 < stages.size()) {
        const Extent3 want = grids[kStages - 2 - k].conv;
        if (!(g == want)) {
          throw SpecError("decoder stage " + std::to_string(k + 1) + " produces " + g.str() +
                          " but the mirrored encoder stage has " + want.str());
        }
      }
    }
    if (stages.back().out_channels != 2 || !(g == flow_grid())) {
      throw SpecError("decoder stage " + std::to_string(stages.size()) + " emits " +
                      std::to_string(stages.back().out_channels) + " x " + g.str() + ", expected 2 x " +
                      flow_grid().str());
    }
  }
};

namespace detail {

// Stable per-parameter seed derived from the model seed and the parameter path.
inline std::uint64_t param_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ull;
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

template <class T>
Parameter<T> weight(const std::string& name, Shape s, Index fan_in, std::uint64_t seed) {
  return Parameter<T>(name, Tensor<T>(s, SeededNormal::he(param_seed(seed, name), fan_in)));
}

template <class T>
Parameter<T> bias(const std::string& name, Index n) {
  return Parameter<T>(name, Tensor<T>(Shape{n}));
}

}  // namespace detail

template <class T>
struct LinearLayer {
  LinearLayer() = default;
  LinearLayer(const std::string& prefix, Index in, Index out, std::uint64_t seed)
      : weight(detail::weight<T>(prefix + ".weight", Shape{out, in}, in, seed)),
        bias(detail::bias<T>(prefix + ".bias", out)) {}

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) { return linear(x, tape.param(weight), tape.param(bias)); }
  void collect(std::vector<Parameter<T>*>& out) { out.insert(out.end(), {&weight, &bias}); }

  Parameter<T> weight;
  Parameter<T> bias;
};

/// conv1..conv5 (conv + ReLU, optional pooling) then fc6, fc7 (linear + ReLU).
template <class T>
class Encoder {
 public:
  struct Output {
    Var<T> conv5;  // final spatio-temporal map, decoder tap
    Var<T> fc7;    // mid-level feature vector
  };

  Encoder() = default;
  Encoder(const NetworkSpec& spec, const std::string& prefix, std::uint64_t seed) : spec_(spec) {
    spec.validate();
    for (std::size_t i = 0; i < NetworkSpec::kStages; ++i) {
      const ConvSpec cs = spec.conv_spec(i);
      const std::string p = prefix + ".conv" + std::to_string(i + 1);
      conv_w_[i] = detail::weight<T>(p + ".weight",
                                     Shape{cs.out_channels, cs.in_channels, cs.kernel.t, cs.kernel.h, cs.kernel.w},
                                     cs.in_channels * cs.kernel.volume(), seed);
      conv_b_[i] = detail::bias<T>(p + ".bias", cs.out_channels);
    }
    fc6_ = LinearLayer<T>(prefix + ".fc6", spec.conv5_size(), spec.fc_width(), seed);
    fc7_ = LinearLayer<T>(prefix + ".fc7", spec.fc_width(), spec.fc_width(), seed);
  }

  Output forward(Tape<T>& tape, const Var<T>& clips) {
    Var<T> h = clips;
    for (std::size_t i = 0; i < NetworkSpec::kStages; ++i) {
      h = relu(conv3d(h, tape.param(conv_w_[i]), tape.param(conv_b_[i]), spec_.conv_spec(i)));
      if (spec_.pools[i]) h = maxpool3d(h, *spec_.pools[i], *spec_.pools[i]);
    }
    Var<T> f = relu(fc6_(tape, flatten(h)));
    f = relu(fc7_(tape, f));
    return {h, f};
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (std::size_t i = 0; i < NetworkSpec::kStages; ++i) out.insert(out.end(), {&conv_w_[i], &conv_b_[i]});
    fc6_.collect(out);
    fc7_.collect(out);
  }

  Parameter<T>& conv_weight(std::size_t stage) { return conv_w_[stage]; }

 private:
  NetworkSpec spec_;
  std::array<Parameter<T>, NetworkSpec::kStages> conv_w_;
  std::array<Parameter<T>, NetworkSpec::kStages> conv_b_;
  LinearLayer<T> fc6_;
  LinearLayer<T> fc7_;
};

/// Transposed-convolution flow decoder consuming the encoder's conv5 map and
/// emitting (N, 2, T-1, H, W).
template <class T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const NetworkSpec& spec, const std::string& prefix, std::uint64_t seed) {
    spec.validate();
    Index in = spec.conv_channels(NetworkSpec::kStages - 1);
    const auto stages = spec.decoder_stages();
    for (std::size_t k = 0; k < stages.size(); ++k) {
      const DeconvStage& st = stages[k];
      ConvSpec cs{in, st.out_channels, st.kernel, st.stride, st.padding};
      const std::string p = prefix + ".deconv" + std::to_string(k + 1);
      // each output voxel receives about in * k / stride contributions
      const Index fan_in = std::max<Index>(1, in * st.kernel.volume() / st.stride.volume());
      w_.push_back(detail::weight<T>(p + ".weight",
                                     Shape{in, st.out_channels, st.kernel.t, st.kernel.h, st.kernel.w}, fan_in, seed));
      b_.push_back(detail::bias<T>(p + ".bias", st.out_channels));
      specs_.push_back(cs);
      relu_.push_back(st.relu);
      in = st.out_channels;
    }
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& conv5) {
    Var<T> h = conv5;
    for (std::size_t k = 0; k < specs_.size(); ++k) {
      h = deconv3d(h, tape.param(w_[k]), tape.param(b_[k]), specs_[k]);
      if (relu_[k]) h = relu(h);
    }
    return h;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (std::size_t k = 0; k < w_.size(); ++k) out.insert(out.end(), {&w_[k], &b_[k]});
  }

  std::size_t num_stages() const { return specs_.size(); }

 private:
  std::vector<Parameter<T>> w_;
  std::vector<Parameter<T>> b_;
  std::vector<ConvSpec> specs_;
  std::vector<bool> relu_;
};

enum class VariantKind { Initial, Combined, TwoStream };

inline const char* to_string(VariantKind k) {
  switch (k) {
    case VariantKind::Initial:
      return "initial";
    case VariantKind::Combined:
      return "combined";
    case VariantKind::TwoStream:
      return "twostream";
  }
  return "?";
}

inline VariantKind parse_variant(const std::string& s) {
  if (s == "initial") return VariantKind::Initial;
  if (s == "combined") return VariantKind::Combined;
  if (s == "twostream") return VariantKind::TwoStream;
  throw ConfigError("unknown variant '" + s + "' (expected initial, combined, twostream)");
}

template <class T>
struct InitialModel {
  static constexpr VariantKind kind = VariantKind::Initial;

  InitialModel(const NetworkSpec& s, std::uint64_t seed)
      : spec(s),
        appearance(s, "appearance", seed),
        motion(s, "motion", seed),
        decoder(s, "decoder", seed),
        appearance_head("appearance_head", s.fc_width(), s.num_classes, seed),
        head("head", s.fc_width() + motion_feature_width(s), s.num_classes, seed) {}

  static Index motion_feature_width(const NetworkSpec& s) {
    return s.motion_tap == MotionTap::Fc7 ? s.fc_width() : s.conv5_size();
  }

  void collect(std::vector<Parameter<T>*>& out) {
    appearance.collect(out);
    motion.collect(out);
    decoder.collect(out);
    appearance_head.collect(out);
    head.collect(out);
  }

  NetworkSpec spec;
  Encoder<T> appearance;
  Encoder<T> motion;
  Decoder<T> decoder;
  LinearLayer<T> appearance_head;  // trains the appearance stream on labels alone
  LinearLayer<T> head;             // linear classifier over concatenated features
};

template <class T>
struct CombinedModel {
  static constexpr VariantKind kind = VariantKind::Combined;

  CombinedModel(const NetworkSpec& s, std::uint64_t seed)
      : spec(s),
        shared(s, "shared", seed),
        cls_head("cls_head", s.fc_width(), s.num_classes, seed),
        decoder(s, "decoder", seed) {}

  void collect(std::vector<Parameter<T>*>& out) {
    shared.collect(out);
    cls_head.collect(out);
    decoder.collect(out);
  }

  NetworkSpec spec;
  Encoder<T> shared;
  LinearLayer<T> cls_head;
  Decoder<T> decoder;
};

template <class T>
struct TwoStreamModel {
  static constexpr VariantKind kind = VariantKind::TwoStream;

  TwoStreamModel(const NetworkSpec& s, std::uint64_t seed)
      : spec(s),
        appearance(s, "appearance", seed),
        motion(s, "motion", seed),
        decoder(s, "decoder", seed),
        fused_head("fused_head", 2 * s.fc_width(), s.num_classes, seed) {}

  void collect(std::vector<Parameter<T>*>& out) {
    appearance.collect(out);
    motion.collect(out);
    decoder.collect(out);
    fused_head.collect(out);
  }

  NetworkSpec spec;
  Encoder<T> appearance;
  Encoder<T> motion;
  Decoder<T> decoder;
  LinearLayer<T> fused_head;
};

template <class T>
using ModelVariant = std::variant<InitialModel<T>, CombinedModel<T>, TwoStreamModel<T>>;

template <class T>
ModelVariant<T> make_model(VariantKind kind, const NetworkSpec& spec, std::uint64_t seed) {
  switch (kind) {
    case VariantKind::Initial:
      return InitialModel<T>(spec, seed);
    case VariantKind::Combined:
      return CombinedModel<T>(spec, seed);
    case VariantKind::TwoStream:
      break;
  }
  return TwoStreamModel<T>(spec, seed);
}

template <class T>
VariantKind kind_of(const ModelVariant<T>& m) {
  return std::visit([](const auto& v) { return std::decay_t<decltype(v)>::kind; }, m);
}

template <class T>
const NetworkSpec& spec_of(const ModelVariant<T>& m) {
  return std::visit([](const auto& v) -> const NetworkSpec& { return v.spec; }, m);
}

template <class T>
std::vector<Parameter<T>*> parameters(ModelVariant<T>& m) {
  std::vector<Parameter<T>*> out;
  std::visit([&](auto& v) { v.collect(out); }, m);
  return out;
}

template <class T>
Index parameter_count(ModelVariant<T>& m) {
  Index n = 0;
  for (Parameter<T>* p : parameters(m)) n += p->value.numel();
  return n;
}

/// Whether a forward pass should run the flow decoder.
enum class FlowOutput { Skip, Produce };

template <class T>
struct ForwardResult {
  Var<T> logits;                           // (N, num_classes)
  std::optional<Var<T>> flow;              // (N, 2, T-1, H, W)
  Var<T> features;                         // pre-classifier feature vector (N, D)
  std::optional<Var<T>> appearance_logits; // Initial only: appearance-stream head
};

/// Forward wiring of a variant. Combined and TwoStream run the decoder only
/// when asked for flow; Initial's motion stream is a complete conv-deconv
/// flow network, so its decoder always runs.
template <class T>
ForwardResult<T> forward_variant(ModelVariant<T>& model, Tape<T>& tape, const Var<T>& clips, FlowOutput mode) {
  const NetworkSpec& spec = spec_of(model);
  const Shape& s = clips.shape();
  if (s.rank() != 5 || s[1] != spec.in_channels || !(grid_of(s) == spec.clip)) {
    throw ShapeError("clip batch " + s.str() + " does not match network input (N," +
                     std::to_string(spec.in_channels) + "," + spec.clip.str() + ")");
  }
  const Var<T> x = spec.input_mean == 0 ? clips : shift(clips, static_cast<T>(-spec.input_mean));
  return std::visit(
      [&](auto& m) -> ForwardResult<T> {
        using M = std::decay_t<decltype(m)>;
        ForwardResult<T> r;
        if constexpr (M::kind == VariantKind::Initial) {
          auto app = m.appearance.forward(tape, x);
          auto mot = m.motion.forward(tape, x);
          r.flow = m.decoder.forward(tape, mot.conv5);
          Var<T> motion_feature = spec.motion_tap == MotionTap::Fc7 ? mot.fc7 : flatten(mot.conv5);
          r.features = channel_concat(app.fc7, motion_feature);
          r.logits = m.head(tape, r.features);
          r.appearance_logits = m.appearance_head(tape, app.fc7);
        } else if constexpr (M::kind == VariantKind::Combined) {
          auto enc = m.shared.forward(tape, x);
          r.features = enc.fc7;
          r.logits = m.cls_head(tape, enc.fc7);
          if (mode == FlowOutput::Produce) r.flow = m.decoder.forward(tape, enc.conv5);
        } else {
          auto app = m.appearance.forward(tape, x);
          auto mot = m.motion.forward(tape, x);
          r.features = channel_concat(app.fc7, mot.fc7);
          r.logits = m.fused_head(tape, r.features);
          if (mode == FlowOutput::Produce) r.flow = m.decoder.forward(tape, mot.conv5);
        }
        return r;
      },
      model);
}

/// Pre-classifier features with no gradient recording.
template <class T>
Tensor<T> extract_features(ModelVariant<T>& model, const Tensor<T>& clips) {
  Tape<T> tape(false);
  return forward_variant(model, tape, tape.constant(clips), FlowOutput::Skip).features.value();
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/manifest.txt with "path = file" lines plus one VXT1 file
// per parameter.

template <class T>
void save_checkpoint(ModelVariant<T>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw Error("cannot write " + (dir / "manifest.txt").string());
  manifest << "# variant = " << to_string(kind_of(model)) << "\n";
  for (Parameter<T>* p : parameters(model)) {
    const std::string file = p->name + ".vxt";
    save_tensor(dir / file, p->value);
    manifest << p->name << " = " << file << "\n";
  }
}

template <class T>
void load_checkpoint(ModelVariant<T>& model, const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("missing " + (dir / "manifest.txt").string());
  std::map<std::string, std::string> files;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("malformed manifest line: " + line);
    files[line.substr(0, eq)] = line.substr(eq + 3);
  }
  for (Parameter<T>* p : parameters(model)) {
    auto it = files.find(p->name);
    if (it == files.end()) throw FormatError("checkpoint lacks parameter " + p->name);
    Tensor<T> v = load_tensor<T>(dir / it->second);
    if (!(v.shape() == p->value.shape())) {
      throw FormatError("checkpoint parameter " + p->name + " has shape " + v.shape().str() + ", model expects " +
                        p->value.shape().str());
    }
    p->value = std::move(v);
  }
}

}  // namespace motion3d
