#pragma once

// Synthetic video with analytic optical flow, sample serialization, and
// import of externally computed flow.
//
// A clip is one textured shape translating at a constant per-class velocity
// over a static noise background. Flow convention: pixels per frame, channel 0
// is u (positive = rightward), channel 1 is v (positive = downward); field t
// maps frame t to frame t+1 and is non-zero only on the shape's support in
// frame t.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "motion3d/io.hpp"
#include "motion3d/kernel_stats.hpp"
#include "motion3d/tensor.hpp"

namespace motion3d {

class PairingError : public Error {
 public:
  using Error::Error;
};

enum class ShapeKind { Rectangle, Disc };

struct MotionProgram {
  double angle_deg = 0;  // 0 = rightward, 90 = downward
  double speed = 1;      // pixels per frame

  bool operator==(const MotionProgram&) const = default;
};

struct SynthConfig {
  Index num_classes = 4;
  Index clips_per_class = 22;
  Index frames = 8;
  Index height = 32;
  Index width = 32;
  std::vector<ShapeKind> shapes{ShapeKind::Rectangle, ShapeKind::Disc};
  /// Per-class motion; empty means num_classes directions evenly spaced from 0 deg at `speed`.
  std::vector<MotionProgram> programs;
  double speed = 1.0;
  Index min_size = 14;
  Index max_size = 22;
  double texture_amplitude = 0.15;
  double noise_amplitude = 0.1;
  double train_fraction = 0.75;
  std::uint64_t seed = 42;

  std::vector<MotionProgram> motion_programs() const {
    if (!programs.empty()) return programs;
    std::vector<MotionProgram> out;
    for (Index k = 0; k < num_classes; ++k) {
      out.push_back({360.0 * static_cast<double>(k) / static_cast<double>(num_classes), speed});
    }
    return out;
  }

  void validate() const {
    if (num_classes < 1 || clips_per_class < 1) throw SpecError("synth: need >= 1 class and clip");
    if (frames < 2 || height < 1 || width < 1) throw SpecError("synth: clip must have >= 2 frames");
    if (min_size < 1 || max_size < min_size || max_size > std::min(height, width)) {
      throw SpecError("synth: shape size range [" + std::to_string(min_size) + "," + std::to_string(max_size) +
                      "] does not fit the frame");
    }
    if (shapes.empty()) throw SpecError("synth: no shape kinds");
    if (train_fraction < 0 || train_fraction > 1) throw SpecError("synth: train_fraction outside [0,1]");
    const auto progs = motion_programs();
    if (static_cast<Index>(progs.size()) != num_classes) {
      throw SpecError("synth: " + std::to_string(progs.size()) + " motion programs for " +
                      std::to_string(num_classes) + " classes");
    }
    for (std::size_t i = 0; i < progs.size(); ++i) {
      if (progs[i].speed < 0) throw SpecError("synth: negative speed");
      for (std::size_t j = 0; j < i; ++j) {
        const auto a = displacement(progs[i]), b = displacement(progs[j]);
        if (a == b) throw SpecError("synth: classes " + std::to_string(j) + " and " + std::to_string(i) +
                                    " share a motion program");
      }
    }
  }

  /// Per-frame (u, v) of a program; values within 1e-9 of an integer are snapped.
  static std::pair<double, double> displacement(const MotionProgram& p) {
    const double a = p.angle_deg * std::numbers::pi / 180.0;
    auto snap = [](double v) {
      const double r = std::round(v);
      return std::abs(v - r) < 1e-9 ? r + 0.0 : v;
    };
    return {snap(p.speed * std::cos(a)), snap(p.speed * std::sin(a))};
  }
};

template <class T = float>
struct VideoSample {
  Tensor<T> frames;  // (3, T, H, W), values in [0, 1]
  Tensor<T> flow;    // (2, T-1, H, W)
  int label = 0;
};

struct Dataset {
  std::vector<VideoSample<float>> train;
  std::vector<VideoSample<float>> test;
};

namespace data_detail {

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = a * 0x9e3779b97f4a7c15ull + b + 0x632be59bd9b4e019ull;
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  return h;
}

}  // namespace data_detail

/// Renders one clip; `rng` supplies all appearance randomness, which is
/// independent of the label.
inline VideoSample<float> render_clip(const SynthConfig& cfg, const MotionProgram& program, int label,
                                      std::mt19937_64& rng) {
  const Index T = cfg.frames, H = cfg.height, W = cfg.width;
  const auto [u, v] = SynthConfig::displacement(program);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const Index size = std::uniform_int_distribution<Index>(cfg.min_size, cfg.max_size)(rng);
  const ShapeKind kind =
      cfg.shapes[std::uniform_int_distribution<std::size_t>(0, cfg.shapes.size() - 1)(rng)];

  // feasible start range so the whole trajectory stays inside the frame
  const double dx = u * static_cast<double>(T - 1), dy = v * static_cast<double>(T - 1);
  const double x_lo = std::max(0.0, -dx), x_hi = static_cast<double>(W - size) - std::max(0.0, dx);
  const double y_lo = std::max(0.0, -dy), y_hi = static_cast<double>(H - size) - std::max(0.0, dy);
  const Index xs_lo = static_cast<Index>(std::ceil(x_lo)), xs_hi = static_cast<Index>(std::floor(x_hi));
  const Index ys_lo = static_cast<Index>(std::ceil(y_lo)), ys_hi = static_cast<Index>(std::floor(y_hi));
  if (xs_hi < xs_lo || ys_hi < ys_lo) {
    throw SpecError("synth: speed " + std::to_string(program.speed) + " moves a " + std::to_string(size) +
                    "px shape out of a " + std::to_string(W) + "x" + std::to_string(H) + " frame within " +
                    std::to_string(T) + " frames");
  }
  auto pick_start = [&](Index lo, Index hi) {
    return static_cast<double>(std::uniform_int_distribution<Index>(lo, hi)(rng));
  };
  const double x0 = pick_start(xs_lo, xs_hi), y0 = pick_start(ys_lo, ys_hi);

  double color[3];
  for (double& c : color) c = uni(0.0, 1.0);
  std::vector<double> texture(static_cast<std::size_t>(size * size));
  for (double& t : texture) t = uni(-cfg.texture_amplitude, cfg.texture_amplitude);
  const double base = uni(0.3, 0.7);
  std::vector<double> background(static_cast<std::size_t>(3 * H * W));
  for (double& b : background) b = base + uni(-cfg.noise_amplitude, cfg.noise_amplitude);

  const double c = static_cast<double>(size - 1) / 2.0, r2 = static_cast<double>(size * size) / 4.0;
  auto inside = [&](Index lx, Index ly) {
    if (lx < 0 || ly < 0 || lx >= size || ly >= size) return false;
    if (kind == ShapeKind::Rectangle) return true;
    const double ex = static_cast<double>(lx) - c, ey = static_cast<double>(ly) - c;
    return ex * ex + ey * ey <= r2;
  };

  VideoSample<float> s{Tensor<float>(Shape{3, T, H, W}), Tensor<float>(Shape{2, T - 1, H, W}), label};
  for (Index t = 0; t < T; ++t) {
    const Index ox = std::llround(x0 + u * static_cast<double>(t));
    const Index oy = std::llround(y0 + v * static_cast<double>(t));
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const bool in = inside(x - ox, y - oy);
        for (Index ch = 0; ch < 3; ++ch) {
          double val = background[static_cast<std::size_t>((ch * H + y) * W + x)];
          if (in) val = color[ch] + texture[static_cast<std::size_t>((y - oy) * size + (x - ox))];
          s.frames.at(ch, t, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
        if (in && t + 1 < T) {
          s.flow.at(0, t, y, x) = static_cast<float>(u);
          s.flow.at(1, t, y, x) = static_cast<float>(v);
        }
      }
  }
  count_kernel(Kernel::FlowTarget);
  return s;
}

/// Deterministic dataset; per class the first floor(train_fraction * n) clips
/// go to train, the rest to test.
inline Dataset gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const auto programs = cfg.motion_programs();
  Dataset ds;
  const Index n_train = static_cast<Index>(std::floor(cfg.train_fraction * static_cast<double>(cfg.clips_per_class)));
  for (Index k = 0; k < cfg.num_classes; ++k) {
    for (Index i = 0; i < cfg.clips_per_class; ++i) {
      std::mt19937_64 rng(data_detail::mix(data_detail::mix(cfg.seed, static_cast<std::uint64_t>(k)),
                                           static_cast<std::uint64_t>(i)));
      auto sample = render_clip(cfg, programs[static_cast<std::size_t>(k)], static_cast<int>(k), rng);
      (i < n_train ? ds.train : ds.test).push_back(std::move(sample));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization: <stem>.vxt (frames), <stem>.vxf (flow), <stem>.lbl (label).

inline void save_sample(const std::filesystem::path& stem, const VideoSample<float>& s) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  save_tensor(std::filesystem::path(stem.string() + ".vxt"), s.frames);
  save_flow(std::filesystem::path(stem.string() + ".vxf"), s.flow);
  std::ofstream lbl(stem.string() + ".lbl");
  if (!lbl) throw Error("cannot write " + stem.string() + ".lbl");
  lbl << s.label << "\n";
}

inline VideoSample<float> load_sample(const std::filesystem::path& stem) {
  VideoSample<float> s;
  s.frames = load_tensor<float>(stem.string() + ".vxt");
  s.flow = load_flow<float>(stem.string() + ".vxf");
  std::ifstream lbl(stem.string() + ".lbl");
  if (!(lbl >> s.label) || s.label < 0) throw FormatError("bad label file " + stem.string() + ".lbl");
  const Shape& f = s.frames.shape();
  const Shape& g = s.flow.shape();
  if (f.rank() != 4 || f[0] != 3 || g[1] != f[1] - 1 || g[2] != f[2] || g[3] != f[3]) {
    throw FormatError(stem.string() + ": frames " + f.str() + " and flow " + g.str() + " do not pair");
  }
  return s;
}

inline std::string clip_name(std::size_t idx) {
  std::string s = std::to_string(idx);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

/// Writes `<root>/<split>/<class>/<clip>.{vxt,vxf,lbl}`.
inline void save_split(const std::filesystem::path& root, const std::string& split,
                       std::span<const VideoSample<float>> samples) {
  std::vector<std::size_t> per_class;
  for (const auto& s : samples) {
    const auto k = static_cast<std::size_t>(s.label);
    if (per_class.size() <= k) per_class.resize(k + 1, 0);
    save_sample(root / split / std::to_string(k) / clip_name(per_class[k]++), s);
  }
}

/// Loads a split in lexicographic path order.
inline std::vector<VideoSample<float>> load_split(const std::filesystem::path& root, const std::string& split) {
  const auto dir = root / split;
  if (!std::filesystem::is_directory(dir)) throw FormatError("missing split directory " + dir.string());
  std::vector<std::filesystem::path> stems;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".lbl") stems.push_back(e.path().parent_path() / e.path().stem());
  }
  std::sort(stems.begin(), stems.end());
  std::vector<VideoSample<float>> out;
  for (const auto& s : stems) out.push_back(load_sample(s));
  return out;
}

inline void save_dataset(const std::filesystem::path& root, const Dataset& ds) {
  save_split(root, "train", ds.train);
  save_split(root, "test", ds.test);
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  return {load_split(root, "train"), load_split(root, "test")};
}

// ---------------------------------------------------------------------------
// External flow import: a directory of per-frame VXT1 files (3, H, W) and
// one VXF1 file per consecutive frame pair.

/// Writes a clip as per-frame tensors and per-step flow files (the import layout).
inline void export_clip(const VideoSample<float>& s, const std::filesystem::path& frames_dir,
                        const std::filesystem::path& flow_dir) {
  std::filesystem::create_directories(frames_dir);
  std::filesystem::create_directories(flow_dir);
  const Index T = s.frames.dim(1), H = s.frames.dim(2), W = s.frames.dim(3);
  for (Index t = 0; t < T; ++t) {
    Tensor<float> f(Shape{3, H, W});
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < H * W; ++i) f[c * H * W + i] = s.frames[(c * T + t) * H * W + i];
    save_tensor(frames_dir / (clip_name(static_cast<std::size_t>(t)) + ".vxt"), f);
    if (t + 1 < T) {
      Tensor<float> g(Shape{2, 1, H, W});
      for (Index c = 0; c < 2; ++c)
        for (Index i = 0; i < H * W; ++i) g[c * H * W + i] = s.flow[(c * (T - 1) + t) * H * W + i];
      save_flow(flow_dir / (clip_name(static_cast<std::size_t>(t)) + ".vxf"), g);
    }
  }
}

inline VideoSample<float> import_flow(const std::filesystem::path& frames_dir,
                                      std::span<const std::filesystem::path> flow_files, int label) {
  std::vector<std::filesystem::path> frame_files;
  for (const auto& e : std::filesystem::directory_iterator(frames_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".vxt") frame_files.push_back(e.path());
  }
  std::sort(frame_files.begin(), frame_files.end());
  const Index T = static_cast<Index>(frame_files.size());
  if (T < 2 || static_cast<Index>(flow_files.size()) != T - 1) {
    throw PairingError(std::to_string(T) + " frames need " + std::to_string(std::max<Index>(T - 1, 1)) +
                       " flow files, got " + std::to_string(flow_files.size()));
  }
  Tensor<float> first = load_tensor<float>(frame_files[0]);
  if (first.shape().rank() != 3 || first.dim(0) != 3) {
    throw FormatError(frame_files[0].string() + ": expected a (3,H,W) frame, got " + first.shape().str());
  }
  const Index H = first.dim(1), W = first.dim(2);
  VideoSample<float> s{Tensor<float>(Shape{3, T, H, W}), Tensor<float>(Shape{2, T - 1, H, W}), label};
  for (Index t = 0; t < T; ++t) {
    const Tensor<float> f = t == 0 ? first : load_tensor<float>(frame_files[static_cast<std::size_t>(t)]);
    if (!(f.shape() == first.shape())) throw PairingError(frame_files[static_cast<std::size_t>(t)].string() + ": frame size differs");
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < H * W; ++i) s.frames[(c * T + t) * H * W + i] = f[c * H * W + i];
  }
  for (Index t = 0; t < T - 1; ++t) {
    const Tensor<float> g = load_flow<float>(flow_files[static_cast<std::size_t>(t)]);
    if (g.dim(1) != 1 || g.dim(2) != H || g.dim(3) != W) {
      throw PairingError(flow_files[static_cast<std::size_t>(t)].string() + ": flow " + g.shape().str() +
                         " does not match frames " + std::to_string(H) + "x" + std::to_string(W));
    }
    for (Index c = 0; c < 2; ++c)
      for (Index i = 0; i < H * W; ++i) s.flow[(c * (T - 1) + t) * H * W + i] = g[c * H * W + i];
  }
  count_kernel(Kernel::FlowTarget);
  return s;
}

// ---------------------------------------------------------------------------

template <class T>
struct Batch {
  Tensor<T> clips;  // (N, 3, T, H, W)
  Tensor<T> flow;   // (N, 2, T-1, H, W)
  std::vector<int> labels;
};

template <class T>
Batch<T> make_batch(std::span<const VideoSample<float>> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("empty batch");
  const Shape& f = samples[indices[0]].frames.shape();
  const Shape& g = samples[indices[0]].flow.shape();
  const Index n = static_cast<Index>(indices.size());
  Batch<T> b{Tensor<T>(Shape{n, f[0], f[1], f[2], f[3]}), Tensor<T>(Shape{n, g[0], g[1], g[2], g[3]}), {}};
  for (Index i = 0; i < n; ++i) {
    const auto& s = samples[indices[static_cast<std::size_t>(i)]];
    if (!(s.frames.shape() == f) || !(s.flow.shape() == g)) throw ShapeError("batch samples differ in shape");
    std::copy(s.frames.data().begin(), s.frames.data().end(), b.clips.data().begin() + i * f.numel());
    std::copy(s.flow.data().begin(), s.flow.data().end(), b.flow.data().begin() + i * g.numel());
    b.labels.push_back(s.label);
  }
  return b;
}

}  // namespace motion3d
