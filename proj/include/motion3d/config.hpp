#pragma once

// Run configuration: flat `section.key = value` text with a fixed schema.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "motion3d/data.hpp"
#include "motion3d/gradient_suite.hpp"
#include "motion3d/networks.hpp"
#include "motion3d/train.hpp"

namespace motion3d {

struct RunConfig {
  VariantKind variant = VariantKind::TwoStream;
  std::uint64_t seed = 42;  // model init and minibatch order
  std::string out = "runs";
  std::string data;        // dataset tree; empty = generate from data.*
  std::string checkpoint;  // for eval
  NetworkSpec net = NetworkSpec::desk_scale();
  SynthConfig synth;
  TrainConfig train = [] {
    TrainConfig t;
    t.deterministic = false;  // --deterministic turns off the fps column
    return t;
  }();
  BenchConfig bench;
  GradientSuiteConfig gradcheck;

  /// Network spec with the clip geometry and class count taken from data.*.
  NetworkSpec network() const {
    NetworkSpec s = net;
    s.clip = {synth.frames, synth.height, synth.width};
    s.num_classes = synth.num_classes;
    return s;
  }

  TrainConfig training() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  BenchConfig benchmark() const {
    BenchConfig b = bench;
    b.spec = network();
    return b;
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

template <class N>
N number(const std::string& s) {
  N v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("'" + s + "' is not a valid number");
  return v;
}

inline std::string format(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline bool boolean(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("'" + s + "' is not true/false");
}

inline Extent3 extent(const std::string& s) {
  const auto parts = split(s, 'x');
  if (parts.size() != 3) throw ConfigError("'" + s + "' is not TxHxW");
  return {number<Index>(parts[0]), number<Index>(parts[1]), number<Index>(parts[2])};
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MOTION3D_FIELD(key, member, parse, show)                                  \
  Field {                                                                        \
    key, [](RunConfig& c, const std::string& v) { c.member = parse(v); },        \
        [](const RunConfig& c) -> std::string { return show(c.member); }         \
  }

inline std::string show_index(Index v) { return std::to_string(v); }
inline std::string show_u64(std::uint64_t v) { return std::to_string(v); }
inline std::string show_bool(bool v) { return v ? "true" : "false"; }
inline std::string show_string(const std::string& v) { return v; }
inline std::string show_extent(const Extent3& e) { return e.str(); }
inline std::string as_string(const std::string& v) { return v; }
inline Index idx(const std::string& v) { return number<Index>(v); }
inline std::uint64_t u64(const std::string& v) { return number<std::uint64_t>(v); }
inline double dbl(const std::string& v) { return number<double>(v); }

inline const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f{
        Field{"run.variant", [](RunConfig& c, const std::string& v) { c.variant = parse_variant(v); },
              [](const RunConfig& c) -> std::string { return to_string(c.variant); }},
        MOTION3D_FIELD("run.seed", seed, u64, show_u64),
        MOTION3D_FIELD("run.out", out, as_string, show_string),
        MOTION3D_FIELD("run.data", data, as_string, show_string),
        MOTION3D_FIELD("run.checkpoint", checkpoint, as_string, show_string),

        Field{"net.conv_channels",
              [](RunConfig& c, const std::string& v) {
                const auto parts = split(v, ',');
                if (parts.size() != NetworkSpec::kStages) throw ConfigError("expected 5 comma-separated counts");
                for (std::size_t i = 0; i < parts.size(); ++i) c.net.base_conv_channels[i] = number<Index>(parts[i]);
              },
              [](const RunConfig& c) {
                std::string s;
                for (Index v : c.net.base_conv_channels) s += (s.empty() ? "" : ",") + std::to_string(v);
                return s;
              }},
        MOTION3D_FIELD("net.fc_width", net.base_fc_width, idx, show_index),
        MOTION3D_FIELD("net.width_factor", net.width_factor, dbl, format),
        MOTION3D_FIELD("net.kernel", net.kernel, extent, show_extent),
        MOTION3D_FIELD("net.padding", net.padding, extent, show_extent),
        Field{"net.pools",
              [](RunConfig& c, const std::string& v) {
                const auto parts = split(v, ',');
                if (parts.size() != NetworkSpec::kStages) throw ConfigError("expected 5 comma-separated pools");
                for (std::size_t i = 0; i < parts.size(); ++i) {
                  c.net.pools[i] = parts[i] == "none" ? std::nullopt : std::optional<Extent3>(extent(parts[i]));
                }
              },
              [](const RunConfig& c) {
                std::string s;
                for (const auto& p : c.net.pools) s += (s.empty() ? "" : ",") + (p ? p->str() : std::string("none"));
                return s;
              }},
        Field{"net.motion_tap",
              [](RunConfig& c, const std::string& v) {
                if (v == "fc7") c.net.motion_tap = MotionTap::Fc7;
                else if (v == "conv5") c.net.motion_tap = MotionTap::Conv5;
                else throw ConfigError("'" + v + "' is not fc7/conv5");
              },
              [](const RunConfig& c) -> std::string { return c.net.motion_tap == MotionTap::Fc7 ? "fc7" : "conv5"; }},
        MOTION3D_FIELD("net.input_mean", net.input_mean, dbl, format),

        MOTION3D_FIELD("data.num_classes", synth.num_classes, idx, show_index),
        MOTION3D_FIELD("data.clips_per_class", synth.clips_per_class, idx, show_index),
        MOTION3D_FIELD("data.frames", synth.frames, idx, show_index),
        MOTION3D_FIELD("data.height", synth.height, idx, show_index),
        MOTION3D_FIELD("data.width", synth.width, idx, show_index),
        Field{"data.shapes",
              [](RunConfig& c, const std::string& v) {
                c.synth.shapes.clear();
                for (const auto& p : split(v, ',')) {
                  if (p == "rectangle") c.synth.shapes.push_back(ShapeKind::Rectangle);
                  else if (p == "disc") c.synth.shapes.push_back(ShapeKind::Disc);
                  else throw ConfigError("'" + p + "' is not rectangle/disc");
                }
              },
              [](const RunConfig& c) {
                std::string s;
                for (ShapeKind k : c.synth.shapes) s += (s.empty() ? "" : ",") + std::string(k == ShapeKind::Disc ? "disc" : "rectangle");
                return s;
              }},
        // angle:speed pairs, one per class; empty = evenly spaced directions
        Field{"data.programs",
              [](RunConfig& c, const std::string& v) {
                c.synth.programs.clear();
                if (v.empty()) return;
                for (const auto& p : split(v, ',')) {
                  const auto ab = split(p, ':');
                  if (ab.size() != 2) throw ConfigError("'" + p + "' is not angle:speed");
                  c.synth.programs.push_back({number<double>(ab[0]), number<double>(ab[1])});
                }
              },
              [](const RunConfig& c) {
                std::string s;
                for (const auto& p : c.synth.programs) s += (s.empty() ? "" : ",") + format(p.angle_deg) + ":" + format(p.speed);
                return s;
              }},
        MOTION3D_FIELD("data.speed", synth.speed, dbl, format),
        MOTION3D_FIELD("data.min_size", synth.min_size, idx, show_index),
        MOTION3D_FIELD("data.max_size", synth.max_size, idx, show_index),
        MOTION3D_FIELD("data.texture_amplitude", synth.texture_amplitude, dbl, format),
        MOTION3D_FIELD("data.noise_amplitude", synth.noise_amplitude, dbl, format),
        MOTION3D_FIELD("data.train_fraction", synth.train_fraction, dbl, format),
        MOTION3D_FIELD("data.seed", synth.seed, u64, show_u64),

        MOTION3D_FIELD("train.learning_rate", train.learning_rate, dbl, format),
        MOTION3D_FIELD("train.momentum", train.momentum, dbl, format),
        MOTION3D_FIELD("train.weight_decay", train.weight_decay, dbl, format),
        MOTION3D_FIELD("train.batch_size", train.batch_size, idx, show_index),
        MOTION3D_FIELD("train.epochs", train.epochs, idx, show_index),
        MOTION3D_FIELD("train.lambda_flow", train.lambda_flow, dbl, format),
        MOTION3D_FIELD("train.lr_decay_factor", train.lr_decay_factor, dbl, format),
        MOTION3D_FIELD("train.lr_decay_every", train.lr_decay_every, idx, show_index),
        MOTION3D_FIELD("train.stop_train_acc", train.stop_train_acc, dbl, format),
        MOTION3D_FIELD("train.stop_train_epe", train.stop_train_epe, dbl, format),
        MOTION3D_FIELD("train.deterministic", train.deterministic, boolean, show_bool),
        MOTION3D_FIELD("classifier.lambda", train.classifier.lambda, dbl, format),
        MOTION3D_FIELD("classifier.learning_rate", train.classifier.learning_rate, dbl, format),
        MOTION3D_FIELD("classifier.epochs", train.classifier.epochs, idx, show_index),
        MOTION3D_FIELD("classifier.seed", train.classifier.seed, u64, show_u64),

        MOTION3D_FIELD("bench.batch", bench.batch, idx, show_index),
        MOTION3D_FIELD("bench.warmup", bench.warmup, idx, show_index),
        MOTION3D_FIELD("bench.runs", bench.runs, idx, show_index),
        MOTION3D_FIELD("bench.with_flow", bench.with_flow, boolean, show_bool),
        MOTION3D_FIELD("bench.seed", bench.seed, u64, show_u64),

        MOTION3D_FIELD("gradcheck.tolerance", gradcheck.tolerance, dbl, format),
        MOTION3D_FIELD("gradcheck.eps", gradcheck.eps, dbl, format),
        MOTION3D_FIELD("gradcheck.draws", gradcheck.draws, idx, show_index),
        MOTION3D_FIELD("gradcheck.seed", gradcheck.seed, u64, show_u64),
    };
    return f;
  }();
  return fields;
}

#undef MOTION3D_FIELD

}  // namespace config_detail

/// Keys accepted by set_option / parse_config, in echo order.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : config_detail::schema()) out.push_back(f.key);
  return out;
}

/// Assigns one key; unknown keys and malformed values throw ConfigError naming the key.
inline void set_option(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : config_detail::schema()) {
    if (f.key != key) continue;
    try {
      f.set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_option(const RunConfig& cfg, const std::string& key) {
  for (const auto& f : config_detail::schema())
    if (f.key == key) return f.get(cfg);
  throw ConfigError("unknown config key '" + key + "'");
}

/// `key=value` override, as given on the command line.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_option(cfg, config_detail::trim(assignment.substr(0, eq)), config_detail::trim(assignment.substr(eq + 1)));
}

/// Parses config text on top of `cfg`. '#' starts a comment line.
inline void parse_config(RunConfig& cfg, std::istream& in, const std::string& source = "config") {
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(n) + ": expected 'section.key = value'");
    }
    try {
      set_option(cfg, config_detail::trim(t.substr(0, eq)), config_detail::trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  parse_config(cfg, in, path.string());
  return cfg;
}

/// Every key with its effective value; parse_config of this text restores cfg.
inline std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : config_detail::schema()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

/// Cross-field checks, reported as ConfigError.
inline void validate_config(const RunConfig& cfg) {
  try {
    cfg.synth.validate();
    cfg.network().validate();
  } catch (const SpecError& e) {
    throw ConfigError(e.what());
  }
  try {
    cfg.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train.") + e.what());
  }
  if (cfg.bench.batch < 1) throw ConfigError("bench.batch: must be >= 1");
  if (!(cfg.gradcheck.eps >= 1e-7 && cfg.gradcheck.eps <= 1e-3)) throw ConfigError("gradcheck.eps: outside [1e-7, 1e-3]");
}

}  // namespace motion3d
