#pragma once

// Subcommand bodies behind the motion3d executable. Each takes a validated
// RunConfig, writes a human-readable report to `out` and returns an exit
// status; library errors propagate to the caller.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "motion3d/config.hpp"

namespace motion3d {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

namespace cmd_detail {

inline Dataset dataset_for(const RunConfig& cfg) {
  if (cfg.data.empty()) return gen_synthetic(cfg.synth);
  if (!std::filesystem::is_directory(cfg.data)) throw ConfigError("run.data: no dataset at " + cfg.data);
  return load_dataset(cfg.data);
}

/// `<out>/<variant>-YYYYmmdd-HHMMSS`, with a numeric suffix if that exists.
inline std::filesystem::path make_run_dir(const RunConfig& cfg) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << to_string(cfg.variant) << "-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  std::filesystem::path dir = std::filesystem::path(cfg.out) / stamp.str();
  for (int n = 2; std::filesystem::exists(dir); ++n) {
    dir = std::filesystem::path(cfg.out) / (stamp.str() + "-" + std::to_string(n));
  }
  std::filesystem::create_directories(dir);
  return dir;
}

/// Accepts a checkpoint directory or a run directory holding one.
inline std::filesystem::path checkpoint_dir(const std::string& path) {
  if (path.empty()) throw ConfigError("run.checkpoint: required (--checkpoint DIR)");
  const std::filesystem::path p(path);
  if (std::filesystem::exists(p / "manifest.txt")) return p;
  if (std::filesystem::exists(p / "checkpoint" / "manifest.txt")) return p / "checkpoint";
  throw ConfigError("run.checkpoint: no checkpoint manifest under " + path);
}

}  // namespace cmd_detail

inline int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  if (cfg.data.empty()) throw ConfigError("run.data: gen-data needs a target directory (--data DIR)");
  const Dataset ds = gen_synthetic(cfg.synth);
  save_dataset(cfg.data, ds);
  std::ofstream(std::filesystem::path(cfg.data) / "config.txt") << echo_config(cfg);
  out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test clips to " << cfg.data << "\n";
  return kExitOk;
}

/// Trains into a fresh run directory (config echo, metrics.csv, checkpoint/).
/// The directory is returned through `run_dir` when given.
inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::filesystem::path* run_dir = nullptr) {
  const Dataset ds = cmd_detail::dataset_for(cfg);
  const std::filesystem::path dir = cmd_detail::make_run_dir(cfg);
  if (run_dir) *run_dir = dir;
  {
    std::ofstream echo(dir / "config.txt");
    echo << echo_config(cfg);
    if (!echo) throw Error("cannot write " + (dir / "config.txt").string());
  }
  out << "run directory: " << dir.string() << "\n";

  auto model = make_model<float>(cfg.variant, cfg.network(), cfg.seed);
  std::ofstream csv(dir / "metrics.csv");
  csv << metrics_csv_header() << "\n";
  out << metrics_csv_header() << "\n";
  const auto history = train(model, ds, cfg.training(), [&](const Metrics& m) {
    const std::string row = metrics_csv_row(m);
    csv << row << "\n" << std::flush;
    out << row << "\n" << std::flush;
  });
  if (!csv) throw Error("cannot write " + (dir / "metrics.csv").string());
  save_checkpoint(model, dir / "checkpoint");
  const Metrics& last = history.back();
  out << "final: train_acc " << last.train_acc << ", test_acc " << last.test_acc << ", train EPE " << last.flow_epe
      << " px after " << last.epoch << " epochs\n";
  return kExitOk;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const Dataset ds = cmd_detail::dataset_for(cfg);
  auto model = make_model<float>(cfg.variant, cfg.network(), cfg.seed);
  load_checkpoint(model, cmd_detail::checkpoint_dir(cfg.checkpoint));
  out << std::fixed << std::setprecision(4);
  out << "split  accuracy  flow_epe\n";
  const EvalResult tr = evaluate(model, ds.train);
  out << "train  " << tr.accuracy << "    " << tr.flow_epe << "\n";
  if (!ds.test.empty()) {
    const EvalResult te = evaluate(model, ds.test);
    out << "test   " << te.accuracy << "    " << te.flow_epe << "\n";
    const ParityResult p = pipeline_parity(model, ds, cfg.train.classifier);
    out << "linear classifier on features: test accuracy " << p.linear_accuracy << " (softmax "
        << p.softmax_accuracy << ", gap " << p.gap() << ")\n";
  }
  return kExitOk;
}

/// Fixed order: combined, twostream, initial.
inline int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  const BenchConfig bc = cfg.benchmark();
  std::vector<BenchResult> results;
  for (VariantKind k : {VariantKind::Combined, VariantKind::TwoStream, VariantKind::Initial}) {
    results.push_back(benchmark_fps(k, bc));
  }
  out << "batch " << bc.batch << ", clip " << bc.spec.clip.str() << ", " << results.front().runs << " timed runs, "
      << (bc.with_flow ? "with" : "without") << " flow output\n";
  out << std::left << std::setw(11) << "variant" << std::right << std::setw(10) << "fps" << std::setw(10) << "clips/s"
      << std::setw(12) << "median_ms" << std::setw(9) << "kernels" << std::setw(14) << "flow_targets" << "\n";
  std::uint64_t flow_targets = 0;
  for (const auto& r : results) {
    out << std::left << std::setw(11) << to_string(r.variant) << std::right << std::fixed << std::setprecision(1)
        << std::setw(10) << r.fps << std::setw(10) << r.clips_per_second << std::setprecision(3) << std::setw(12)
        << r.median_seconds * 1e3 << std::setw(9) << r.kernels_per_pass.network_total() << std::setw(14)
        << r.flow_target_calls << "\n";
    flow_targets += r.flow_target_calls;
  }
  out << "ordering combined >= twostream >= initial: " << (throughput_ordering_holds(results) ? "PASS" : "FAIL")
      << "\n";
  out << "flow-target computations during inference: " << flow_targets << (flow_targets == 0 ? " (PASS)" : " (FAIL)")
      << "\n";
  return kExitOk;
}

/// Nonzero (numeric failure) if any check exceeds the tolerance.
inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  out << std::scientific << std::setprecision(2);
  run_gradient_suite(cfg.gradcheck, [&](const GradCheckResult& r) {
    ok = ok && r.passed;
    out << std::left << std::setw(24) << r.name << " max rel err " << r.max_rel_error << "  "
        << (r.passed ? "PASS" : "FAIL") << "\n"
        << std::flush;
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << std::fixed << std::setprecision(1) << "tolerance " << std::scientific << std::setprecision(0)
      << cfg.gradcheck.tolerance << ", " << std::fixed << std::setprecision(1) << secs << " s: "
      << (ok ? "all passed" : "FAILED") << "\n";
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace motion3d
