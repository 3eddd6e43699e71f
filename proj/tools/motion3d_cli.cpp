#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "motion3d/commands.hpp"

using namespace motion3d;

namespace {

// Flags shared by every subcommand; applied over the config file in this order:
// file, --set assignments, named flags.
struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> variant;
  std::optional<double> lambda_flow;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<std::string> out, data, checkpoint;
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "Config file of `section.key = value` lines");
  sub->add_option("--set", f.sets, "Override one key, e.g. --set train.epochs=20 (repeatable)");
  sub->add_option("--variant", f.variant, "initial, combined or twostream");
  sub->add_option("--lambda-flow", f.lambda_flow, "Weight of the flow loss");
  sub->add_option("--seed", f.seed, "Model init and minibatch-order seed");
  sub->add_flag("--deterministic", f.deterministic, "Reproducible metrics (fps column reported as 0)");
  sub->add_option("--out", f.out, "Parent directory for run directories");
  sub->add_option("--data", f.data, "Dataset tree (gen-data target; train/eval source)");
  sub->add_option("--checkpoint", f.checkpoint, "Checkpoint or run directory for eval");
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg = load_config(f.config);
  for (const auto& s : f.sets) apply_override(cfg, s);
  if (f.variant) set_option(cfg, "run.variant", *f.variant);
  if (f.lambda_flow) cfg.train.lambda_flow = *f.lambda_flow;
  if (f.seed) cfg.seed = *f.seed;
  if (f.deterministic) cfg.train.deterministic = true;
  if (f.out) cfg.out = *f.out;
  if (f.data) cfg.data = *f.data;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  validate_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motion3d: two-stream 3D CNNs with a voxel-wise flow loss"};
  app.require_subcommand(1);
  Flags flags;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&, std::ostream&);
  };
  const Command commands[] = {
      {"gen-data", "Write a synthetic dataset tree to --data", cmd_gen_data},
      {"train", "Train a variant into a timestamped run directory under --out",
       [](const RunConfig& c, std::ostream& o) { return cmd_train(c, o); }},
      {"eval", "Accuracy, EPE and linear-classifier parity of a checkpoint", cmd_eval},
      {"bench", "Classification-only inference fps of all three variants", cmd_bench},
      {"gradcheck", "Finite-difference gradient suite", cmd_gradcheck},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_flags(sub, flags);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    for (auto [sub, c] : subs) {
      if (sub->parsed()) return c->run(resolve(flags), std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
