#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "overtrain/experiments.hpp"

namespace {

using namespace overtrain;

ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed) {
  ExperimentConfig cfg = path.empty() ? config_from_json(nlohmann::json::object()) : load_config(path);
  if (seed) cfg.train.seed = *seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Overtraining experiments: synthetic odor task, reversal dynamics, spike-data decoding."};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> exclude;
  std::string spikes;
  std::string spec_path;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Experiment config (JSON); defaults apply when omitted")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Seed overriding train.seed of the config");
  };

  auto* synth = app.add_subcommand("synth", "Train the odor-task network and write logs, margins, RSA, PCA");
  add_common(synth);
  synth->add_option("--out", out, "Output directory")->required();

  auto* reversal = app.add_subcommand("reversal", "Mean-field reversal theory, pretraining sweep, finite-width run");
  add_common(reversal);
  reversal->add_option("--out", out, "Output directory")->required();

  auto* decode = app.add_subcommand("decode", "Decode target vs nontarget from an NDJSON spike file");
  add_common(decode);
  decode->add_option("--spikes", spikes, "NDJSON spike file")->required()->check(CLI::ExistingFile);
  decode->add_option("--out", out, "Output directory")->required();
  decode->add_option("--exclude", exclude, "Session id to skip (repeatable); exits 5 when it matches")
      ->take_all()
      ->allow_extra_args(false);

  auto* surrogate = app.add_subcommand("surrogate", "Write a Poisson surrogate spike file");
  surrogate->add_option("--spec", spec_path, "Surrogate spec (JSON)")->required()->check(CLI::ExistingFile);
  surrogate->add_option("--out", out, "Output NDJSON path")->required();
  surrogate->add_option("--seed", seed, "Seed overriding the spec");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(load(config_path, seed), out);
    if (*reversal) return cmd_reversal(load(config_path, seed), out);
    if (*decode) {
      const int rc = cmd_decode(spikes, load(config_path, seed), out, exclude);
      if (rc == kExitExcluded) std::cerr << "session excluded; no outputs written\n";
      return rc;
    }
    if (*surrogate) {
      SurrogateSpec spec;
      try {
        spec = load_surrogate_spec(spec_path);
      } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
      }
      if (seed) spec.seed = *seed;
      return cmd_surrogate(spec, out);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitUsage;
}
