#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "spikekd/cli.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::string> ela_variant;
  std::optional<std::string> sta_variant;
  std::optional<std::string> out;
};

const char* describe(const std::string& name) {
  if (name == "gen-data") return "Write train/test CSVs and a manifest (synthetic clusters or validated CSV input)";
  if (name == "train-teacher") return "Train the ReLU MLP teacher and export its logits";
  if (name == "train-student") return "Train the spiking student with the configured objective";
  if (name == "eval") return "Per-timestep and aggregated accuracy of a trained student";
  if (name == "diagnose") return "Gradient statistics per layer and the temporal-accuracy report";
  return "Spike-driven operation counts and energy estimate on the test split";
}

}  // namespace

int main(int argc, char** argv) {
  using namespace spikekd;
  CLI::App app{"Spiking-student distillation toolkit"};
  app.require_subcommand(1);
  app.footer("\nCommands: gen-data | train-teacher | train-student | eval | diagnose | energy\n\n" +
             cli::config_reference());

  Flags flags;
  for (const auto& name : cli::command_names()) {
    CLI::App* sub = app.add_subcommand(name, describe(name));
    sub->add_option("-c,--config", flags.config, "JSON run config")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Override config seed");
    sub->add_option("--method", flags.method, "ce-only | timestep-kd | ela | sta | uta | seal");
    sub->add_option("--ela-variant", flags.ela_variant, "ours | S | A | AS | Both");
    sub->add_option("--sta-variant", flags.sta_variant, "ours | no-conf | no-sim | dist");
    sub->add_option("--out", flags.out, "Override paths.out");
  }

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    cli::RunConfig config = cli::load_config(flags.config);
    cli::Overrides o;
    o.seed = flags.seed;
    o.method = flags.method;
    o.ela_variant = flags.ela_variant;
    o.sta_variant = flags.sta_variant;
    if (flags.out) o.out = *flags.out;
    cli::apply_overrides(config, o);
    for (const auto& path : cli::run_command(command, config)) std::cout << path.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "spikekd " << command << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
