#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "config.hpp"

int main(int argc, char** argv) {
  using namespace nado::cli;
  CLI::App app{"Constrained decoding experiments: fixtures, training, decoding, evaluation, verification."};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const ExperimentConfig&);
  };
  const Entry entries[] = {
      {"gen-fixture", "Write the base model, oracle spec and compiled automata", CmdGenFixture},
      {"train", "Train R_theta and write the checkpoint and training log", CmdTrain},
      {"decode", "Decode with the trained model; one JSON line per sequence", CmdDecode},
      {"evaluate", "Coverage, KL to q*, regularizer residual and BLEU", CmdEvaluate},
      {"verify", "Run the invariant and bound suite; exit 1 on the first failure", CmdVerify},
      {"report", "Turn the training log and evaluation into CSV", CmdReport},
  };
  std::string config_path;
  const Entry* chosen = nullptr;
  for (const Entry& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("config", config_path, "TOML experiment config")->required();
    sub->callback([&chosen, &e] { chosen = &e; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const ExperimentConfig cfg = LoadConfig(config_path);
    return chosen->run(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
