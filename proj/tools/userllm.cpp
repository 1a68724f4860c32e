// userllm <datagen|pretrain|cotrain|eval|flops> --config <path> [--seed INT] [--out DIR]

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "userllm/harness/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"User-LLM desk-scale pipeline"};
  std::string command, config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  app.add_option("command", command, "Pipeline step")
      ->required()
      ->check(CLI::IsMember({"datagen", "pretrain", "cotrain", "eval", "flops"}));
  app.add_option("--config", config_path, "Experiment config (JSON)")->required();
  app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", out_dir, "Artifact directory");
  CLI11_PARSE(app, argc, argv);

  userllm::ExperimentConfig config;
  try {
    config = userllm::load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "userllm " << command << ": " << e.what() << '\n';
    return 2;
  }
  if (seed) userllm::set_seed(config, *seed);
  return userllm::run(command, config, out_dir, std::cerr);
}
