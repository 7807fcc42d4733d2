// Command-line entry point: dimac <command> [--config PATH] [--seed N] [--override key=value]...

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dimac/pipeline.hpp"

int main(int argc, char** argv) {
  using dimac::pipeline::RunConfig;

  CLI::App app{"Extract-then-abstract report summarization pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string seed;
  std::vector<std::string> overrides;
  bool print_config = false;

  for (const auto& name : dimac::pipeline::commands()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->add_option("--config", config_path, "key = value configuration file");
    sub->add_option("--seed", seed, "overrides the seed key");
    sub->add_option("--override", overrides, "dotted key=value, applied after the file")->take_all();
    sub->add_flag("--print-config", print_config, "print the effective configuration and exit");
  }
  auto* show = app.add_subcommand("config", "print the effective configuration");
  show->add_option("--config", config_path, "key = value configuration file");
  show->add_option("--seed", seed, "overrides the seed key");
  show->add_option("--override", overrides, "dotted key=value")->take_all();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& o : overrides) config.apply_override(o);
    if (!seed.empty()) config.set("seed", seed);

    const auto* sub = app.get_subcommands().front();
    if (sub->get_name() == "config" || print_config) {
      std::cout << config.to_text();
      return 0;
    }
    const auto result = dimac::pipeline::run_command(sub->get_name(), config, std::cerr);
    for (const auto& p : result.artifacts) std::cout << p.string() << "\n";
    return result.status;
  } catch (const dimac::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
