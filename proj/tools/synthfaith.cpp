#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "synthfaith/pipeline.hpp"

namespace sf = synthfaith;

namespace {

// Exit codes: 0 ok, 1 failed report row or stage error, 2 usage, 3 auth, 4 run state.
int run(int argc, char** argv) {
  CLI::App app{"Synthetic-data faithfulness pipeline"};
  app.require_subcommand(1);

  std::string run_dir;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> provider;
  bool verbose = false;
  app.add_option("--run-dir", run_dir, "Run directory")->required();
  app.add_option("--config", config_path, "Config file (JSON); required when creating a run")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override the config's seed");
  app.add_option("--provider", provider, "Override the provider kind")->check(CLI::IsMember({"remote", "mock"}));
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::string strategy_name;
  std::optional<int> n_generations;
  std::optional<int> repetitions;
  const auto strategies = CLI::IsMember({"simple", "grounding", "rewrite", "grounding_rewrite", "taxonomy"});

  app.add_subcommand("split", "Load the dataset and write the train/test split");
  app.add_subcommand("taxonomy", "Elicit the construct taxonomy");
  auto* generate = app.add_subcommand("generate", "Generate synthetic samples for one strategy");
  generate->add_option("--strategy", strategy_name, "simple|grounding|rewrite|taxonomy")->required()->check(strategies);
  generate->add_option("--n-generations", n_generations, "Texts requested per prompt (default 10)")
      ->check(CLI::PositiveNumber);
  generate->add_option("--repetitions", repetitions, "Simple-strategy prompts per polarity (default 500)")
      ->check(CLI::PositiveNumber);
  auto* clean = app.add_subcommand("clean", "Parse and clean generated completions");
  clean->add_option("--strategy", strategy_name, "Only this strategy (default: every configured one)")
      ->check(strategies);
  app.add_subcommand("discriminator", "Train the real-vs-synthetic discriminator");
  app.add_subcommand("filter", "Cull synthetic samples the discriminator flags");
  app.add_subcommand("train", "Train one classifier per dataset");
  app.add_subcommand("evaluate", "Score every classifier and baseline on the test split");
  app.add_subcommand("report", "Write the report table");
  app.add_subcommand("run", "Run every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_default_logger(spdlog::stderr_color_mt("synthfaith"));

  try {
    std::optional<sf::PipelineConfig> config;
    std::optional<std::filesystem::path> source;
    if (config_path) {
      source = *config_path;
      config = sf::PipelineConfig::load(*source);
    } else if (seed || provider) {
      const auto stored = std::filesystem::path(run_dir) / "config.json";
      if (!std::filesystem::exists(stored)) throw sf::StateError("--seed/--provider need --config for a new run");
      config = sf::PipelineConfig::load(stored);
    }
    if (config) {
      if (seed) config->seed = *seed;
      if (provider) config->provider.kind = *provider;
    }
    sf::Pipeline pipeline(run_dir, config, source);

    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    std::string table;
    bool ok = true;
    if (name == "split") {
      pipeline.split();
    } else if (name == "taxonomy") {
      pipeline.taxonomy();
    } else if (name == "generate") {
      pipeline.generate({sf::parse_strategy(strategy_name), n_generations, repetitions});
    } else if (name == "clean") {
      if (!strategy_name.empty()) {
        pipeline.clean(sf::parse_strategy(strategy_name));
      } else {
        for (auto strategy : pipeline.config().strategies) pipeline.clean(strategy);
      }
    } else if (name == "discriminator") {
      pipeline.discriminator();
    } else if (name == "filter") {
      pipeline.filter();
    } else if (name == "train") {
      pipeline.train();
    } else if (name == "evaluate") {
      pipeline.evaluate();
    } else if (name == "report") {
      ok = pipeline.report(&table);
    } else if (name == "run") {
      ok = pipeline.run_all(&table);
    }
    if (!table.empty()) std::cout << table << std::flush;
    if (!ok) {
      spdlog::error("one or more report rows failed");
      return 1;
    }
    return 0;
  } catch (const sf::AuthError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const sf::StateError& e) {
    spdlog::error("{}", e.what());
    return 4;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
