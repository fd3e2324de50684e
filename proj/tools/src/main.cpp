#include "commands.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>

namespace {

void configure_logging() {
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  if (const char* level = std::getenv("MIXPINN_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::string(level) != "off")
      spdlog::warn("MIXPINN_LOG={} is not a log level; using info", level);
    else
      spdlog::set_level(parsed);
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace mixpinn;
  configure_logging();
  ad::tune_allocator();

  CLI::App app{"mixpinn: phantom simulation, graph attention training and evaluation"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<int> seed, jobs, heads, max_epochs, sample;
  std::optional<std::string> workdir, lambda;
  bool edge_features = false, rel = false, vn = false, ve = false, paper_scale = false, linear_only = false,
       dump_config = false;

  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");
  app.add_option("--workdir", workdir, "directory holding all artifacts");
  app.add_option("--seed", seed, "seed for initialization and shuffling");
  app.add_option("--jobs", jobs, "worker threads for sweeps and ablation");
  app.add_option("--heads", heads, "attention heads per layer");
  app.add_flag("--edge-features", edge_features, "use edge features in attention");
  app.add_flag("--rel", rel, "add the rigid-edge loss");
  app.add_option("--lambda", lambda, "rigid-edge loss weight");
  app.add_flag("--vn", vn, "add one virtual node per rigid component");
  app.add_flag("--ve", ve, "add virtual edges inside rigid components");
  app.add_flag("--paper-scale", paper_scale, "8 layers, 2 heads, 256 hidden");
  app.add_flag("--linear-only", linear_only, "linear oracle on the rest geometry");
  app.add_option("--max-epochs", max_epochs, "training epoch limit");
  app.add_option("--sample", sample, "dataset sample index for predict");
  app.add_flag("--dump-config", dump_config, "print the resolved config and exit");

  for (const std::string& name : cli::command_names()) app.add_subcommand(name, "run the " + name + " stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    cli::RunConfig config;
    if (!config_path.empty()) config.merge_file(config_path);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (workdir) config.set("workdir", *workdir);
    if (seed) config.set("seed", std::to_string(*seed));
    if (jobs) config.set("jobs", std::to_string(*jobs));
    if (paper_scale) {
      config.set("model.layers", "8");
      config.set("model.heads", "2");
      config.set("model.hidden", "256");
    }
    if (heads) config.set("model.heads", std::to_string(*heads));
    if (edge_features) config.set("model.edge_features", "true");
    if (rel) config.set("train.rel", "true");
    if (lambda) config.set("train.lambda", *lambda);
    if (vn) config.set("graph.vn", "true");
    if (ve) config.set("graph.ve", "true");
    if (linear_only) config.set("sweep.linear_only", "true");
    if (max_epochs) config.set("train.max_epochs", std::to_string(*max_epochs));
    if (sample) config.set("predict.sample", std::to_string(*sample));
    config.validate();

    if (dump_config) {
      std::cout << config.dump();
      return 0;
    }
    if (app.get_subcommands().empty()) throw UsageError("a subcommand is required; run with --help for the list");
    cli::run_command(app.get_subcommands().front()->get_name(), config);
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return cli::exit_code_for(e);
  }
}
