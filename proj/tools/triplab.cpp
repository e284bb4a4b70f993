// Command-line front end: dataset generation, statistics, training,
// evaluation and ablation over key=value config files.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "triplab/commands.hpp"

namespace {

struct SubArgs {
  std::string config;
  std::int64_t seed = -1;
  bool force = false;
  bool overlays = false;
};

void add_common(CLI::App* sub, SubArgs& args) {
  sub->add_option("--config", args.config, "key=value config file")->required();
  sub->add_option("--seed", args.seed, "override the config seed");
  sub->add_flag("--force", args.force, "overwrite existing outputs");
  sub->add_flag("--overlays", args.overlays, "write annotated preview images");
}

triplab::CommandOptions make_options(const SubArgs& args) {
  triplab::CommandOptions opt;
  if (args.seed >= 0) opt.seed = static_cast<std::uint64_t>(args.seed);
  opt.force = args.force;
  opt.overlays = args.overlays;
  if (const char* dir = std::getenv("TRIPLAB_DATA_DIR")) opt.data_dir = dir;
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"surgical action-triplet recognition on synthetic laparoscopy scenes"};
  app.require_subcommand(1);

  SubArgs generate_args, stats_args, train_args, evaluate_args, ablate_args;
  CLI::App* generate = app.add_subcommand("generate", "render a synthetic dataset to disk");
  CLI::App* stats = app.add_subcommand("stats", "summarize an annotation set");
  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a dataset split");
  CLI::App* ablate = app.add_subcommand("ablate", "train and compare model variants");
  add_common(generate, generate_args);
  add_common(stats, stats_args);
  add_common(train, train_args);
  add_common(evaluate, evaluate_args);
  add_common(ablate, ablate_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? triplab::kExitOk : triplab::kExitUsage;
  }

  const auto dispatch = [&](const SubArgs& args,
                            int (*fn)(const triplab::KeyValueConfig&, const triplab::CommandOptions&,
                                      std::ostream&)) {
    const auto cfg = triplab::KeyValueConfig::parse_file(args.config);
    return fn(cfg, make_options(args), std::cout);
  };

  try {
    if (generate->parsed()) return dispatch(generate_args, triplab::run_generate);
    if (stats->parsed()) return dispatch(stats_args, triplab::run_stats);
    if (train->parsed()) return dispatch(train_args, triplab::run_train);
    if (evaluate->parsed()) return dispatch(evaluate_args, triplab::run_evaluate);
    if (ablate->parsed()) return dispatch(ablate_args, triplab::run_ablate);
  } catch (const triplab::TrainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return triplab::kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return triplab::kExitBadInput;
  }
  return triplab::kExitUsage;
}
