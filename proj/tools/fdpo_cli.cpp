// Command-line front end for the preference pipeline. One subcommand per
// stage plus `all`; a single config file is the source of truth, with
// --out-dir / --seed / --threads overriding its values for the run.
//
// Exit codes: 0 success, 2 config error, 3 missing prerequisite, 1 anything
// else.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fdpo/config.hpp"
#include "fdpo/pipeline.hpp"

namespace {

constexpr const char* kStages[] = {"gen", "exec", "rank", "build", "train", "analyze", "all"};

constexpr const char* kStageHelp[] = {
    "synthesize the problem corpus and vocabulary",
    "execute every (code, test) cell into link matrices",
    "rank candidates by mutual execution and classify them",
    "select preference pairs and emit the training dataset",
    "train the policy with the segment-weighted preference loss",
    "run the phi/continuation/margin diagnostic reports",
    "run every stage in order",
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Focused preference-pair pipeline over a stack-machine toy language"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir_override;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> threads_override;

  app.add_option("--config", config_path, "path to the run configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir_override, "override the configured output directory");
  app.add_option("--seed", seed_override, "override the configured seed");
  app.add_option("--threads", threads_override, "override the configured thread count")
      ->check(CLI::Range(1, 256));

  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(kStages); ++i) {
    CLI::App* sub = app.add_subcommand(kStages[i], kStageHelp[i]);
    sub->fallthrough();  // let `fdpo all --config ...` reach the global flags
    subs.push_back(sub);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    fdpo::PipelineConfig cfg =
        config_path.empty() ? fdpo::PipelineConfig{} : fdpo::load_config_file(config_path);
    if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
    if (seed_override) {
      cfg.seed = *seed_override;
      cfg.corpus.seed = *seed_override;
      cfg.train.seed = *seed_override;
    }
    if (threads_override) cfg.threads = *threads_override;

    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (subs[i]->parsed()) {
        fdpo::run_stage(kStages[i], cfg);
        return 0;
      }
    }
    std::fprintf(stderr, "error: no stage selected\n");
    return 1;
  } catch (const fdpo::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const fdpo::PrerequisiteError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
