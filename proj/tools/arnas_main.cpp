#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cli/commands.hpp"
#include "cli/run_config.hpp"

namespace {

// Large short-lived tensors otherwise go through mmap/munmap on every
// allocation.
void keep_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

const std::map<std::string, std::string> kDescriptions{
    {"search", "run the architecture search and write genotype.json"},
    {"train", "train a genotype from scratch and evaluate it"},
    {"eval", "evaluate a checkpoint against the configured attacks"},
    {"transfer", "black-box transfer matrix between checkpoints"},
    {"ablate", "search over a grid of placements and filter settings"},
    {"stats", "count selected operations across genotype files"},
    {"flops", "parameters and FLOPs of a genotype network"},
};

}  // namespace

int main(int argc, char** argv) {
  keep_freed_memory();
  CLI::App app{"Adversarially robust architecture search"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> epochs;
  bool quiet = false;
  std::vector<std::string> files;

  for (const std::string& name : arnas::cli::command_names()) {
    CLI::App* sub = app.add_subcommand(name, kDescriptions.at(name));
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "overrides the config seed and ARNAS_SEED");
    sub->add_option("--out", out, "output directory");
    if (name == "search" || name == "train" || name == "ablate")
      sub->add_option("--epochs", epochs, "overrides the epoch count of the command's loop");
    if (name == "stats") sub->add_option("files", files, "genotype files");
    sub->add_flag("-q,--quiet", quiet, "only log warnings and errors");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);
  spdlog::set_default_logger(spdlog::default_logger());

  const std::string command = app.get_subcommands().front()->get_name();
  arnas::cli::RunConfig cfg;
  try {
    cfg = config_path.empty() ? arnas::cli::parse_run_config(nlohmann::json::object())
                              : arnas::cli::load_run_config(config_path);
    if (const char* env = std::getenv("ARNAS_SEED"); env != nullptr && *env != '\0') {
      try {
        std::size_t used = 0;
        cfg.seed = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
      } catch (const std::logic_error&) {
        throw arnas::ConfigError(std::string("ARNAS_SEED is not an unsigned integer: ") + env);
      }
    }
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.out = out;
    if (epochs) {
      if (*epochs < 0) throw arnas::ConfigError("--epochs must be >= 0");
      if (command == "train") {
        cfg.train.epochs = *epochs;
        cfg.train.validate();
      } else {
        cfg.search.epochs = *epochs;
      }
    }
  } catch (const arnas::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  }
  return arnas::cli::run_command(command, cfg, files);
}
