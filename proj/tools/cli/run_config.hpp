#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "arnas/attacks.hpp"
#include "arnas/bilevel_search.hpp"
#include "arnas/data.hpp"
#include "arnas/search_space.hpp"
#include "arnas/train_eval.hpp"

namespace arnas::cli {

struct GridEntry {
  std::array<CellRole, 3> placement{};
  std::array<int, 3> filters{};
};

struct EvalSettings {
  int batch_size = 100;
  std::string split = "test";  // "test" or "val"
};

/// One run configuration. Every section is optional; a subcommand reads
/// the sections it needs. Unknown keys anywhere are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "arnas_out";
  DatasetSpec data;
  MacroConfig macro;
  SearchConfig search;
  TrainConfig train;
  EvalSettings eval;
  std::vector<AttackConfig> attacks;  // eval; defaults to FGSM, PGD-20, PGD-100
  AttackConfig transfer_attack = AttackConfig::pgd(20, 8.0 / 255.0, 2.0 / 255.0, true);
  std::string genotype;                                     // train, flops
  std::string checkpoint;                                   // eval
  std::vector<std::pair<std::string, std::string>> models;  // transfer: name -> checkpoint
  std::vector<GridEntry> grid;                              // ablate
  std::vector<std::string> genotypes;                       // stats
};

/// Defaults for evaluation attacks: FGSM, PGD-20 and PGD-100 at 8/255.
std::vector<AttackConfig> default_eval_attacks();

/// The six (placement, filter setting) rows of the ablation table.
std::vector<GridEntry> default_ablation_grid();

/// Parses a JSON document; throws ConfigError on unknown keys, wrong
/// types or invalid values. Relative paths are resolved against
/// `base_dir` when it is non-empty.
RunConfig parse_run_config(const nlohmann::json& doc, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);

/// Accepts a number or a "p/q" fraction string.
double parse_number(const nlohmann::json& value, const std::string& key);

AttackConfig parse_attack(const nlohmann::json& j);
nlohmann::json attack_to_json(const AttackConfig& a);

}  // namespace arnas::cli
