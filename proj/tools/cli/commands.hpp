#pragma once

#include <array>
#include <string>
#include <vector>

#include "arnas/search_space.hpp"
#include "run_config.hpp"

namespace arnas::cli {

/// Selection counts per (role, op) over a genotype corpus.
using OpCounts = std::array<std::array<int, kNumOps>, kNumRoles>;

OpCounts count_operations(const std::vector<Genotype>& genotypes);
/// CSV with header role,op,count; one row per (role, op) in enum order.
std::string op_counts_csv(const OpCounts& counts);

/// Alpha blocks as JSON: {"num_edges", "ops", "accurate": [[...]], ...}.
std::string alpha_json(const ArchParams& alpha);

void cmd_search(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_transfer(const RunConfig& cfg);
void cmd_ablate(const RunConfig& cfg);
/// Reads cfg.genotypes plus `extra_files`; unreadable files are skipped
/// with a warning. Throws std::runtime_error when none parse.
void cmd_stats(const RunConfig& cfg, const std::vector<std::string>& extra_files = {});
void cmd_flops(const RunConfig& cfg);

/// Names accepted by run_command.
const std::vector<std::string>& command_names();

/// Dispatches to the named command. Returns the process exit code:
/// 0 success, 2 configuration error, 1 runtime failure.
int run_command(const std::string& name, const RunConfig& cfg,
                const std::vector<std::string>& extra_files = {});

}  // namespace arnas::cli
