#pragma once

#include <string>

#include "arnas/network.hpp"

namespace arnas {

/// Checkpoint container, a single JSON document:
///
///   {"format": "arnas-checkpoint", "version": 1,
///    "kind": "supernet" | "discrete", "seed": <uint>,
///    "macro": {"num_cells", "init_channels", "placement", "filters",
///              "num_classes", "input_shape": [C, H, W]},
///    "num_intermediate_nodes": <int>,
///    "input_normalization": {"mean": [...], "std": [...]},
///    "genotype": {...}                       (discrete only)
///    "alpha": {"accurate": [...], ...}       (supernet only, row-major)
///    "parameters": [{"name", "shape": [n, c, h, w], "data": [...]}],
///    "buffers":    [{"name", "shape", "data"}]}
///
/// Numbers are written in shortest round-trip form, so save/load is
/// bit-exact for finite values.
std::string checkpoint_to_string(const Network& net);
Network checkpoint_from_string(const std::string& text);

void save_checkpoint(const std::string& path, const Network& net);
Network load_checkpoint(const std::string& path);

/// Writes `content` to a sibling temporary file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace arnas
