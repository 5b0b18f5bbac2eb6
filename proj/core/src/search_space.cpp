#include "arnas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

#include "arnas/autodiff.hpp"

namespace arnas {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpNames = {
    "zero",         "skip_connect", "max_pool_3x3", "avg_pool_3x3",
    "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5"};

std::vector<std::string> split_dash(std::string_view text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == '-') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

}  // namespace

std::string_view op_name(OpKind op) { return kOpNames[static_cast<int>(op)]; }

OpKind parse_op_name(std::string_view name) {
  for (int i = 0; i < kNumOps; ++i)
    if (kOpNames[i] == name) return static_cast<OpKind>(i);
  throw ConfigError("unknown op name \"" + std::string(name) + "\"");
}

std::string_view role_name(CellRole role) {
  switch (role) {
    case CellRole::kAccurate: return "accurate";
    case CellRole::kRobust: return "robust";
    case CellRole::kReduction: return "reduction";
  }
  return "?";
}

CellRole parse_role_name(std::string_view name) {
  for (CellRole r : kAllRoles)
    if (role_name(r) == name) return r;
  throw ConfigError("unknown cell role \"" + std::string(name) + "\"");
}

char role_letter(CellRole role) {
  switch (role) {
    case CellRole::kAccurate: return 'A';
    case CellRole::kRobust: return 'R';
    case CellRole::kReduction: return 'X';
  }
  return '?';
}

CellTopology::CellTopology(int num_intermediate_nodes) : nodes_(num_intermediate_nodes) {
  if (num_intermediate_nodes < 1) {
    throw ConfigError("cell needs at least one intermediate node");
  }
  for (int j = 0; j < nodes_; ++j)
    for (int src = 0; src < j + 2; ++src) edges_.push_back(Edge{src, j + 2});
}

int CellTopology::edge_index(int from, int to) const {
  for (int i = 0; i < num_edges(); ++i)
    if (edges_[i].from == from && edges_[i].to == to) return i;
  return -1;
}

int CellTopology::first_edge_of(int node) const {
  // node j+2 starts after sum_{i<j} (i+2) edges
  const int j = node - 2;
  return j * (j + 3) / 2;
}

void validate_genotype(const Genotype& g) {
  if (g.num_intermediate_nodes < 1) throw ConfigError("genotype needs >= 1 intermediate node");
  const int last = g.num_intermediate_nodes + 1;
  for (CellRole r : kAllRoles) {
    std::vector<int> in_degree(last + 1, 0);
    std::set<std::pair<int, int>> seen;
    for (const SelectedEdge& e : g.cell(r)) {
      const std::string where = std::string(role_name(r)) + " edge " + std::to_string(e.from) +
                                "->" + std::to_string(e.to);
      if (e.op == OpKind::kZero) throw ConfigError(where + " selects the zero op");
      if (e.from < 0 || e.to < 2 || e.to > last || e.from >= e.to) {
        throw ConfigError(where + " is not a valid cell edge");
      }
      if (!seen.insert({e.from, e.to}).second) throw ConfigError(where + " is duplicated");
      ++in_degree[e.to];
    }
    for (int node = 2; node <= last; ++node) {
      if (in_degree[node] != 2) {
        throw ConfigError(std::string(role_name(r)) + " node " + std::to_string(node) + " has " +
                          std::to_string(in_degree[node]) + " selected inputs, expected 2");
      }
    }
  }
}

std::string serialize_genotype(const Genotype& g) {
  nlohmann::ordered_json doc;
  doc["version"] = g.version;
  doc["num_intermediate_nodes"] = g.num_intermediate_nodes;
  nlohmann::ordered_json cells = nlohmann::ordered_json::object();
  for (CellRole r : kAllRoles) {
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const SelectedEdge& e : g.cell(r)) {
      list.push_back({{"from", e.from}, {"to", e.to}, {"op", std::string(op_name(e.op))}});
    }
    cells[std::string(role_name(r))] = std::move(list);
  }
  doc["cells"] = std::move(cells);
  return doc.dump(2) + "\n";
}

Genotype parse_genotype(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("genotype is not valid JSON: ") + e.what());
  }
  try {
    Genotype g;
    g.version = doc.at("version").get<int>();
    if (g.version != 1) throw ConfigError("unsupported genotype version " + std::to_string(g.version));
    g.num_intermediate_nodes = doc.value("num_intermediate_nodes", 4);
    const auto& cells = doc.at("cells");
    for (auto it = cells.begin(); it != cells.end(); ++it) {
      const CellRole r = parse_role_name(it.key());
      for (const auto& e : it.value()) {
        const std::string op = e.at("op").get<std::string>();
        g.cell(r).push_back(SelectedEdge{e.at("from").get<int>(), e.at("to").get<int>(),
                                         parse_op_name(op)});
      }
    }
    for (CellRole r : kAllRoles) {
      if (!cells.contains(std::string(role_name(r)))) {
        throw ConfigError("genotype has no \"" + std::string(role_name(r)) + "\" cell");
      }
    }
    validate_genotype(g);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed genotype: ") + e.what());
  }
}

std::array<CellRole, 3> parse_placement(std::string_view text) {
  const auto parts = split_dash(text);
  if (parts.size() != 3) throw ConfigError("placement must look like A-A-R, got \"" + std::string(text) + "\"");
  std::array<CellRole, 3> out{};
  for (int i = 0; i < 3; ++i) {
    if (parts[i] == "A") {
      out[i] = CellRole::kAccurate;
    } else if (parts[i] == "R") {
      out[i] = CellRole::kRobust;
    } else {
      throw ConfigError("placement stage \"" + parts[i] + "\" must be A or R");
    }
  }
  return out;
}

std::string placement_string(const std::array<CellRole, 3>& placement) {
  std::string s;
  for (int i = 0; i < 3; ++i) {
    if (i) s.push_back('-');
    s.push_back(role_letter(placement[i]));
  }
  return s;
}

std::array<int, 3> parse_filter_setting(std::string_view text) {
  const auto parts = split_dash(text);
  if (parts.size() != 3) throw ConfigError("filter setting must look like 1-2-2, got \"" + std::string(text) + "\"");
  std::array<int, 3> out{};
  for (int i = 0; i < 3; ++i) {
    try {
      std::size_t used = 0;
      out[i] = std::stoi(parts[i], &used);
      if (used != parts[i].size() || out[i] < 1) throw ConfigError("");
    } catch (const std::exception&) {
      throw ConfigError("filter multiplier \"" + parts[i] + "\" must be a positive integer");
    }
  }
  return out;
}

std::string filter_string(const std::array<int, 3>& filters) {
  return std::to_string(filters[0]) + "-" + std::to_string(filters[1]) + "-" +
         std::to_string(filters[2]);
}

std::array<int, 2> LayoutPlan::reduction_indices() const {
  std::array<int, 2> out{-1, -1};
  int k = 0;
  for (int i = 0; i < static_cast<int>(slots.size()) && k < 2; ++i)
    if (slots[i].role == CellRole::kReduction) out[k++] = i;
  return out;
}

LayoutPlan build_macro_layout(const MacroConfig& cfg, int num_intermediate_nodes) {
  if (cfg.num_cells < 3) {
    throw ConfigError("num_cells must be >= 3, got " + std::to_string(cfg.num_cells));
  }
  if (cfg.init_channels < 1) throw ConfigError("init_channels must be positive");
  if (cfg.num_classes < 1) throw ConfigError("num_classes must be positive");
  for (int f : cfg.filter_setting)
    if (f < 1) throw ConfigError("filter multipliers must be positive");
  for (CellRole r : cfg.placement) {
    if (r == CellRole::kReduction) {
      throw ConfigError("placement may not assign the reduction role to a non-reduction stage");
    }
  }
  const InputShape& in = cfg.input_shape;
  if (in.channels < 1 || in.height < 1 || in.width < 1) throw ConfigError("invalid input shape");

  const int n = cfg.num_cells;
  const int r1 = n / 3;
  const int r2 = 2 * n / 3;
  LayoutPlan plan;
  plan.num_classes = cfg.num_classes;
  plan.stem_in_channels = in.channels;
  plan.stem_out_channels = cfg.init_channels * cfg.filter_setting[0];
  for (int i = 0; i < n; ++i) {
    CellSlot slot;
    slot.stage = i < r1 ? 0 : (i < r2 ? 1 : 2);
    slot.channels = cfg.init_channels * cfg.filter_setting[slot.stage];
    if (i == r1 || i == r2) {
      slot.role = CellRole::kReduction;
      slot.stride = 2;
    } else {
      slot.role = cfg.placement[slot.stage];
    }
    plan.slots.push_back(slot);
  }
  plan.classifier_in_channels = plan.slots.back().channels * num_intermediate_nodes;
  return plan;
}

ArchParams::ArchParams(int num_edges) : edges_(num_edges) {
  for (auto& b : blocks_) b.assign(static_cast<std::size_t>(num_edges) * kNumOps, 0.0);
}

std::vector<double> ArchParams::flatten() const {
  std::vector<double> out;
  out.reserve(flat_size());
  for (const auto& b : blocks_) out.insert(out.end(), b.begin(), b.end());
  return out;
}

ArchParams ArchParams::unflatten(int num_edges, const std::vector<double>& flat) {
  ArchParams a(num_edges);
  if (flat.size() != a.flat_size()) {
    throw std::invalid_argument("flat architecture vector has wrong length");
  }
  const std::size_t per = static_cast<std::size_t>(num_edges) * kNumOps;
  for (int r = 0; r < kNumRoles; ++r)
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(r * per), per, a.blocks_[r].begin());
  return a;
}

Genotype discretize(const ArchParams& alpha, const CellTopology& topo) {
  if (alpha.num_edges() != topo.num_edges()) {
    throw std::invalid_argument("architecture has " + std::to_string(alpha.num_edges()) +
                                " edges, topology has " + std::to_string(topo.num_edges()));
  }
  Genotype g;
  g.num_intermediate_nodes = topo.num_intermediate_nodes();
  struct Candidate {
    int edge;
    int op;
    double score;
  };
  for (CellRole r : kAllRoles) {
    const auto& block = alpha.block(r);
    if (block.size() != static_cast<std::size_t>(topo.num_edges()) * kNumOps) {
      throw std::invalid_argument("architecture block has the wrong shape");
    }
    for (int node = 2; node < topo.num_intermediate_nodes() + 2; ++node) {
      std::vector<Candidate> cands;
      const int first = topo.first_edge_of(node);
      for (int e = first; e < first + node; ++e) {
        const auto w = softmax(std::span<const double>(block.data() + static_cast<std::size_t>(e) * kNumOps, kNumOps));
        int best = 1;
        for (int o = 2; o < kNumOps; ++o)
          if (w[o] > w[best]) best = o;
        cands.push_back({e, best, w[best]});
      }
      std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.op != b.op) return a.op < b.op;
        return a.edge < b.edge;
      });
      std::vector<Candidate> kept(cands.begin(), cands.begin() + 2);
      std::sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) { return a.edge < b.edge; });
      for (const Candidate& c : kept) {
        const Edge& e = topo.edges()[c.edge];
        g.cell(r).push_back(SelectedEdge{e.from, e.to, static_cast<OpKind>(c.op)});
      }
    }
  }
  return g;
}

}  // namespace arnas
