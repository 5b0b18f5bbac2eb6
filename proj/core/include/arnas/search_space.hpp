#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace arnas {

/// Candidate operations on a cell edge. The integer value is the column in
/// the architecture logits and the tie-break rank (lower wins).
enum class OpKind : int {
  kZero = 0,
  kSkipConnect = 1,
  kMaxPool3x3 = 2,
  kAvgPool3x3 = 3,
  kSepConv3x3 = 4,
  kSepConv5x5 = 5,
  kDilConv3x3 = 6,
  kDilConv5x5 = 7,
};

inline constexpr int kNumOps = 8;
inline constexpr std::array<OpKind, kNumOps> kAllOps = {
    OpKind::kZero,       OpKind::kSkipConnect, OpKind::kMaxPool3x3, OpKind::kAvgPool3x3,
    OpKind::kSepConv3x3, OpKind::kSepConv5x5,  OpKind::kDilConv3x3, OpKind::kDilConv5x5};

std::string_view op_name(OpKind op);
/// Throws std::invalid_argument naming the unknown token.
OpKind parse_op_name(std::string_view name);

enum class CellRole : int { kAccurate = 0, kRobust = 1, kReduction = 2 };

inline constexpr int kNumRoles = 3;
inline constexpr std::array<CellRole, kNumRoles> kAllRoles = {
    CellRole::kAccurate, CellRole::kRobust, CellRole::kReduction};

std::string_view role_name(CellRole role);  // "accurate", "robust", "reduction"
CellRole parse_role_name(std::string_view name);
char role_letter(CellRole role);  // 'A', 'R', 'X'

/// Error for malformed configurations and documents.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Edge {
  int from = 0;
  int to = 0;
  bool operator==(const Edge&) const = default;
};

/// DAG of one cell: nodes 0 and 1 are the cell inputs, nodes 2.. are the
/// intermediate nodes. Every intermediate node receives an edge from each
/// earlier node. Edges are sorted by (to, from).
class CellTopology {
 public:
  explicit CellTopology(int num_intermediate_nodes = 4);

  int num_intermediate_nodes() const { return nodes_; }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }
  /// Index of edge (from -> to) or -1.
  int edge_index(int from, int to) const;
  /// First edge index whose destination is `node`.
  int first_edge_of(int node) const;

 private:
  int nodes_;
  std::vector<Edge> edges_;
};

struct SelectedEdge {
  int from = 0;
  int to = 0;
  OpKind op = OpKind::kSkipConnect;
  bool operator==(const SelectedEdge&) const = default;
};

/// Discrete architecture: per role, two selected input edges per node.
struct Genotype {
  int version = 1;
  int num_intermediate_nodes = 4;
  std::array<std::vector<SelectedEdge>, kNumRoles> cells;

  const std::vector<SelectedEdge>& cell(CellRole r) const {
    return cells[static_cast<int>(r)];
  }
  std::vector<SelectedEdge>& cell(CellRole r) { return cells[static_cast<int>(r)]; }
  bool operator==(const Genotype&) const = default;
};

/// Throws ConfigError if any invariant fails (2 inputs per node, no zero
/// op, source < destination, no duplicate edges).
void validate_genotype(const Genotype& g);

std::string serialize_genotype(const Genotype& g);
/// Parses and validates a genotype document. Throws ConfigError.
Genotype parse_genotype(std::string_view text);

struct InputShape {
  int channels = 3;
  int height = 32;
  int width = 32;
  bool operator==(const InputShape&) const = default;
};

/// Macro skeleton. `placement` gives the role of the non-reduction cells in
/// each of the three stages delimited by the two reduction cells.
struct MacroConfig {
  int num_cells = 8;
  int init_channels = 24;
  std::array<CellRole, 3> placement = {CellRole::kAccurate, CellRole::kAccurate,
                                       CellRole::kRobust};
  std::array<int, 3> filter_setting = {1, 2, 2};
  int num_classes = 10;
  InputShape input_shape;
};

/// "A-A-R" style placement string.
std::array<CellRole, 3> parse_placement(std::string_view text);
std::string placement_string(const std::array<CellRole, 3>& placement);
/// "1-2-2" style filter string.
std::array<int, 3> parse_filter_setting(std::string_view text);
std::string filter_string(const std::array<int, 3>& filters);

struct CellSlot {
  CellRole role = CellRole::kAccurate;
  int channels = 0;
  int stride = 1;
  int stage = 0;
};

struct LayoutPlan {
  std::vector<CellSlot> slots;
  int stem_in_channels = 3;
  int stem_out_channels = 0;
  int classifier_in_channels = 0;
  int num_classes = 0;

  std::array<int, 2> reduction_indices() const;
};

/// Reduction cells at floor(N/3) and floor(2N/3); throws ConfigError.
LayoutPlan build_macro_layout(const MacroConfig& cfg, int num_intermediate_nodes = 4);

/// Architecture logits: one (num_edges x kNumOps) row-major block per role.
class ArchParams {
 public:
  ArchParams() = default;
  explicit ArchParams(int num_edges);

  int num_edges() const { return edges_; }
  std::vector<double>& block(CellRole r) { return blocks_[static_cast<int>(r)]; }
  const std::vector<double>& block(CellRole r) const { return blocks_[static_cast<int>(r)]; }
  double& at(CellRole r, int edge, int op) { return block(r)[static_cast<std::size_t>(edge) * kNumOps + op]; }
  double at(CellRole r, int edge, int op) const {
    return block(r)[static_cast<std::size_t>(edge) * kNumOps + op];
  }

  /// Accurate rows, then robust, then reduction, row-major.
  std::vector<double> flatten() const;
  static ArchParams unflatten(int num_edges, const std::vector<double>& flat);
  std::size_t flat_size() const { return static_cast<std::size_t>(kNumRoles) * edges_ * kNumOps; }

  bool operator==(const ArchParams&) const = default;

 private:
  int edges_ = 0;
  std::array<std::vector<double>, kNumRoles> blocks_;
};

/// DARTS discretization: per node keep the two incoming edges with the
/// largest non-zero softmax weight and select the argmax non-zero op on
/// each. Ties go to the lower op index, then the lower edge index.
Genotype discretize(const ArchParams& alpha, const CellTopology& topo);

}  // namespace arnas
