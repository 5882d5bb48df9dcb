#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aog/hog.hpp"
#include "aog/types.hpp"

namespace aog {

// Part appearance classifier over a HOG window; sharable across classes at
// one fixed part slot.
struct LeafNode {
  int id = 0;         // i in {10m+1 .. 10m+n}
  PartShape shape;    // full-resolution cells
  Vec weights;        // length shape.rows * shape.cols * cell_dims
  int part_slot = 0;  // 0..8, fixed for the node's lifetime
};

// Switch over alternative leaves for one part slot of one class.
struct OrNode {
  int id = 0;     // j in {m+1 .. 10m}
  int owner = 0;  // and-node id r
  int part_slot = 0;
  // Anchor center offset from P_r in half-resolution (root grid) cell units.
  double anchor_drow = 0;
  double anchor_dcol = 0;
  std::vector<int> children;   // leaf ids, ordered
  Vec4 deform = Vec4::Zero();  // weights on (dx, dy, dx^2, dy^2); [2],[3] >= 0
};

// Whole-object classifier for one class-view, at half feature resolution.
struct AndNode {
  int id = 0;  // r in {1 .. m}
  std::string label;
  int category = 0;  // class label shared by all views of the class
  int view = 0;
  PartShape root_shape;  // half-resolution cells
  Vec weights;
  double bias = 0;
  std::array<int, 9> or_children{};  // indexed by part slot
};

// Collaborative edge parameters. Leaf keys (i, i') put i at the lower part
// slot of an adjacent slot pair; and keys (r, r') are ordered and-node pairs.
struct EdgeSet {
  std::map<std::pair<int, int>, Vec4> leaf_edges;
  std::map<std::pair<int, int>, Vec6> and_edges;
};

// The And-Or graph: and-nodes 1..m, or-nodes m+1..10m (9 per and-node),
// leaf-nodes 10m+1..10m+n. Stored arrays are ordered by id.
struct AndOrGraph {
  std::vector<AndNode> and_nodes;
  std::vector<OrNode> or_nodes;
  std::vector<LeafNode> leaf_nodes;
  EdgeSet edges;
  int cell_dims = 36;  // orientation_bins * 4 of the feature pyramid

  int m() const { return static_cast<int>(and_nodes.size()); }
  int n() const { return static_cast<int>(leaf_nodes.size()); }
  int m_prime() const { return 10 * m() + 1; }
  int n_prime() const { return 10 * m() + n(); }

  const AndNode& and_node(int r) const { return and_nodes.at(r - 1); }
  AndNode& and_node(int r) { return and_nodes.at(r - 1); }
  const OrNode& or_node(int j) const { return or_nodes.at(j - m() - 1); }
  OrNode& or_node(int j) { return or_nodes.at(j - m() - 1); }
  const LeafNode& leaf(int i) const { return leaf_nodes.at(i - 10 * m() - 1); }
  LeafNode& leaf(int i) { return leaf_nodes.at(i - 10 * m() - 1); }
  int leaf_index(int i) const { return i - 10 * m() - 1; }
  int first_leaf_id() const { return 10 * m() + 1; }
};

// Hidden variables of one subgraph hypothesis: which and-node fired, where
// its root sits (half-res cells), and per slot the activated leaf and its
// full-resolution placement at the same level.
struct LatentAssignment {
  int r = 0;
  Placement root;
  std::array<int, 9> leaf{};
  std::array<Placement, 9> part{};
};

// The 12 unordered adjacent slot pairs of the 3x3 layout (4-neighborhood),
// each with first < second.
const std::vector<std::pair<int, int>>& adjacent_slots();
bool slots_adjacent(int a, int b);

// ------------------------- geometry -------------------------

// Anchor center of a part slot inside the root window, in full-resolution
// cells relative to the window origin (the window spans 2*rows x 2*cols full
// cells, tiled into 3x3 blocks by rounded thirds).
CellPoint slot_anchor_center(const PartShape& root_shape, int slot);

// Extent of one 3x3 tile in full-resolution cells (the initial leaf shape).
PartShape slot_tile_shape(const PartShape& root_shape, int slot);

// Top-left anchor placement for a leaf of the given shape under an or-node,
// clamped so the window stays inside the level's full-resolution grid.
Placement anchor_placement(const HogPyramid& pyramid, const OrNode& or_node,
                           const PartShape& leaf_shape, const Placement& p_r);

// Anchor center in absolute full-resolution cells (for pair features).
CellPoint anchor_center_abs(const OrNode& or_node, const Placement& p_r);

// Root window in original-image pixel coordinates.
Rect root_window_rect(const HogPyramid& pyramid, const Placement& p_r,
                      const PartShape& root_shape);

// ------------------------- operations -------------------------

// All structural invariant violations, empty iff the graph is well-formed.
std::vector<std::string> validate(const AndOrGraph& g);

// Deterministic parameter layout: leaf weights by leaf id, deformation
// 4-vectors by or id, and-node weights plus bias by and id.
struct FlatLayout {
  std::vector<Eigen::Index> leaf_off;
  std::vector<Eigen::Index> or_off;
  std::vector<Eigen::Index> and_off;
  Eigen::Index total = 0;
};
FlatLayout flat_layout(const AndOrGraph& g);

Vec flatten_parameters(const AndOrGraph& g);
// Writes parameters back; quadratic deformation terms are clamped at zero to
// restore the OrNode invariant. Throws DimensionMismatch on wrong length.
void unflatten(AndOrGraph& g, const Vec& w);

// Overall feature vector of one labeled hypothesis, aligned with
// flatten_parameters: +part features at leaf blocks, -deformation features
// at or blocks, +root feature and +1 bias at the and block; all-zero for the
// background label y = -1. Collaborative-edge responses are not part of this
// vector. Throws InvalidAssignment when h does not fit y or the graph.
SparseVec joint_feature(const AndOrGraph& g, const HogPyramid& pyramid, int y,
                        const LatentAssignment& h);

}  // namespace aog
