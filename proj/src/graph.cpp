#include "aog/graph.hpp"

#include <algorithm>
#include <cmath>

namespace aog {

const std::vector<std::pair<int, int>>& adjacent_slots() {
  // 4-neighborhood of the 3x3 layout, slot = row*3 + col.
  static const std::vector<std::pair<int, int>> pairs = {
      {0, 1}, {1, 2}, {3, 4}, {4, 5}, {6, 7}, {7, 8},
      {0, 3}, {3, 6}, {1, 4}, {4, 7}, {2, 5}, {5, 8}};
  return pairs;
}

bool slots_adjacent(int a, int b) {
  if (a > b) std::swap(a, b);
  const auto& adj = adjacent_slots();
  return std::find(adj.begin(), adj.end(), std::make_pair(a, b)) != adj.end();
}

// ------------------------- geometry -------------------------

namespace {
// Rounded-thirds tile boundaries of an extent of `full` cells.
std::array<int, 4> tile_bounds(int full) {
  return {0, static_cast<int>(std::lround(full / 3.0)),
          static_cast<int>(std::lround(2.0 * full / 3.0)), full};
}
}  // namespace

CellPoint slot_anchor_center(const PartShape& root_shape, int slot) {
  const auto br = tile_bounds(2 * root_shape.rows);
  const auto bc = tile_bounds(2 * root_shape.cols);
  const int tr = slot / 3, tc = slot % 3;
  return {0.5 * (br[tr] + br[tr + 1]), 0.5 * (bc[tc] + bc[tc + 1])};
}

PartShape slot_tile_shape(const PartShape& root_shape, int slot) {
  const auto br = tile_bounds(2 * root_shape.rows);
  const auto bc = tile_bounds(2 * root_shape.cols);
  const int tr = slot / 3, tc = slot % 3;
  return {br[tr + 1] - br[tr], bc[tc + 1] - bc[tc]};
}

CellPoint anchor_center_abs(const OrNode& or_node, const Placement& p_r) {
  return {2.0 * (p_r.row + or_node.anchor_drow),
          2.0 * (p_r.col + or_node.anchor_dcol)};
}

Placement anchor_placement(const HogPyramid& pyramid, const OrNode& or_node,
                           const PartShape& leaf_shape, const Placement& p_r) {
  if (p_r.level < 0 || p_r.level >= static_cast<int>(pyramid.levels.size()))
    throw OutOfBounds("anchor level");
  const FeatureGrid& grid = pyramid.levels[p_r.level].full;
  const CellPoint c = anchor_center_abs(or_node, p_r);
  auto place = [](double center, int extent, int bound) {
    int v = static_cast<int>(std::llround(center - extent / 2.0));
    return std::clamp(v, 0, std::max(0, bound - extent));
  };
  return {p_r.level, place(c.row, leaf_shape.rows, grid.rows),
          place(c.col, leaf_shape.cols, grid.cols)};
}

Rect root_window_rect(const HogPyramid& pyramid, const Placement& p_r,
                      const PartShape& root_shape) {
  const auto& level = pyramid.levels.at(p_r.level);
  const double cell = pyramid.config.cell_size;
  const double s = level.scale;
  return {2 * p_r.col * cell / s, 2 * p_r.row * cell / s,
          (2 * p_r.col + 2 * root_shape.cols) * cell / s,
          (2 * p_r.row + 2 * root_shape.rows) * cell / s};
}

// ------------------------- validation -------------------------

std::vector<std::string> validate(const AndOrGraph& g) {
  std::vector<std::string> out;
  auto complain = [&](const std::string& msg) { out.push_back(msg); };
  const int m = g.m(), n = g.n();

  if (m < 1) complain("graph has no and-nodes");
  if (static_cast<int>(g.or_nodes.size()) != 9 * m)
    complain("expected " + std::to_string(9 * m) + " or-nodes, have " +
             std::to_string(g.or_nodes.size()));

  for (int idx = 0; idx < m; ++idx) {
    const AndNode& a = g.and_nodes[idx];
    const std::string who = "and-node " + std::to_string(a.id);
    if (a.id != idx + 1) complain(who + ": id out of layout order");
    if (a.root_shape.rows < 1 || a.root_shape.cols < 1)
      complain(who + ": degenerate root shape");
    if (a.weights.size() != static_cast<Eigen::Index>(a.root_shape.rows) *
                                a.root_shape.cols * g.cell_dims)
      complain(who + ": weights length does not match root shape");
    std::array<bool, 9> seen{};
    for (int s = 0; s < 9; ++s) {
      const int j = a.or_children[s];
      if (j < m + 1 || j > 10 * m) {
        complain(who + ": or child id " + std::to_string(j) + " out of range");
        continue;
      }
      const OrNode& o = g.or_node(j);
      if (o.part_slot != s)
        complain(who + ": child at slot " + std::to_string(s) +
                 " has part_slot " + std::to_string(o.part_slot));
      if (o.owner != a.id) complain(who + ": child " + std::to_string(j) +
                                    " owned by another and-node");
      if (o.part_slot >= 0 && o.part_slot < 9) seen[o.part_slot] = true;
    }
    if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
      complain(who + ": expected 9 or-nodes covering slots 0..8");
  }

  std::vector<int> referenced(n, 0);
  for (std::size_t idx = 0; idx < g.or_nodes.size(); ++idx) {
    const OrNode& o = g.or_nodes[idx];
    const std::string who = "or-node " + std::to_string(o.id);
    if (o.id != m + 1 + static_cast<int>(idx))
      complain(who + ": id out of layout order");
    if (o.part_slot < 0 || o.part_slot > 8) complain(who + ": bad part slot");
    if (o.children.empty()) complain(who + ": no leaf children");
    if (o.deform[2] < 0 || o.deform[3] < 0)
      complain(who + ": negative quadratic deformation weight");
    for (int i : o.children) {
      if (i < g.first_leaf_id() || i > 10 * m + n) {
        complain(who + ": leaf child id " + std::to_string(i) +
                 " out of range");
        continue;
      }
      referenced[g.leaf_index(i)]++;
      if (g.leaf(i).part_slot != o.part_slot)
        complain(who + ": slot mismatch with leaf " + std::to_string(i));
    }
  }

  for (int idx = 0; idx < n; ++idx) {
    const LeafNode& l = g.leaf_nodes[idx];
    const std::string who = "leaf-node " + std::to_string(l.id);
    if (l.id != g.first_leaf_id() + idx) complain(who + ": id out of layout order");
    if (l.shape.rows < 1 || l.shape.cols < 1) complain(who + ": degenerate shape");
    if (l.weights.size() != static_cast<Eigen::Index>(l.shape.rows) *
                                l.shape.cols * g.cell_dims)
      complain(who + ": weights length does not match shape");
    if (referenced[idx] == 0) complain(who + ": referenced by no or-node");
  }

  for (const auto& [key, w] : g.edges.leaf_edges) {
    const auto [i, ip] = key;
    const std::string who =
        "leaf edge (" + std::to_string(i) + "," + std::to_string(ip) + ")";
    if (i < g.first_leaf_id() || i > 10 * m + n || ip < g.first_leaf_id() ||
        ip > 10 * m + n) {
      complain(who + ": unknown leaf");
      continue;
    }
    const int si = g.leaf(i).part_slot, sp = g.leaf(ip).part_slot;
    if (si >= sp || !slots_adjacent(si, sp))
      complain(who + ": parent slots not adjacent in slot order");
  }
  for (const auto& [key, w] : g.edges.and_edges) {
    const auto [r, rp] = key;
    if (r < 1 || r > m || rp < 1 || rp > m || r == rp)
      complain("and edge (" + std::to_string(r) + "," + std::to_string(rp) +
               "): bad and-node pair");
  }
  return out;
}

// ------------------------- parameter vector -------------------------

FlatLayout flat_layout(const AndOrGraph& g) {
  FlatLayout lay;
  Eigen::Index off = 0;
  lay.leaf_off.reserve(g.leaf_nodes.size());
  for (const LeafNode& l : g.leaf_nodes) {
    lay.leaf_off.push_back(off);
    off += l.weights.size();
  }
  lay.or_off.reserve(g.or_nodes.size());
  for (const OrNode& o : g.or_nodes) {
    (void)o;
    lay.or_off.push_back(off);
    off += 4;
  }
  lay.and_off.reserve(g.and_nodes.size());
  for (const AndNode& a : g.and_nodes) {
    lay.and_off.push_back(off);
    off += a.weights.size() + 1;  // + bias
  }
  lay.total = off;
  return lay;
}

Vec flatten_parameters(const AndOrGraph& g) {
  const FlatLayout lay = flat_layout(g);
  Vec w(lay.total);
  for (std::size_t i = 0; i < g.leaf_nodes.size(); ++i)
    w.segment(lay.leaf_off[i], g.leaf_nodes[i].weights.size()) =
        g.leaf_nodes[i].weights;
  for (std::size_t j = 0; j < g.or_nodes.size(); ++j)
    w.segment<4>(lay.or_off[j]) = g.or_nodes[j].deform;
  for (std::size_t r = 0; r < g.and_nodes.size(); ++r) {
    w.segment(lay.and_off[r], g.and_nodes[r].weights.size()) =
        g.and_nodes[r].weights;
    w[lay.and_off[r] + g.and_nodes[r].weights.size()] = g.and_nodes[r].bias;
  }
  return w;
}

void unflatten(AndOrGraph& g, const Vec& w) {
  const FlatLayout lay = flat_layout(g);
  if (w.size() != lay.total)
    throw DimensionMismatch("parameter vector has length " +
                            std::to_string(w.size()) + ", expected " +
                            std::to_string(lay.total));
  for (std::size_t i = 0; i < g.leaf_nodes.size(); ++i)
    g.leaf_nodes[i].weights =
        w.segment(lay.leaf_off[i], g.leaf_nodes[i].weights.size());
  for (std::size_t j = 0; j < g.or_nodes.size(); ++j) {
    g.or_nodes[j].deform = w.segment<4>(lay.or_off[j]);
    // Quadratic displacement terms must penalize, never reward.
    g.or_nodes[j].deform[2] = std::max(0.0, g.or_nodes[j].deform[2]);
    g.or_nodes[j].deform[3] = std::max(0.0, g.or_nodes[j].deform[3]);
  }
  for (std::size_t r = 0; r < g.and_nodes.size(); ++r) {
    g.and_nodes[r].weights =
        w.segment(lay.and_off[r], g.and_nodes[r].weights.size());
    g.and_nodes[r].bias = w[lay.and_off[r] + g.and_nodes[r].weights.size()];
  }
}

// ------------------------- joint feature -------------------------

SparseVec joint_feature(const AndOrGraph& g, const HogPyramid& pyramid, int y,
                        const LatentAssignment& h) {
  const FlatLayout lay = flat_layout(g);
  SparseVec phi(lay.total);
  if (y == -1) return phi;

  if (h.r < 1 || h.r > g.m())
    throw InvalidAssignment("and-node " + std::to_string(h.r));
  const AndNode& a = g.and_node(h.r);
  if (a.category != y)
    throw InvalidAssignment("assignment class does not match label");
  if (h.root.level < 0 ||
      h.root.level >= static_cast<int>(pyramid.levels.size()))
    throw InvalidAssignment("root level out of range");
  const auto& level = pyramid.levels[h.root.level];
  if (h.root.row < 0 || h.root.col < 0 ||
      h.root.row + a.root_shape.rows > level.half.rows ||
      h.root.col + a.root_shape.cols > level.half.cols)
    throw InvalidAssignment("root window outside half-resolution grid");

  std::vector<std::pair<Eigen::Index, Vec>> blocks;
  blocks.reserve(19);
  for (int s = 0; s < 9; ++s) {
    const OrNode& o = g.or_node(a.or_children[s]);
    const int i = h.leaf[s];
    if (std::find(o.children.begin(), o.children.end(), i) == o.children.end())
      throw InvalidAssignment("leaf " + std::to_string(i) +
                              " is not a child of or-node " +
                              std::to_string(o.id));
    const LeafNode& l = g.leaf(i);
    const Placement& p = h.part[s];
    if (p.level != h.root.level)
      throw InvalidAssignment("part level differs from root level");
    if (p.row < 0 || p.col < 0 || p.row + l.shape.rows > level.full.rows ||
        p.col + l.shape.cols > level.full.cols)
      throw InvalidAssignment("part window outside full-resolution grid");

    blocks.emplace_back(lay.leaf_off[g.leaf_index(i)],
                        extract_part_feature(pyramid, p, l.shape));
    const Placement anchor = anchor_placement(pyramid, o, l.shape, h.root);
    blocks.emplace_back(lay.or_off[o.id - g.m() - 1],
                        Vec(-deformation_feature(anchor, p)));
  }
  Vec root_block(a.weights.size() + 1);
  root_block << extract_root_feature(pyramid, h.root, a.root_shape), 1.0;
  blocks.emplace_back(lay.and_off[h.r - 1], std::move(root_block));

  std::sort(blocks.begin(), blocks.end(),
            [](const auto& x, const auto& y2) { return x.first < y2.first; });
  Eigen::Index nnz = 0;
  for (const auto& b : blocks) nnz += b.second.size();
  phi.reserve(nnz);
  for (const auto& [off, seg] : blocks)
    for (Eigen::Index k = 0; k < seg.size(); ++k)
      phi.insertBack(off + k) = seg[k];
  return phi;
}

}  // namespace aog
