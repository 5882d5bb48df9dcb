#include "aog/dso.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <utility>

namespace aog {

namespace {

// Shared accumulation helper; estimate_latent and reconfigure must build
// their hyperplanes through the same code path so an identity
// reconfiguration reproduces q bit for bit.
void add_scaled(Vec& acc, double a, const SparseVec& phi) {
  for (SparseVec::InnerIterator it(phi); it; ++it)
    acc[it.index()] += a * it.value();
}

long lower_median(std::vector<long> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

// Most-violated-constraint oracle backed by full loss-augmented inference on
// a fixed structure. Parameters are written into a scratch graph once per
// distinct w; constraint values are re-expressed against the raw w so the
// solver's bookkeeping stays exact even where unflatten projects the
// quadratic deformation terms.
class GraphOracle : public MaxOracle {
 public:
  GraphOracle(const AndOrGraph& structure,
              const std::vector<DsoSample>& samples, const DsoConfig& config)
      : graph_(structure), samples_(samples), config_(config) {}

  int sample_count() const override {
    return static_cast<int>(samples_.size());
  }

  Constraint most_violated(int k, const Vec& w) override {
    if (!ready_ || w_cache_.size() != w.size() || w_cache_ != w) {
      unflatten(graph_, w);
      w_cache_ = w;
      ready_ = true;
    }
    const SampleData& s = samples_[k].data;
    LossAugResult r = loss_augmented_inference(graph_, s,
                                               config_.latent_min_iou,
                                               config_.search_radius);
    Constraint c;
    c.loss = r.loss;
    if (r.y != -1) {
      c.phi = joint_feature(graph_, s.pyramid, r.y, r.window->latent);
      c.value = c.phi.dot(w) + r.loss;
    } else {
      c.value = r.loss;
    }
    return c;
  }

 private:
  AndOrGraph graph_;
  const std::vector<DsoSample>& samples_;
  DsoConfig config_;
  Vec w_cache_;
  bool ready_ = false;
};

// Root placement with the best overlap against an annotation, by geometry
// alone (used to seed the very first latents when all weights are zero).
std::optional<Placement> best_overlap_placement(const HogPyramid& pyramid,
                                                const PartShape& root_shape,
                                                const Rect& box) {
  std::optional<Placement> best;
  double best_iou = -1;
  for (int level = 0; level < static_cast<int>(pyramid.levels.size());
       ++level) {
    const FeatureGrid& half = pyramid.levels[level].half;
    for (int row = 0; row + root_shape.rows <= half.rows; ++row) {
      for (int col = 0; col + root_shape.cols <= half.cols; ++col) {
        Placement p{level, row, col};
        double v = iou(root_window_rect(pyramid, p, root_shape), box);
        if (v > best_iou) {
          best_iou = v;
          best = p;
        }
      }
    }
  }
  return best;
}

int count_shared_leaves(const AndOrGraph& g) {
  std::map<int, int> parents;
  for (const OrNode& o : g.or_nodes)
    for (int child : o.children) ++parents[child];
  int shared = 0;
  for (const auto& [leaf, cnt] : parents)
    if (cnt > 1) ++shared;
  return shared;
}

}  // namespace

// ------------------------- initialization -------------------------

AndOrGraph initialize_group_model(const std::vector<DsoSample>& samples,
                                  const DsoConfig& config) {
  std::map<int, std::vector<int>> by_class;
  for (int k = 0; k < static_cast<int>(samples.size()); ++k)
    if (samples[k].data.label != -1)
      by_class[samples[k].data.label].push_back(k);
  if (by_class.empty()) throw InsufficientData("no positive samples");

  const int views = std::max(1, config.views_per_class);
  const HogPyramid& first = samples[by_class.begin()->second.front()]
                                .data.pyramid;
  const int cell = first.config.cell_size;
  const int cell_dims = first.levels.front().full.cell_dims;

  struct ViewPlan {
    int category = 0;
    int view = 0;
    PartShape shape;
    std::vector<int> members;
  };
  std::vector<ViewPlan> plans;
  for (const auto& [category, members] : by_class) {
    if (static_cast<int>(members.size()) < views)
      throw InsufficientData("class " + std::to_string(category) +
                             " has fewer positives than views");
    std::vector<int> order = members;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const Rect& ra = samples[a].data.box;
      const Rect& rb = samples[b].data.box;
      return ra.height() * rb.width() < rb.height() * ra.width();
    });
    const int sz = static_cast<int>(order.size());
    for (int v = 0; v < views; ++v) {
      ViewPlan plan;
      plan.category = category;
      plan.view = v;
      plan.members.assign(order.begin() + v * sz / views,
                          order.begin() + (v + 1) * sz / views);
      std::vector<long> rows, cols;
      for (int k : plan.members) {
        rows.push_back(std::max<long>(
            2, std::lround(samples[k].data.box.height() / (2.0 * cell))));
        cols.push_back(std::max<long>(
            2, std::lround(samples[k].data.box.width() / (2.0 * cell))));
      }
      plan.shape = {static_cast<int>(lower_median(rows)),
                    static_cast<int>(lower_median(cols))};
      plans.push_back(std::move(plan));
    }
  }

  AndOrGraph g;
  g.cell_dims = cell_dims;
  const int m = static_cast<int>(plans.size());
  int next_leaf = 10 * m + 1;
  for (int r0 = 0; r0 < m; ++r0) {
    const ViewPlan& plan = plans[r0];
    AndNode a;
    a.id = r0 + 1;
    a.label = std::to_string(plan.category) + "/" + std::to_string(plan.view);
    a.category = plan.category;
    a.view = plan.view;
    a.root_shape = plan.shape;
    a.weights = Vec::Zero(static_cast<Eigen::Index>(plan.shape.rows) *
                          plan.shape.cols * cell_dims);
    for (int slot = 0; slot < 9; ++slot)
      a.or_children[slot] = m + r0 * 9 + slot + 1;
    g.and_nodes.push_back(std::move(a));
  }
  for (int r0 = 0; r0 < m; ++r0) {
    const ViewPlan& plan = plans[r0];
    for (int slot = 0; slot < 9; ++slot) {
      OrNode o;
      o.id = m + r0 * 9 + slot + 1;
      o.owner = r0 + 1;
      o.part_slot = slot;
      CellPoint center = slot_anchor_center(plan.shape, slot);
      o.anchor_drow = center.row / 2.0;
      o.anchor_dcol = center.col / 2.0;
      LeafNode leaf;
      leaf.id = next_leaf++;
      leaf.shape = slot_tile_shape(plan.shape, slot);
      leaf.part_slot = slot;
      leaf.weights = Vec::Zero(static_cast<Eigen::Index>(leaf.shape.rows) *
                               leaf.shape.cols * cell_dims);
      o.children = {leaf.id};
      g.or_nodes.push_back(std::move(o));
      g.leaf_nodes.push_back(std::move(leaf));
    }
  }

  // Annotation-centered latents seed the first hyperplane: roots at the
  // best-overlap placement, parts pinned to their anchors.
  FlatLayout layout = flat_layout(g);
  Vec q = Vec::Zero(layout.total);
  for (int r0 = 0; r0 < m; ++r0) {
    const ViewPlan& plan = plans[r0];
    for (int k : plan.members) {
      const SampleData& s = samples[k].data;
      auto root = best_overlap_placement(s.pyramid, plan.shape, s.box);
      if (!root) continue;
      LatentAssignment h;
      h.r = r0 + 1;
      h.root = *root;
      for (int slot = 0; slot < 9; ++slot) {
        const OrNode& o = g.or_node(g.and_nodes[r0].or_children[slot]);
        h.leaf[slot] = o.children.front();
        h.part[slot] =
            anchor_placement(s.pyramid, o, g.leaf(h.leaf[slot]).shape, h.root);
      }
      add_scaled(q, -config.solver.C,
                 joint_feature(g, s.pyramid, plan.category, h));
    }
  }

  GraphOracle oracle(g, samples, config);
  SolveResult res = solve_convex(layout.total, q, oracle, config.solver);
  unflatten(g, res.w);
  return g;
}

// ------------------------- latent estimation -------------------------

LatentEstimate estimate_latent(const DsoState& state,
                               const std::vector<DsoSample>& samples,
                               const DsoConfig& config) {
  LatentEstimate est;
  est.q = Vec::Zero(flat_layout(state.graph).total);
  for (int k = 0; k < static_cast<int>(samples.size()); ++k) {
    const SampleData& s = samples[k].data;
    if (s.label == -1) continue;
    ScoredWindow win = best_true_window(state.graph, s, config.latent_min_iou,
                                        config.search_radius);
    est.positives.push_back(k);
    est.latent.push_back(win.latent);
    est.phi.push_back(
        joint_feature(state.graph, s.pyramid, s.label, win.latent));
    add_scaled(est.q, -config.solver.C, est.phi.back());
  }
  return est;
}

// ------------------------- reconfiguration -------------------------

ReconfigResult reconfigure(const DsoState& state, const LatentEstimate& est,
                           const std::vector<DsoSample>& samples,
                           const DsoConfig& config,
                           const ClusterFn& clusterer) {
  const AndOrGraph& g0 = state.graph;
  ReconfigResult out;
  out.graph = g0;
  out.phi_d = est.phi;
  out.q_d = est.q;
  for (const LeafNode& leaf : g0.leaf_nodes)
    out.plan.handle[leaf.id] = leaf.id;
  if (!config.reconfig_enabled || est.positives.empty()) return out;

  ClusterFn cluster = clusterer;
  if (!cluster)
    cluster = [](const std::vector<Vec>& d, const IsodataConfig& c) {
      return isodata(d, c);
    };

  // ---- harvest: one patch per (positive, slot), tagged by and-node ----
  const int n_pos = static_cast<int>(est.positives.size());
  std::vector<Patch> patches;
  patches.reserve(static_cast<size_t>(n_pos) * 9);
  for (int p = 0; p < n_pos; ++p) {
    const LatentAssignment& h = est.latent[p];
    const HogPyramid& pyr = samples[est.positives[p]].data.pyramid;
    for (int slot = 0; slot < 9; ++slot) {
      const LeafNode& src = g0.leaf(h.leaf[slot]);
      Patch pa;
      pa.sample_id = p;
      pa.class_label = h.r;  // pooling identity = the class-view and-node
      pa.part_slot = slot;
      pa.shape = src.shape;
      pa.source_leaf = src.id;
      pa.descriptor = extract_part_feature(pyr, h.part[slot], src.shape);
      patches.push_back(std::move(pa));
    }
  }

  // ---- pool per slot (across and-nodes only when sharing is on) ----
  std::map<std::pair<int, int>, std::vector<int>> pools;
  for (int i = 0; i < static_cast<int>(patches.size()); ++i) {
    const Patch& pa = patches[i];
    pools[{pa.part_slot, config.sharing_enabled ? 0 : pa.class_label}]
        .push_back(i);
  }

  // ---- cluster each pool; dissolve undersized clusters into neighbors ----
  struct Cand {
    int slot = 0;
    PartShape shape;           // bucket modal shape
    std::vector<int> members;  // global patch indices
    Vec centroid;
    int claimed = -1;  // old leaf id this cluster keeps, -1 = new leaf
  };
  std::vector<Cand> cands;
  std::vector<int> patch_cand(patches.size(), -1);
  const int min_size = config.isodata.min_cluster_size;
  for (const auto& [key, idxs] : pools) {
    std::vector<Patch> local;
    local.reserve(idxs.size());
    for (int i : idxs) local.push_back(patches[i]);
    std::vector<Cand> pool_cands;
    for (const SizeBucket& bucket : bucket_by_size(local, g0.cell_dims)) {
      Clusters cl = cluster(bucket.descriptors, config.isodata);
      const size_t base = pool_cands.size();
      for (const Vec& c : cl.centroids) {
        Cand cd;
        cd.slot = key.first;
        cd.shape = bucket.modal_shape;
        cd.centroid = c;
        pool_cands.push_back(std::move(cd));
      }
      for (size_t t = 0; t < bucket.members.size(); ++t)
        pool_cands[base + cl.assignment[t]].members.push_back(
            idxs[bucket.members[t]]);
    }
    std::vector<char> alive(pool_cands.size(), 1);
    for (size_t c = 0; c < pool_cands.size(); ++c)
      if (pool_cands[c].members.empty()) alive[c] = 0;
    for (;;) {
      int smallest = -1, live = 0;
      for (size_t c = 0; c < pool_cands.size(); ++c) {
        if (!alive[c]) continue;
        ++live;
        if (static_cast<int>(pool_cands[c].members.size()) < min_size &&
            (smallest < 0 || pool_cands[c].members.size() <
                                 pool_cands[smallest].members.size()))
          smallest = static_cast<int>(c);
      }
      if (smallest < 0 || live <= 1) break;
      for (int g : pool_cands[smallest].members) {
        int target = -1;
        double best = 0;
        for (size_t c = 0; c < pool_cands.size(); ++c) {
          if (!alive[c] || static_cast<int>(c) == smallest) continue;
          Vec d = resample_cell_grid(patches[g].descriptor, patches[g].shape,
                                     pool_cands[c].shape, g0.cell_dims);
          double dist = (d - pool_cands[c].centroid).squaredNorm();
          if (target < 0 || dist < best) {
            target = static_cast<int>(c);
            best = dist;
          }
        }
        pool_cands[target].members.push_back(g);
      }
      alive[smallest] = 0;
    }
    for (size_t c = 0; c < pool_cands.size(); ++c) {
      if (!alive[c]) continue;
      for (int g : pool_cands[c].members)
        patch_cand[g] = static_cast<int>(cands.size());
      cands.push_back(std::move(pool_cands[c]));
    }
  }

  // ---- claim old leaves: size-descending, plurality of source leaves ----
  std::vector<int> order(cands.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return cands[a].members.size() > cands[b].members.size();
  });
  std::map<int, int> claim_of;  // old leaf id -> cand index
  for (int ci : order) {
    std::map<int, int> votes;
    for (int g : cands[ci].members) ++votes[patches[g].source_leaf];
    int leaf = -1, best = 0;
    for (const auto& [id, cnt] : votes)
      if (cnt > best) {
        best = cnt;
        leaf = id;
      }
    if (leaf != -1 && !claim_of.count(leaf)) {
      claim_of[leaf] = ci;
      cands[ci].claimed = leaf;
    }
  }

  // ---- children per or-node; resurrect a child where no patch arrived ----
  std::map<int, std::vector<int>> or_cands;
  for (size_t ci = 0; ci < cands.size(); ++ci) {
    std::set<int> owners;
    for (int g : cands[ci].members) owners.insert(patches[g].class_label);
    for (int r : owners)
      or_cands[g0.and_node(r).or_children[cands[ci].slot]].push_back(
          static_cast<int>(ci));
  }
  std::set<int> resurrected;
  for (const OrNode& o : g0.or_nodes) {
    if (or_cands.count(o.id)) continue;
    bool covered = false;
    for (int child : o.children)
      if (claim_of.count(child) || resurrected.count(child)) covered = true;
    if (!covered) resurrected.insert(o.children.front());
  }

  // ---- rebuild the leaf table: survivors in old-id order, then new ----
  AndOrGraph g1 = g0;
  g1.leaf_nodes.clear();
  std::map<int, int> handle;     // old leaf id -> new leaf id
  std::map<int, int> cand_leaf;  // cand index -> new leaf id
  int next = 10 * g0.m() + 1;
  for (const LeafNode& old : g0.leaf_nodes) {
    auto it = claim_of.find(old.id);
    if (it == claim_of.end() && !resurrected.count(old.id)) continue;
    LeafNode nl = old;
    nl.id = next++;
    if (it != claim_of.end()) {
      const Cand& c = cands[it->second];
      nl.weights =
          resample_cell_grid(old.weights, old.shape, c.shape, g0.cell_dims);
      nl.shape = c.shape;
      cand_leaf[it->second] = nl.id;
    }
    handle[old.id] = nl.id;
    g1.leaf_nodes.push_back(std::move(nl));
  }
  for (size_t ci = 0; ci < cands.size(); ++ci) {
    if (cands[ci].claimed != -1) continue;
    LeafNode nl;
    nl.id = next++;
    nl.part_slot = cands[ci].slot;
    nl.shape = cands[ci].shape;
    double nrm = cands[ci].centroid.norm();
    nl.weights = nrm > 1e-12 ? Vec(cands[ci].centroid / nrm)
                             : cands[ci].centroid;
    cand_leaf[static_cast<int>(ci)] = nl.id;
    out.plan.created.push_back({nl.id, nl.part_slot, nl.shape});
    g1.leaf_nodes.push_back(std::move(nl));
  }
  out.plan.handle = handle;
  for (const LeafNode& old : g0.leaf_nodes)
    if (!handle.count(old.id)) out.plan.removed.push_back(old.id);

  for (OrNode& o : g1.or_nodes) {
    std::set<int> kids;
    auto it = or_cands.find(o.id);
    if (it != or_cands.end())
      for (int ci : it->second) kids.insert(cand_leaf.at(ci));
    if (kids.empty())
      for (int child : g0.or_node(o.id).children)
        if (handle.count(child)) kids.insert(handle.at(child));
    o.children.assign(kids.begin(), kids.end());
  }

  // ---- sharing additions: multi-parent links absent from the old graph ----
  std::map<int, std::vector<int>> parents;
  for (const OrNode& o : g1.or_nodes)
    for (int child : o.children) parents[child].push_back(o.id);
  std::map<int, int> old_of;
  for (const auto& [o, nw] : handle) old_of[nw] = o;
  for (const auto& [leaf, ors] : parents) {
    if (ors.size() < 2) continue;
    for (int orid : ors) {
      bool preexisting = false;
      auto it = old_of.find(leaf);
      if (it != old_of.end()) {
        const std::vector<int>& oc = g0.or_node(orid).children;
        preexisting = std::find(oc.begin(), oc.end(), it->second) != oc.end();
      }
      if (!preexisting) out.plan.shared.push_back({leaf, orid});
    }
  }

  // ---- detect any structural difference ----
  bool changed = !out.plan.created.empty() || !out.plan.removed.empty() ||
                 !out.plan.shared.empty();
  if (!changed) {
    for (const LeafNode& old : g0.leaf_nodes)
      if (!(g1.leaf(handle.at(old.id)).shape == old.shape)) changed = true;
    for (size_t j = 0; j < g0.or_nodes.size() && !changed; ++j) {
      std::set<int> before;
      for (int child : g0.or_nodes[j].children)
        if (handle.count(child)) before.insert(handle.at(child));
      std::set<int> after(g1.or_nodes[j].children.begin(),
                          g1.or_nodes[j].children.end());
      if (before != after) changed = true;
    }
  }
  out.changed = changed;
  out.graph = g1;

  // ---- remap the frozen features: each patch descriptor relocates to its
  // cluster's leaf block, deformations recomputed for the new shapes ----
  FlatLayout layout = flat_layout(g1);
  out.phi_d.clear();
  out.q_d = Vec::Zero(layout.total);
  for (int p = 0; p < n_pos; ++p) {
    const SampleData& s = samples[est.positives[p]].data;
    const LatentAssignment& h = est.latent[p];
    struct Block {
      Eigen::Index off;
      Vec v;
    };
    std::vector<Block> blocks;
    for (int slot = 0; slot < 9; ++slot) {
      const int gi = p * 9 + slot;
      const int ci = patch_cand[gi];
      if (ci < 0) throw std::logic_error("patch left unassigned");
      const Patch& pa = patches[gi];
      const int leaf_id = cand_leaf.at(ci);
      const PartShape& shape = cands[ci].shape;
      const FeatureGrid& grid = s.pyramid.levels[h.part[slot].level].full;
      Placement pl = h.part[slot];
      pl.row = std::clamp(pl.row, 0, std::max(0, grid.rows - shape.rows));
      pl.col = std::clamp(pl.col, 0, std::max(0, grid.cols - shape.cols));
      blocks.push_back({layout.leaf_off[g1.leaf_index(leaf_id)],
                        resample_cell_grid(pa.descriptor, pa.shape, shape,
                                           g0.cell_dims)});
      const OrNode& o = g1.or_node(g1.and_node(h.r).or_children[slot]);
      Placement anchor = anchor_placement(s.pyramid, o, shape, h.root);
      blocks.push_back({layout.or_off[o.id - g1.m() - 1],
                        Vec(-deformation_feature(anchor, pl))});
    }
    const AndNode& a = g1.and_node(h.r);
    Vec root = extract_root_feature(s.pyramid, h.root, a.root_shape);
    Vec andv(root.size() + 1);
    andv << root, 1.0;
    blocks.push_back({layout.and_off[h.r - 1], std::move(andv)});
    std::sort(blocks.begin(), blocks.end(),
              [](const Block& x, const Block& y) { return x.off < y.off; });
    SparseVec phi(layout.total);
    Eigen::Index nnz = 0;
    for (const Block& b : blocks) nnz += b.v.size();
    phi.reserve(nnz);
    for (const Block& b : blocks)
      for (Eigen::Index t = 0; t < b.v.size(); ++t)
        phi.insertBack(b.off + t) = b.v[t];
    add_scaled(out.q_d, -config.solver.C, phi);
    out.phi_d.push_back(std::move(phi));
  }
  return out;
}

// ------------------------- parameter step & energy -------------------------

double model_energy(const AndOrGraph& g, const std::vector<DsoSample>& samples,
                    const DsoConfig& config) {
  const Vec w = flatten_parameters(g);
  double hinge = 0, truth = 0;
  for (const DsoSample& s : samples) {
    hinge += loss_augmented_inference(g, s.data, config.latent_min_iou,
                                      config.search_radius)
                 .value;
    if (s.data.label != -1)
      truth += best_true_window(g, s.data, config.latent_min_iou,
                                config.search_radius)
                   .score;
  }
  return 0.5 * w.squaredNorm() + config.solver.C * (hinge - truth);
}

StepResult step_parameters(const AndOrGraph& structure, const Vec& q,
                           const std::vector<DsoSample>& samples,
                           const DsoConfig& config, std::ostream* log) {
  GraphOracle oracle(structure, samples, config);
  SolveResult res =
      solve_convex(flat_layout(structure).total, q, oracle, config.solver, log);
  AndOrGraph g = structure;
  unflatten(g, res.w);
  StepResult out;
  out.w = flatten_parameters(g);  // quadratic deformation terms projected
  out.objective = res.objective;
  out.converged = res.converged;
  out.energy = model_energy(g, samples, config);
  return out;
}

// ------------------------- training loop -------------------------

AndOrGraph train_group(const std::vector<DsoSample>& samples,
                       const DsoConfig& config, std::ostream* log,
                       const ClusterFn& clusterer) {
  DsoState state;
  state.graph = initialize_group_model(samples, config);
  state.w = flatten_parameters(state.graph);
  state.energy = model_energy(state.graph, samples, config);

  for (int t = 1; t <= config.max_iterations; ++t) {
    const double prev = state.energy;
    LatentEstimate est = estimate_latent(state, samples, config);
    state.latent = est.latent;
    ReconfigResult rec = reconfigure(state, est, samples, config, clusterer);

    bool accepted = false;
    if (rec.changed) {
      StepResult cand = step_parameters(rec.graph, rec.q_d, samples, config);
      if (cand.energy < state.energy) {
        state.graph = rec.graph;
        unflatten(state.graph, cand.w);
        state.energy = cand.energy;
        accepted = true;
      }
    }
    if (!accepted) {
      StepResult step = step_parameters(state.graph, est.q, samples, config);
      if (step.energy <= state.energy) {
        unflatten(state.graph, step.w);
        state.energy = step.energy;
      }
    }
    state.w = flatten_parameters(state.graph);
    state.iteration = t;

    if (log)
      *log << t << ' ' << state.energy << ' ' << (accepted ? 1 : 0) << ' '
           << state.graph.n() << ' ' << count_shared_leaves(state.graph) << ' '
           << rec.plan.created.size() << ' ' << rec.plan.removed.size() << ' '
           << rec.plan.shared.size() << '\n';

    if (std::abs(prev - state.energy) <=
        config.epsilon * std::max(1.0, std::abs(prev)))
      break;
  }
  return state.graph;
}

}  // namespace aog
