#include "aog/combine.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace aog {

namespace {

void add_scaled(Vec& acc, double a, const SparseVec& phi) {
  for (SparseVec::InnerIterator it(phi); it; ++it)
    acc[it.index()] += a * it.value();
}

// Decomposes one scored hypothesis into per-node responses and leaf-pair
// features; the beta entries sum back to the subgraph score (edge-free).
ComboCandidate freeze_candidate(const AndOrGraph& g, const HogPyramid& pyramid,
                                const ResponseMaps& maps,
                                const ScoredWindow& win) {
  ComboCandidate c;
  c.r = win.r;
  c.rect = win.rect;
  c.base_score = win.score;
  c.latent = win.latent;
  const AndNode& a = g.and_node(win.r);
  for (int slot = 0; slot < 9; ++slot) {
    const int leaf_id = win.latent.leaf[slot];
    const Placement& p = win.latent.part[slot];
    c.beta[leaf_id - 1] += maps.at(g, leaf_id, p.level)(p.row, p.col);
    const OrNode& o = g.or_node(a.or_children[slot]);
    Vec4 psi = deformation_feature(
        anchor_placement(pyramid, o, g.leaf(leaf_id).shape, win.latent.root),
        p);
    c.beta[o.id - 1] += -o.deform.dot(psi);
  }
  c.beta[a.id - 1] =
      a.weights.dot(extract_root_feature(pyramid, win.latent.root,
                                         a.root_shape)) +
      a.bias;
  for (const auto& [s, sp] : adjacent_slots()) {
    const int i = win.latent.leaf[s];
    const int ip = win.latent.leaf[sp];
    const OrNode& os = g.or_node(a.or_children[s]);
    const OrNode& osp = g.or_node(a.or_children[sp]);
    Vec4 psi = leaf_pair_feature(win.latent.part[s], g.leaf(i).shape,
                                 win.latent.part[sp], g.leaf(ip).shape,
                                 anchor_center_abs(os, win.latent.root),
                                 anchor_center_abs(osp, win.latent.root));
    auto [it, fresh] = c.leaf_pairs.try_emplace({i, ip}, Vec4::Zero());
    it->second += psi;
  }
  return c;
}

// Best annotation-constrained hypothesis across the class's views;
// constrained placements beat IoU fallbacks, then score decides.
std::optional<ScoredWindow> constrained_hypothesis(const AndOrGraph& g,
                                                   const HogPyramid& pyramid,
                                                   const ResponseMaps& maps,
                                                   const LabeledBox& truth,
                                                   const CombineConfig& cfg) {
  std::optional<ScoredWindow> best;
  bool best_fallback = true;
  for (const AndNode& a : g.and_nodes) {
    if (a.category != truth.category) continue;
    bool fb = false;
    auto win = best_window(g, a.id, pyramid, maps, cfg.search_radius,
                           &truth.rect, cfg.latent_min_iou, &fb);
    if (!win) continue;
    if (!best || (best_fallback && !fb) ||
        (best_fallback == fb && win->score > best->score)) {
      best = win;
      best_fallback = fb;
    }
  }
  return best;
}

}  // namespace

// ------------------------- merge -------------------------

AndOrGraph merge_models(const std::vector<AndOrGraph>& models) {
  std::set<int> seen;
  int m_total = 0, cell_dims = models.empty() ? 36 : models.front().cell_dims;
  for (const AndOrGraph& g : models) {
    m_total += g.m();
    if (g.cell_dims != cell_dims)
      throw DimensionMismatch("merged models disagree on cell dims");
    for (const AndNode& a : g.and_nodes)
      if (!seen.insert(a.category).second)
        throw LabelCollision("class " + std::to_string(a.category) +
                             " appears in more than one group");
  }

  AndOrGraph out;
  out.cell_dims = cell_dims;
  int and_base = 0;
  int next_leaf = 10 * m_total + 1;
  for (const AndOrGraph& g : models) {
    std::map<int, int> leaf_map;
    for (const LeafNode& l : g.leaf_nodes) {
      LeafNode nl = l;
      nl.id = next_leaf++;
      leaf_map[l.id] = nl.id;
      out.leaf_nodes.push_back(std::move(nl));
    }
    for (const AndNode& a : g.and_nodes) {
      AndNode na = a;
      na.id = and_base + a.id;
      for (int slot = 0; slot < 9; ++slot)
        na.or_children[slot] = m_total + (na.id - 1) * 9 + slot + 1;
      out.and_nodes.push_back(std::move(na));
    }
    for (const OrNode& o : g.or_nodes) {
      OrNode no = o;
      no.owner = and_base + o.owner;
      no.id = m_total + (no.owner - 1) * 9 + o.part_slot + 1;
      for (int& child : no.children) child = leaf_map.at(child);
      out.or_nodes.push_back(std::move(no));
    }
    for (const auto& [key, v] : g.edges.leaf_edges)
      out.edges.leaf_edges[{leaf_map.at(key.first), leaf_map.at(key.second)}] =
          v;
    for (const auto& [key, v] : g.edges.and_edges)
      out.edges.and_edges[{and_base + key.first, and_base + key.second}] = v;
    and_base += g.m();
  }
  std::sort(out.or_nodes.begin(), out.or_nodes.end(),
            [](const OrNode& a, const OrNode& b) { return a.id < b.id; });
  return out;
}

// ------------------------- feature extraction -------------------------

CombinationFeatures extract_combination_features(
    const AndOrGraph& g, const HogPyramid& pyramid,
    const std::vector<LabeledBox>& truth, const CombineConfig& config) {
  CombinationFeatures out;
  ResponseMaps maps = compute_response_maps(g, pyramid);
  for (const LabeledBox& t : truth) {
    auto win = constrained_hypothesis(g, pyramid, maps, t, config);
    if (!win) continue;
    out.objects.push_back(freeze_candidate(g, pyramid, maps, *win));
  }
  const int k = static_cast<int>(out.objects.size());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (i != j)
        out.object_pairs[{i, j}] =
            and_pair_feature(out.objects[i].rect, out.objects[j].rect);
  return out;
}

ComboSample build_combination_sample(const AndOrGraph& g,
                                     const HogPyramid& pyramid,
                                     const std::vector<LabeledBox>& truth,
                                     const CombineConfig& config) {
  ComboSample out;
  out.truth = truth;
  ResponseMaps maps = compute_response_maps(g, pyramid);
  auto have = [&](const ScoredWindow& w) {
    for (const ComboCandidate& c : out.candidates)
      if (c.r == w.r && c.latent.root == w.latent.root) return true;
    return false;
  };
  for (const LabeledBox& t : truth) {
    auto win = constrained_hypothesis(g, pyramid, maps, t, config);
    if (!win) continue;
    out.truth_candidates.push_back(static_cast<int>(out.candidates.size()));
    out.candidates.push_back(freeze_candidate(g, pyramid, maps, *win));
  }
  for (const AndNode& a : g.and_nodes) {
    auto dets = detect_class(g, a.id, pyramid, maps, kNegInf, config.nms_iou,
                             config.search_radius);
    int kept = 0;
    for (const ScoredWindow& w : dets) {
      if (kept >= config.candidates_per_node) break;
      if (have(w)) continue;
      out.candidates.push_back(freeze_candidate(g, pyramid, maps, w));
      ++kept;
    }
  }
  for (ComboCandidate& c : out.candidates) {
    const int category = g.and_node(c.r).category;
    for (const LabeledBox& t : truth)
      if (t.category == category && iou(c.rect, t.rect) >= config.match_iou)
        c.matchable = true;
  }
  return out;
}

// ------------------------- parameter space -------------------------

ComboLayout combo_layout(const AndOrGraph& g) {
  ComboLayout layout;
  layout.beta_dim = g.n_prime();
  std::set<std::pair<int, int>> leaf_keys;
  for (const AndNode& a : g.and_nodes)
    for (const auto& [s, sp] : adjacent_slots())
      for (int i : g.or_node(a.or_children[s]).children)
        for (int ip : g.or_node(a.or_children[sp]).children)
          leaf_keys.insert({i, ip});
  Eigen::Index off = layout.beta_dim;
  for (const auto& key : leaf_keys) {
    layout.leaf_off[key] = off;
    off += 4;
  }
  for (const AndNode& a : g.and_nodes)
    for (const AndNode& b : g.and_nodes)
      if (a.id != b.id) {
        layout.and_off[{a.id, b.id}] = off;
        off += 6;
      }
  layout.total = off;
  return layout;
}

SparseVec labeling_feature(const AndOrGraph& g, const ComboLayout& layout,
                           const ComboSample& sample,
                           const std::vector<int>& chosen) {
  std::map<Eigen::Index, double> acc;
  for (int idx : chosen) {
    const ComboCandidate& c = sample.candidates.at(idx);
    for (const auto& [i, v] : c.beta) acc[i] += v;
    for (const auto& [key, psi] : c.leaf_pairs) {
      const Eigen::Index off = layout.leaf_off.at(key);
      for (int t = 0; t < 4; ++t) acc[off + t] += psi[t];
    }
  }
  for (int i : chosen)
    for (int j : chosen) {
      if (i == j) continue;
      const ComboCandidate& ci = sample.candidates.at(i);
      const ComboCandidate& cj = sample.candidates.at(j);
      auto it = layout.and_off.find({ci.r, cj.r});
      if (it == layout.and_off.end()) continue;
      Vec6 psi = and_pair_feature(ci.rect, cj.rect);
      for (int t = 0; t < 6; ++t) acc[it->second + t] += psi[t];
    }
  SparseVec phi(layout.total);
  phi.reserve(static_cast<Eigen::Index>(acc.size()));
  for (const auto& [idx, v] : acc) phi.insertBack(idx) = v;
  return phi;
}

// ------------------------- training -------------------------

namespace {

class ComboOracle : public MaxOracle {
 public:
  ComboOracle(const AndOrGraph& g, const ComboLayout& layout,
              const std::vector<ComboSample>& samples,
              const CombineConfig& config)
      : g_(g), layout_(layout), samples_(samples), config_(config) {}

  int sample_count() const override {
    return static_cast<int>(samples_.size());
  }

  Constraint most_violated(int k, const Vec& theta) override {
    const ComboSample& s = samples_[k];
    const int n = static_cast<int>(s.candidates.size());
    std::vector<double> score(n, 0.0);
    std::vector<GreedyCandidate> wins(n);
    for (int i = 0; i < n; ++i) {
      const ComboCandidate& c = s.candidates[i];
      double v = 0;
      for (const auto& [idx, val] : c.beta) v += theta[idx] * val;
      for (const auto& [key, psi] : c.leaf_pairs)
        v += theta.segment(layout_.leaf_off.at(key), 4).dot(psi);
      score[i] = v;
      wins[i].rect = c.rect;
      wins[i].scores = {{c.r, v + (c.matchable ? 0.0 : 1.0)}};
    }
    std::map<std::pair<int, int>, Vec6> alpha;
    for (const auto& [key, off] : layout_.and_off) {
      Vec6 a = theta.segment(off, 6);
      if (!a.isZero(0)) alpha[key] = a;
    }
    InstanceSet decoded = greedy_forward(wins, alpha);
    std::vector<int> chosen;
    for (const auto& [wi, aid] : decoded.chosen) chosen.push_back(wi);
    Constraint best = constraint_for(s, chosen, score, theta);
    Constraint empty = constraint_for(s, {}, score, theta);
    return empty.value > best.value ? empty : best;
  }

 private:
  Constraint constraint_for(const ComboSample& s,
                            const std::vector<int>& chosen,
                            const std::vector<double>& score,
                            const Vec& theta) const {
    Constraint c;
    c.phi = labeling_feature(g_, layout_, s, chosen);
    std::vector<ScoredBox> dets;
    for (int i : chosen)
      dets.push_back({g_.and_node(s.candidates[i].r).category,
                      s.candidates[i].rect, score[i]});
    c.loss = detection_count_loss(s.truth, std::move(dets), config_.match_iou);
    c.value = c.phi.dot(theta) + c.loss;
    return c;
  }

  const AndOrGraph& g_;
  ComboLayout layout_;
  const std::vector<ComboSample>& samples_;
  CombineConfig config_;
};

}  // namespace

CombinationResult train_combination(const AndOrGraph& g,
                                    const std::vector<ComboSample>& samples,
                                    const CombineConfig& config,
                                    std::ostream* log) {
  ComboLayout layout = combo_layout(g);
  Vec q = Vec::Zero(layout.total);
  for (const ComboSample& s : samples)
    add_scaled(q, -config.solver.C,
               labeling_feature(g, layout, s, s.truth_candidates));
  ComboOracle oracle(g, layout, samples, config);
  SolveResult res = solve_convex(layout.total, q, oracle, config.solver, log);

  CombinationResult out;
  out.converged = res.converged;
  out.objective = res.objective;
  out.params.beta = res.w.head(layout.beta_dim);
  for (const auto& [key, off] : layout.leaf_off)
    out.params.leaf_alpha[key] = res.w.segment(off, 4);
  for (const auto& [key, off] : layout.and_off)
    out.params.and_alpha[key] = res.w.segment(off, 6);
  return out;
}

CombinationResult train_combination(const AndOrGraph& g,
                                    const std::vector<CombinedImage>& images,
                                    const CombineConfig& config,
                                    std::ostream* log) {
  std::vector<ComboSample> samples;
  samples.reserve(images.size());
  for (const CombinedImage& im : images)
    samples.push_back(
        build_combination_sample(g, im.pyramid, im.truth, config));
  return train_combination(g, samples, config, log);
}

// ------------------------- reweighting -------------------------

AndOrGraph apply_reweighting(const AndOrGraph& g,
                             const CombinationParams& params) {
  if (params.beta.size() != g.n_prime())
    throw DimensionMismatch("beta has " + std::to_string(params.beta.size()) +
                            " entries, model needs " +
                            std::to_string(g.n_prime()));
  AndOrGraph out = g;
  for (AndNode& a : out.and_nodes) {
    a.weights *= params.beta[a.id - 1];
    a.bias *= params.beta[a.id - 1];
  }
  for (OrNode& o : out.or_nodes) {
    o.deform *= params.beta[o.id - 1];
    o.deform[2] = std::max(0.0, o.deform[2]);
    o.deform[3] = std::max(0.0, o.deform[3]);
  }
  for (LeafNode& l : out.leaf_nodes) l.weights *= params.beta[l.id - 1];
  out.edges.leaf_edges = params.leaf_alpha;
  out.edges.and_edges = params.and_alpha;
  return out;
}

}  // namespace aog
