#include "aog/inference.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace aog {

// ------------------------- response maps -------------------------

ResponseMaps compute_response_maps(const AndOrGraph& g,
                                   const HogPyramid& pyramid) {
  ResponseMaps out;
  out.maps.resize(g.leaf_nodes.size());
  const int n_levels = static_cast<int>(pyramid.levels.size());
  for (std::size_t idx = 0; idx < g.leaf_nodes.size(); ++idx) {
    const LeafNode& l = g.leaf_nodes[idx];
    out.computed_leaves++;
    out.maps[idx].resize(n_levels);
    // View the weights as one row per window cell for cell-wise dots.
    Eigen::Map<const Mat> wmap(l.weights.data(), g.cell_dims,
                               l.shape.rows * l.shape.cols);
    for (int lv = 0; lv < n_levels; ++lv) {
      const FeatureGrid& grid = pyramid.levels[lv].full;
      const int mr = grid.rows - l.shape.rows + 1;
      const int mc = grid.cols - l.shape.cols + 1;
      if (mr < 1 || mc < 1) continue;  // leave empty
      Mat& map = out.maps[idx][lv];
      map.setZero(mr, mc);
      for (int r = 0; r < mr; ++r)
        for (int c = 0; c < mc; ++c) {
          double s = 0;
          int w = 0;
          for (int rr = 0; rr < l.shape.rows; ++rr)
            for (int cc = 0; cc < l.shape.cols; ++cc)
              s += grid.cell(r + rr, c + cc).dot(wmap.col(w++));
          map(r, c) = s;
        }
    }
  }
  return out;
}

// ------------------------- local testing -------------------------

DTables local_testing(const AndOrGraph& g, int r, const Placement& p_r,
                      const ResponseMaps& maps, const HogPyramid& pyramid,
                      int search_radius) {
  DTables d;
  const AndNode& a = g.and_node(r);
  for (int s = 0; s < 9; ++s) {
    const OrNode& o = g.or_node(a.or_children[s]);
    const std::size_t nc = o.children.size();
    d.score[s].assign(nc, kNegInf);
    d.where[s].assign(nc, Placement{p_r.level, 0, 0});
    for (std::size_t ci = 0; ci < nc; ++ci) {
      const LeafNode& l = g.leaf(o.children[ci]);
      const Mat& map = maps.at(g, l.id, p_r.level);
      if (map.size() == 0) continue;  // shape does not fit this level
      const Placement anchor = anchor_placement(pyramid, o, l.shape, p_r);
      const int r0 = std::max(0, anchor.row - search_radius);
      const int r1 = std::min<int>(map.rows() - 1, anchor.row + search_radius);
      const int c0 = std::max(0, anchor.col - search_radius);
      const int c1 = std::min<int>(map.cols() - 1, anchor.col + search_radius);
      double best = kNegInf;
      Placement at{p_r.level, anchor.row, anchor.col};
      for (int pr = r0; pr <= r1; ++pr)
        for (int pc = c0; pc <= c1; ++pc) {
          const double dx = pc - anchor.col;
          const double dy = pr - anchor.row;
          const double val = map(pr, pc) -
                             (o.deform[0] * dx + o.deform[1] * dy +
                              o.deform[2] * dx * dx + o.deform[3] * dy * dy);
          if (val > best) {
            best = val;
            at = {p_r.level, pr, pc};
          }
        }
      d.score[s][ci] = best;
      d.where[s][ci] = at;
    }
  }
  return d;
}

// ------------------------- activation selection -------------------------

namespace {

// Leaf-edge response between the chosen children of two adjacent slots.
double edge_response(const AndOrGraph& g, const AndNode& a,
                     const Placement& p_r, const DTables& d, int slot_a,
                     int ca, int slot_b, int cb) {
  if (g.edges.leaf_edges.empty()) return 0;
  int sa = slot_a, sb = slot_b, xa = ca, xb = cb;
  if (sa > sb) {
    std::swap(sa, sb);
    std::swap(xa, xb);
  }
  const OrNode& oa = g.or_node(a.or_children[sa]);
  const OrNode& ob = g.or_node(a.or_children[sb]);
  const int ia = oa.children[xa], ib = ob.children[xb];
  const auto it = g.edges.leaf_edges.find({ia, ib});
  if (it == g.edges.leaf_edges.end()) return 0;
  const Vec4 psi = leaf_pair_feature(
      d.where[sa][xa], g.leaf(ia).shape, d.where[sb][xb], g.leaf(ib).shape,
      anchor_center_abs(oa, p_r), anchor_center_abs(ob, p_r));
  return it->second.dot(psi);
}

}  // namespace

Activation select_activations(const AndOrGraph& g, int r, const DTables& d,
                              const Placement& p_r) {
  const AndNode& a = g.and_node(r);
  Activation act;

  if (g.edges.leaf_edges.empty()) {
    // Decoupled case: per-slot argmax, ties to the lowest child index.
    act.score = 0;
    for (int s = 0; s < 9; ++s) {
      int best = 0;
      for (std::size_t ci = 1; ci < d.score[s].size(); ++ci)
        if (d.score[s][ci] > d.score[s][best]) best = static_cast<int>(ci);
      act.choice[s] = best;
      act.score += d.score[s][best];
    }
    return act;
  }

  // Exact DP sweeping the 3x3 grid in column-major cell order with a sliding
  // state of the last three choices; cell t covers slot (t%3)*3 + t/3, its
  // placed neighbors are t-1 (above, same column) and t-3 (left, same row).
  auto slot_of = [](int t) { return (t % 3) * 3 + t / 3; };
  std::array<int, 9> k{};
  for (int t = 0; t < 9; ++t)
    k[t] = static_cast<int>(d.score[slot_of(t)].size());
  auto kk = [&](int t) { return t < 0 ? 1 : k[t]; };

  std::vector<double> dp = {0.0};  // indexed by (c_{t-1}, c_{t-2}, c_{t-3})
  std::vector<std::vector<int>> back(9);
  for (int t = 0; t < 9; ++t) {
    const int s = slot_of(t);
    const int row = t % 3, col = t / 3;
    const int n1 = kk(t - 1), n2 = kk(t - 2), n3 = kk(t - 3);
    std::vector<double> next(static_cast<std::size_t>(k[t]) * n1 * n2,
                             kNegInf);
    back[t].assign(next.size(), 0);
    for (int c1 = 0; c1 < n1; ++c1)
      for (int c2 = 0; c2 < n2; ++c2)
        for (int ct = 0; ct < k[t]; ++ct) {
          double base = d.score[s][ct];
          if (row > 0)
            base += edge_response(g, a, p_r, d, slot_of(t - 1), c1, s, ct);
          double best = kNegInf;
          int arg = 0;
          for (int c3 = 0; c3 < n3; ++c3) {
            double v = dp[(static_cast<std::size_t>(c1) * n2 + c2) * n3 + c3];
            if (col > 0)
              v += edge_response(g, a, p_r, d, slot_of(t - 3), c3, s, ct);
            if (v > best) {
              best = v;
              arg = c3;
            }
          }
          const std::size_t at =
              (static_cast<std::size_t>(ct) * n1 + c1) * n2 + c2;
          next[at] = base + best;
          back[t][at] = arg;
        }
    dp = std::move(next);
  }

  // Final state indexes (c8, c7, c6); walk the backpointers to recover all.
  std::size_t best_state = 0;
  for (std::size_t st = 1; st < dp.size(); ++st)
    if (dp[st] > dp[best_state]) best_state = st;
  act.score = dp[best_state];

  std::array<int, 9> cell_choice{};
  int c1 = static_cast<int>(best_state / (kk(7) * kk(6)));
  int c2 = static_cast<int>(best_state / kk(6) % kk(7));
  int c3 = static_cast<int>(best_state % kk(6));
  cell_choice[8] = c1;
  cell_choice[7] = c2;
  cell_choice[6] = c3;
  for (int t = 8; t >= 0; --t) {
    const int n1 = kk(t - 1), n2 = kk(t - 2);
    const std::size_t at =
        (static_cast<std::size_t>(cell_choice[t]) * n1 +
         (t >= 1 ? cell_choice[t - 1] : 0)) *
            n2 +
        (t >= 2 ? cell_choice[t - 2] : 0);
    if (t >= 3) cell_choice[t - 3] = back[t][at];
  }
  for (int t = 0; t < 9; ++t) act.choice[slot_of(t)] = cell_choice[t];
  return act;
}

// ------------------------- subgraph scoring -------------------------

ScoredWindow score_subgraph(const AndOrGraph& g, int r, const Placement& p_r,
                            const HogPyramid& pyramid,
                            const ResponseMaps& maps, int search_radius) {
  const AndNode& a = g.and_node(r);
  if (p_r.level < 0 || p_r.level >= static_cast<int>(pyramid.levels.size()))
    throw OutOfBounds("root level " + std::to_string(p_r.level));
  const FeatureGrid& half = pyramid.levels[p_r.level].half;
  if (p_r.row < 0 || p_r.col < 0 || p_r.row + a.root_shape.rows > half.rows ||
      p_r.col + a.root_shape.cols > half.cols)
    throw OutOfBounds("root window outside half-resolution grid");

  const DTables d = local_testing(g, r, p_r, maps, pyramid, search_radius);
  const Activation act = select_activations(g, r, d, p_r);

  ScoredWindow w;
  w.r = r;
  w.category = a.category;
  w.root = p_r;
  w.rect = root_window_rect(pyramid, p_r, a.root_shape);
  const double root_resp =
      a.weights.dot(extract_root_feature(pyramid, p_r, a.root_shape));
  w.score = act.score + root_resp + a.bias;
  w.latent.r = r;
  w.latent.root = p_r;
  for (int s = 0; s < 9; ++s) {
    const OrNode& o = g.or_node(a.or_children[s]);
    w.latent.leaf[s] = o.children[act.choice[s]];
    w.latent.part[s] = d.where[s][act.choice[s]];
  }
  return w;
}

// ------------------------- sliding-window detection -------------------------

namespace {

// Deterministic candidate ordering: score desc, then position asc.
bool window_before(const ScoredWindow& a, const ScoredWindow& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.root.level != b.root.level) return a.root.level < b.root.level;
  if (a.root.row != b.root.row) return a.root.row < b.root.row;
  if (a.root.col != b.root.col) return a.root.col < b.root.col;
  return a.r < b.r;
}

std::vector<ScoredWindow> nms(std::vector<ScoredWindow> windows,
                              double nms_iou) {
  std::sort(windows.begin(), windows.end(), window_before);
  std::vector<ScoredWindow> kept;
  for (const ScoredWindow& w : windows) {
    bool suppressed = false;
    for (const ScoredWindow& k : kept)
      if (iou(w.rect, k.rect) >= nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(w);
  }
  return kept;
}

}  // namespace

std::vector<ScoredWindow> detect_class(const AndOrGraph& g, int r,
                                       const HogPyramid& pyramid,
                                       const ResponseMaps& maps,
                                       double threshold, double nms_iou,
                                       int search_radius) {
  const AndNode& a = g.and_node(r);
  std::vector<ScoredWindow> hits;
  for (int lv = 0; lv < static_cast<int>(pyramid.levels.size()); ++lv) {
    const FeatureGrid& half = pyramid.levels[lv].half;
    for (int row = 0; row + a.root_shape.rows <= half.rows; ++row)
      for (int col = 0; col + a.root_shape.cols <= half.cols; ++col) {
        ScoredWindow w = score_subgraph(g, r, {lv, row, col}, pyramid, maps,
                                        search_radius);
        if (w.score >= threshold) hits.push_back(std::move(w));
      }
  }
  return nms(std::move(hits), nms_iou);
}

std::optional<ScoredWindow> best_window(const AndOrGraph& g, int r,
                                        const HogPyramid& pyramid,
                                        const ResponseMaps& maps,
                                        int search_radius,
                                        const Rect* constraint_box,
                                        double min_iou, bool* used_fallback) {
  const AndNode& a = g.and_node(r);
  std::optional<ScoredWindow> best;
  std::optional<ScoredWindow> fallback;
  double fallback_iou = -1;
  for (int lv = 0; lv < static_cast<int>(pyramid.levels.size()); ++lv) {
    const FeatureGrid& half = pyramid.levels[lv].half;
    for (int row = 0; row + a.root_shape.rows <= half.rows; ++row)
      for (int col = 0; col + a.root_shape.cols <= half.cols; ++col) {
        const Placement p{lv, row, col};
        if (constraint_box) {
          const double overlap =
              iou(root_window_rect(pyramid, p, a.root_shape), *constraint_box);
          if (overlap < min_iou) {
            if (overlap > fallback_iou) {
              fallback_iou = overlap;
              fallback =
                  score_subgraph(g, r, p, pyramid, maps, search_radius);
            }
            continue;
          }
        }
        ScoredWindow w =
            score_subgraph(g, r, p, pyramid, maps, search_radius);
        if (!best || w.score > best->score) best = std::move(w);
      }
  }
  if (used_fallback) *used_fallback = false;
  if (best) return best;
  if (constraint_box && fallback) {
    if (used_fallback) *used_fallback = true;
    return fallback;
  }
  return std::nullopt;
}

// ------------------------- greedy forward -------------------------

namespace {

double and_edge_response(const std::map<std::pair<int, int>, Vec6>& edges,
                         int ra, const Rect& rect_a, int rb,
                         const Rect& rect_b) {
  const auto it = edges.find({ra, rb});
  if (it == edges.end()) return 0;
  return it->second.dot(and_pair_feature(rect_a, rect_b));
}

}  // namespace

InstanceSet greedy_forward(
    const std::vector<GreedyCandidate>& windows,
    const std::map<std::pair<int, int>, Vec6>& and_edges) {
  InstanceSet ins;
  const std::size_t K = windows.size();
  std::vector<std::vector<double>> delta(K);
  for (std::size_t k = 0; k < K; ++k) {
    delta[k].resize(windows[k].scores.size());
    for (std::size_t yi = 0; yi < windows[k].scores.size(); ++yi)
      delta[k][yi] = windows[k].scores[yi].second;
  }
  std::vector<bool> used(K, false);

  for (;;) {
    // Best remaining (window, label); ties to the lowest window then label.
    std::size_t bk = K;
    std::size_t by = 0;
    double best = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (used[k]) continue;
      for (std::size_t yi = 0; yi < delta[k].size(); ++yi)
        if (bk == K ? delta[k][yi] > 0 : delta[k][yi] > best) {
          bk = k;
          by = yi;
          best = delta[k][yi];
        }
    }
    if (bk == K) break;  // best remaining gain <= 0: S cannot increase

    const int y_new = windows[bk].scores[by].first;
    ins.chosen.emplace_back(static_cast<int>(bk), y_new);
    ins.total += best;
    used[bk] = true;

    if (and_edges.empty()) continue;
    for (std::size_t k = 0; k < K; ++k) {
      if (used[k]) continue;
      for (std::size_t yi = 0; yi < delta[k].size(); ++yi) {
        const int y = windows[k].scores[yi].first;
        delta[k][yi] +=
            and_edge_response(and_edges, y, windows[k].rect, y_new,
                              windows[bk].rect) +
            and_edge_response(and_edges, y_new, windows[bk].rect, y,
                              windows[k].rect);
      }
    }
  }
  return ins;
}

// ------------------------- full pipeline -------------------------

std::vector<Detection> detect_multiclass(const AndOrGraph& g,
                                         const HogPyramid& pyramid,
                                         const DetectConfig& config) {
  const ResponseMaps maps = compute_response_maps(g, pyramid);

  // Per-and-node sliding windows, then NMS across the views of a category.
  std::map<int, std::vector<ScoredWindow>> per_category;
  for (const AndNode& a : g.and_nodes) {
    std::vector<ScoredWindow> wins =
        detect_class(g, a.id, pyramid, maps, config.threshold, config.nms_iou,
                     config.search_radius);
    auto& bucket = per_category[a.category];
    bucket.insert(bucket.end(), wins.begin(), wins.end());
  }

  std::vector<ScoredWindow> candidates;
  for (auto& [category, wins] : per_category) {
    std::vector<ScoredWindow> kept = nms(std::move(wins), config.nms_iou);
    candidates.insert(candidates.end(), kept.begin(), kept.end());
  }

  std::vector<GreedyCandidate> greedy_in(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    greedy_in[k].rect = candidates[k].rect;
    greedy_in[k].scores = {{candidates[k].r, candidates[k].score}};
  }
  const InstanceSet ins = greedy_forward(greedy_in, g.edges.and_edges);

  std::vector<Detection> out;
  out.reserve(ins.chosen.size());
  for (const auto& [k, r] : ins.chosen) {
    const ScoredWindow& w = candidates[k];
    out.push_back({w.category, w.r, w.rect, w.score, w.latent});
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return a.score > b.score;
  });
  return out;
}

std::vector<Detection> detect_multiclass(const AndOrGraph& g,
                                         const Image& image,
                                         const DetectConfig& config) {
  return detect_multiclass(g, build_hog_pyramid(image, config.hog), config);
}

std::string format_detection(const std::string& image_id, const Detection& d) {
  std::ostringstream os;
  os << image_id << " " << d.category << " " << d.score << " " << d.rect.x0
     << " " << d.rect.y0 << " " << d.rect.x1 << " " << d.rect.y1;
  return os.str();
}

}  // namespace aog
