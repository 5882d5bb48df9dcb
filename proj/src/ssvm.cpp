#include "aog/ssvm.hpp"

#include <algorithm>
#include <cmath>

namespace aog {

double zero_one_loss(int y_true, int y_pred) {
  return y_true == y_pred ? 0.0 : 1.0;
}

double detection_count_loss(const std::vector<LabeledBox>& truth,
                            std::vector<ScoredBox> predicted,
                            double iou_threshold) {
  std::stable_sort(predicted.begin(), predicted.end(),
                   [](const ScoredBox& a, const ScoredBox& b) {
                     return a.score > b.score;
                   });
  std::vector<bool> taken(truth.size(), false);
  int tp = 0;
  for (const ScoredBox& det : predicted) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (taken[t] || truth[t].category != det.category) continue;
      const double overlap = iou(det.rect, truth[t].rect);
      if (overlap >= best_iou && (best < 0 || overlap > best_iou)) {
        best = static_cast<int>(t);
        best_iou = overlap;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      tp++;
    }
  }
  return static_cast<double>(truth.size()) - tp;
}

// ------------------------- convex solver -------------------------

namespace {

struct WorkingConstraint {
  SparseVec phi;
  double loss = 0;
  double lambda = 0;
  int born = 0;  // round of creation, for cache pruning
};

double dot_sparse(const Vec& w, const SparseVec& phi) {
  if (phi.size() == 0) return 0;
  double s = 0;
  for (SparseVec::InnerIterator it(phi); it; ++it) s += w[it.index()] * it.value();
  return s;
}

void axpy_sparse(Vec& w, double a, const SparseVec& phi) {
  if (phi.size() == 0 || a == 0) return;
  for (SparseVec::InnerIterator it(phi); it; ++it) w[it.index()] += a * it.value();
}

}  // namespace

SolveResult solve_convex(Eigen::Index dim, const Vec& q, MaxOracle& oracle,
                         const SolverConfig& config, std::ostream* log) {
  if (q.size() != dim) throw DimensionMismatch("q has wrong dimension");
  const int N = oracle.sample_count();
  const double C = config.C;

  // Working sets, each seeded with the zero-feature background option whose
  // loss the oracle reports for the all-zero parameter vector.
  std::vector<std::vector<WorkingConstraint>> ws(N);
  Vec w0 = Vec::Zero(dim);
  for (int k = 0; k < N; ++k) {
    Constraint c = oracle.most_violated(k, w0);
    WorkingConstraint seed;
    seed.phi = std::move(c.phi);
    seed.loss = c.loss;
    seed.lambda = C;
    ws[k].push_back(std::move(seed));
  }

  // w(lambda) = -q - sum lambda*phi, maintained incrementally and refreshed
  // from scratch each round against drift.
  Vec w = -q;
  auto refresh_w = [&]() {
    w = -q;
    for (const auto& set : ws)
      for (const WorkingConstraint& c : set) axpy_sparse(w, -c.lambda, c.phi);
  };
  refresh_w();

  auto solve_qp = [&]() {
    for (int sweep = 0; sweep < config.qp_max_sweeps; ++sweep) {
      double worst = 0;
      for (int k = 0; k < N; ++k) {
        auto& set = ws[k];
        if (set.size() < 2) continue;
        // Scores s_w = w.phi + loss; optimal mass sits on the maximizers.
        int hi = 0, lo = -1;
        double s_hi = kNegInf, s_lo = kNegInf;
        std::vector<double> s(set.size());
        for (std::size_t i = 0; i < set.size(); ++i) {
          s[i] = dot_sparse(w, set[i].phi) + set[i].loss;
          if (s[i] > s_hi) {
            s_hi = s[i];
            hi = static_cast<int>(i);
          }
        }
        // Any positive-mass constraint scoring below the max violates KKT;
        // pick the worst one.
        for (std::size_t i = 0; i < set.size(); ++i)
          if (set[i].lambda > 0 && static_cast<int>(i) != hi &&
              (lo < 0 || s[i] < s_lo)) {
            lo = static_cast<int>(i);
            s_lo = s[i];
          }
        if (lo < 0) continue;
        const double gap = s_hi - s_lo;
        if (gap <= config.qp_epsilon) continue;
        worst = std::max(worst, gap);

        // Transfer mass lo -> hi; the dual gain is maximized at gap/|dphi|^2.
        Vec dphi = Vec::Zero(dim);
        axpy_sparse(dphi, 1.0, set[hi].phi);
        axpy_sparse(dphi, -1.0, set[lo].phi);
        const double denom = dphi.squaredNorm();
        if (denom <= 0) continue;
        const double t = std::min(gap / denom, set[lo].lambda);
        set[hi].lambda += t;
        set[lo].lambda -= t;
        w -= t * dphi;
      }
      if (worst <= config.qp_epsilon) break;
    }
  };

  auto true_objective = [&](const Vec& at, double* hinge_out) {
    double hinge = 0;
    for (int k = 0; k < N; ++k) hinge += oracle.most_violated(k, at).value;
    if (hinge_out) *hinge_out = hinge;
    return 0.5 * at.squaredNorm() + at.dot(q) + C * hinge;
  };

  SolveResult result;
  result.w = w;
  result.objective = std::numeric_limits<double>::infinity();

  double prev_best = std::numeric_limits<double>::infinity();
  for (int round = 0; round < config.max_cutting_planes; ++round) {
    solve_qp();
    result.rounds = round + 1;

    // Violation pass doubles as the true-objective evaluation.
    double hinge = 0;
    int added = 0;
    std::vector<Constraint> fresh(N);
    for (int k = 0; k < N; ++k) {
      fresh[k] = oracle.most_violated(k, w);
      hinge += fresh[k].value;
    }
    const double objective = 0.5 * w.squaredNorm() + w.dot(q) + C * hinge;
    if (objective < result.objective) {
      result.objective = objective;
      result.w = w;
    }
    if (log)
      *log << round << " " << result.objective << " " << hinge << " "
           << 0.5 * w.squaredNorm() << "\n";

    for (int k = 0; k < N; ++k) {
      double ws_max = kNegInf;
      for (const WorkingConstraint& c : ws[k])
        ws_max = std::max(ws_max, dot_sparse(w, c.phi) + c.loss);
      if (fresh[k].value > ws_max + 1e-9) {
        WorkingConstraint nc;
        nc.phi = std::move(fresh[k].phi);
        nc.loss = fresh[k].loss;
        nc.born = round;
        ws[k].push_back(std::move(nc));
        added++;
      }
      // Cache pruning: keep mass-carrying and recent constraints.
      if (static_cast<int>(ws[k].size()) > config.cache_size) {
        auto& set = ws[k];
        std::stable_sort(set.begin() + 1, set.end(),
                         [](const WorkingConstraint& a,
                            const WorkingConstraint& b) {
                           if ((a.lambda > 0) != (b.lambda > 0))
                             return a.lambda > 0;
                           return a.born > b.born;
                         });
        while (static_cast<int>(set.size()) > config.cache_size &&
               set.back().lambda == 0)
          set.pop_back();
      }
    }

    const double rel =
        std::abs(prev_best - result.objective) /
        std::max(1.0, std::abs(result.objective));
    if (added == 0 || (round > 0 && rel < config.convergence_epsilon)) {
      result.converged = true;
      break;
    }
    prev_best = result.objective;
    refresh_w();
  }

  // Final true objective of the returned iterate (it may differ from the
  // last-round w).
  double final_hinge = 0;
  result.objective = true_objective(result.w, &final_hinge);
  return result;
}

// ------------------------- loss-augmented inference -------------------------

LossAugResult loss_augmented_inference(const AndOrGraph& g,
                                       const SampleData& sample,
                                       double latent_min_iou,
                                       int search_radius) {
  const ResponseMaps maps = compute_response_maps(g, sample.pyramid);

  LossAugResult best;
  best.y = -1;
  best.loss = zero_one_loss(sample.label, -1);
  best.score = 0;
  best.value = best.loss;  // background option: zero feature

  for (const AndNode& a : g.and_nodes) {
    const bool is_true_class =
        sample.label != -1 && a.category == sample.label;
    const Rect* constraint = is_true_class ? &sample.box : nullptr;
    const std::optional<ScoredWindow> win =
        best_window(g, a.id, sample.pyramid, maps, search_radius, constraint,
                    latent_min_iou, nullptr);
    if (!win) continue;
    const double loss = zero_one_loss(sample.label, a.category);
    const double value = win->score + loss;
    if (value > best.value) {
      best.y = a.category;
      best.value = value;
      best.score = win->score;
      best.loss = loss;
      best.window = win;
    }
  }
  return best;
}

ScoredWindow best_true_window(const AndOrGraph& g, const SampleData& sample,
                              double latent_min_iou, int search_radius) {
  if (sample.label == -1)
    throw InvalidAssignment("background samples have no true window");
  const ResponseMaps maps = compute_response_maps(g, sample.pyramid);
  std::optional<ScoredWindow> best;
  bool best_fallback = false;
  for (const AndNode& a : g.and_nodes) {
    if (a.category != sample.label) continue;
    bool fallback = false;
    const std::optional<ScoredWindow> win =
        best_window(g, a.id, sample.pyramid, maps, search_radius, &sample.box,
                    latent_min_iou, &fallback);
    if (!win) continue;
    // A constrained window always beats a fallback one.
    if (!best || (best_fallback && !fallback) ||
        (best_fallback == fallback && win->score > best->score)) {
      best = win;
      best_fallback = fallback;
    }
  }
  if (!best)
    throw InvalidAssignment("no root placement fits the sample's pyramid");
  return *best;
}

}  // namespace aog
