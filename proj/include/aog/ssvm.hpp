#pragma once

#include <optional>
#include <ostream>

#include "aog/inference.hpp"

namespace aog {

struct SolverConfig {
  double C = 0.005;
  double convergence_epsilon = 1e-3;  // relative objective change
  int max_cutting_planes = 200;       // outer rounds
  int cache_size = 100;               // constraints kept per sample
  double qp_epsilon = 1e-10;          // inner KKT violation tolerance
  int qp_max_sweeps = 5000;
};

double zero_one_loss(int y_true, int y_pred);

struct LabeledBox {
  int category = 0;
  Rect rect;
};
struct ScoredBox {
  int category = 0;
  Rect rect;
  double score = 0;
};

// K - tp with greedy score-ordered one-to-one matching at IoU >= threshold,
// same-class only.
double detection_count_loss(const std::vector<LabeledBox>& truth,
                            std::vector<ScoredBox> predicted,
                            double iou_threshold = 0.5);

// ------------------------- convex solver -------------------------

// One (y, H) option for a sample: its joint feature and task loss.
struct Constraint {
  SparseVec phi;    // zero-size stands for the all-zero feature
  double loss = 0;
  double value = 0;  // w . phi + loss at generation time
};

// Per-sample most-violated-option generator.
class MaxOracle {
 public:
  virtual ~MaxOracle() = default;
  virtual int sample_count() const = 0;
  virtual Constraint most_violated(int k, const Vec& w) = 0;
};

struct SolveResult {
  Vec w;
  double objective = 0;  // best true objective observed
  bool converged = false;
  int rounds = 0;
};

// Minimizes 0.5*|w|^2 + w.q + C * sum_k max_y,H (w.phi + loss) by n-slack
// cutting planes; the working-set QP is solved exactly by pairwise dual
// coordinate transfers over the per-sample simplices (sum_w lambda_kw = C).
// Every sample's working set is seeded with the background option so the
// simplex is never empty. Returns the best iterate observed; converged is
// false when max_cutting_planes ran out first. Per-round log lines:
// `round objective hinge regularizer`.
SolveResult solve_convex(Eigen::Index dim, const Vec& q, MaxOracle& oracle,
                         const SolverConfig& config,
                         std::ostream* log = nullptr);

// ------------------------- loss-augmented inference -------------------------

// One training sample bound to its feature pyramid. label -1 = background;
// positives carry the annotated box that constrains their latent root
// placements (IoU >= latent_min_iou, best-IoU fallback when unattainable).
struct SampleData {
  HogPyramid pyramid;
  int label = -1;
  Rect box;
};

inline constexpr double kLatentMinIou = 0.7;

struct LossAugResult {
  int y = -1;  // category, -1 = background
  double value = kNegInf;  // w.phi + loss
  double score = 0;        // w.phi alone
  double loss = 0;
  std::optional<ScoredWindow> window;  // engaged when y != -1
};

// argmax over (y, H) of w.phi(X, y, H) + L(y_k, y), where g already carries
// the parameters w. The true class's latent search is annotation-constrained
// (the same H-set used for latent estimation); other classes and background
// samples search the full image. Ties prefer background, then the smaller
// class label.
LossAugResult loss_augmented_inference(const AndOrGraph& g,
                                       const SampleData& sample,
                                       double latent_min_iou = kLatentMinIou,
                                       int search_radius = kDefaultSearchRadius);

// max_H w.phi(X, y_k, H) over the constrained latent set of a positive
// sample: the concave half of the training objective.
ScoredWindow best_true_window(const AndOrGraph& g, const SampleData& sample,
                              double latent_min_iou = kLatentMinIou,
                              int search_radius = kDefaultSearchRadius);

}  // namespace aog
