#pragma once

#include <map>
#include <ostream>

#include "aog/ssvm.hpp"

namespace aog {

// Disjoint-class group models merged under one root: node ids re-laid-out
// for the combined m and n, per-group leaf sharing kept, none added across
// groups. Throws LabelCollision when two groups claim a class.
AndOrGraph merge_models(const std::vector<AndOrGraph>& models);

// Re-weighting vector (one entry per node id) plus collaborative edges.
struct CombinationParams {
  Vec beta;  // length n', indexed by node id - 1
  std::map<std::pair<int, int>, Vec4> leaf_alpha;
  std::map<std::pair<int, int>, Vec6> and_alpha;
};

// One frozen detection hypothesis for combination training: its per-node
// responses keyed by beta index and the pair features between its activated
// adjacent leaves.
struct ComboCandidate {
  int r = 0;
  Rect rect;
  bool matchable = false;  // can count as a true positive for some annotation
  double base_score = 0;   // subgraph score at freeze time
  LatentAssignment latent;
  std::map<int, double> beta;  // node id - 1 -> response
  std::map<std::pair<int, int>, Vec4> leaf_pairs;
};

// One training image reduced to frozen candidates: the annotation-constrained
// hypotheses (the groundtruth labeling) plus sliding-window detections.
struct ComboSample {
  std::vector<ComboCandidate> candidates;
  std::vector<int> truth_candidates;  // indices forming the true labeling
  std::vector<LabeledBox> truth;
};

struct CombinedImage {
  HogPyramid pyramid;
  std::vector<LabeledBox> truth;
};

struct CombineConfig {
  SolverConfig solver;
  int candidates_per_node = 3;  // detections kept per and-node per image
  double match_iou = 0.5;
  double latent_min_iou = kLatentMinIou;
  int search_radius = kDefaultSearchRadius;
  double nms_iou = 0.5;
};

// Parameter layout for the combination feature space:
// [beta | leaf-pair 4-blocks | and-pair 6-blocks].
struct ComboLayout {
  Eigen::Index beta_dim = 0;
  std::map<std::pair<int, int>, Eigen::Index> leaf_off;
  std::map<std::pair<int, int>, Eigen::Index> and_off;
  Eigen::Index total = 0;
};
ComboLayout combo_layout(const AndOrGraph& g);

// Groundtruth-constrained responses for every annotated object plus the
// pairwise features between objects (keyed by ordered object indices).
struct CombinationFeatures {
  std::vector<ComboCandidate> objects;
  std::map<std::pair<int, int>, Vec6> object_pairs;
};
CombinationFeatures extract_combination_features(
    const AndOrGraph& g, const HogPyramid& pyramid,
    const std::vector<LabeledBox>& truth, const CombineConfig& config = {});

// Candidate harvesting for one image: constrained hypotheses per annotation
// and the top sliding-window detections per and-node, deduplicated.
ComboSample build_combination_sample(const AndOrGraph& g,
                                     const HogPyramid& pyramid,
                                     const std::vector<LabeledBox>& truth,
                                     const CombineConfig& config = {});

// Joint feature of a labeling (a set of candidate indices): candidate
// responses into the beta block, their internal leaf-pair features, and the
// pair features between every ordered pair of chosen candidates.
SparseVec labeling_feature(const AndOrGraph& g, const ComboLayout& layout,
                           const ComboSample& sample,
                           const std::vector<int>& chosen);

struct CombinationResult {
  CombinationParams params;
  bool converged = false;
  double objective = 0;
};

// Structural SVM over the combination space with detection-count loss
// (annotations minus true positives); the decoding oracle runs greedy
// forward inference with +1 added to every candidate that cannot match an
// annotation. Frozen candidates in, learned reweighting and edges out.
CombinationResult train_combination(const AndOrGraph& g,
                                    const std::vector<ComboSample>& samples,
                                    const CombineConfig& config = {},
                                    std::ostream* log = nullptr);
CombinationResult train_combination(const AndOrGraph& g,
                                    const std::vector<CombinedImage>& images,
                                    const CombineConfig& config = {},
                                    std::ostream* log = nullptr);

// Scales each node's parameters by its beta entry (and-node biases included,
// quadratic deformation terms re-clamped at zero) and installs the learned
// edges. Throws DimensionMismatch when beta is not n'-dimensional.
AndOrGraph apply_reweighting(const AndOrGraph& g,
                             const CombinationParams& params);

}  // namespace aog
