#pragma once

#include <limits>
#include <optional>

#include "aog/graph.hpp"

namespace aog {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr int kDefaultSearchRadius = 4;

// Leaf response maps, shared across every class that owns the leaf: one
// score matrix per (leaf, level) with dims = grid dims - shape + 1 (empty
// when the shape does not fit the level).
struct ResponseMaps {
  std::vector<std::vector<Mat>> maps;  // [leaf index][level]
  int computed_leaves = 0;             // instrumentation: filters evaluated

  const Mat& at(const AndOrGraph& g, int leaf_id, int level) const {
    return maps[g.leaf_index(leaf_id)][level];
  }
};

ResponseMaps compute_response_maps(const AndOrGraph& g,
                                   const HogPyramid& pyramid);

// Local testing tables for one root placement: per part slot, for every
// child leaf of the slot's or-node, the deformation-penalized maximum
// response over the search window around the anchor and its argmax.
struct DTables {
  std::array<std::vector<double>, 9> score;
  std::array<std::vector<Placement>, 9> where;
};

DTables local_testing(const AndOrGraph& g, int r, const Placement& p_r,
                      const ResponseMaps& maps, const HogPyramid& pyramid,
                      int search_radius = kDefaultSearchRadius);

// Best switch configuration V over the 9 slots, including leaf-edge
// responses between adjacent slots; exact DP over the 3x3 grid.
struct Activation {
  std::array<int, 9> choice{};  // child index per slot
  double score = kNegInf;       // sum of chosen D entries + edge responses
};

Activation select_activations(const AndOrGraph& g, int r, const DTables& d,
                              const Placement& p_r);

// One scored detection hypothesis.
struct ScoredWindow {
  int r = 0;         // and-node id
  int category = 0;  // its class label
  Placement root;    // half-resolution cells
  Rect rect;         // original-image pixels
  double score = kNegInf;
  LatentAssignment latent;
};

// Full subgraph score at one root placement: local testing + activation
// selection + root response + bias. Throws OutOfBounds when the root window
// does not fit the half-resolution grid.
ScoredWindow score_subgraph(const AndOrGraph& g, int r, const Placement& p_r,
                            const HogPyramid& pyramid,
                            const ResponseMaps& maps,
                            int search_radius = kDefaultSearchRadius);

// Sliding-window candidates for one and-node with greedy NMS (suppression
// at overlap >= nms_iou), sorted by descending score.
std::vector<ScoredWindow> detect_class(
    const AndOrGraph& g, int r, const HogPyramid& pyramid,
    const ResponseMaps& maps, double threshold, double nms_iou = 0.5,
    int search_radius = kDefaultSearchRadius);

// Highest-scoring root placement for one and-node. With a constraint box,
// the search is restricted to placements whose window overlaps it at IoU >=
// min_iou; when no placement qualifies the best-IoU placement is returned
// and *used_fallback set. Returns nullopt when the and-node fits nowhere.
std::optional<ScoredWindow> best_window(
    const AndOrGraph& g, int r, const HogPyramid& pyramid,
    const ResponseMaps& maps, int search_radius = kDefaultSearchRadius,
    const Rect* constraint_box = nullptr, double min_iou = 0.7,
    bool* used_fallback = nullptr);

// ------------------------- multiclass assembly -------------------------

// Candidate window for greedy forward inference: scores for one or more
// and-nodes at a fixed window.
struct GreedyCandidate {
  Rect rect;
  std::vector<std::pair<int, double>> scores;  // (and-node id, S^g)
};

struct InstanceSet {
  std::vector<std::pair<int, int>> chosen;  // (window index, and-node id)
  double total = 0;
};

// Greedy forward inference: start from individual scores delta(k,y) = S^g,
// repeatedly admit the best remaining (window, label) pair, accumulate the
// total, and add the pairwise and-edge responses (both directions) into all
// remaining deltas; stops when the best remaining delta is <= 0. At most one
// label per window.
InstanceSet greedy_forward(
    const std::vector<GreedyCandidate>& windows,
    const std::map<std::pair<int, int>, Vec6>& and_edges);

struct Detection {
  int category = 0;
  int r = 0;  // and-node id
  Rect rect;
  double score = 0;
  LatentAssignment latent;
};

struct DetectConfig {
  HogConfig hog;
  double threshold = 0;
  double nms_iou = 0.5;
  int search_radius = kDefaultSearchRadius;
};

// pyramid -> shared response maps -> per-and-node sliding windows ->
// per-category NMS across views -> greedy forward assembly.
std::vector<Detection> detect_multiclass(const AndOrGraph& g,
                                         const Image& image,
                                         const DetectConfig& config);
std::vector<Detection> detect_multiclass(const AndOrGraph& g,
                                         const HogPyramid& pyramid,
                                         const DetectConfig& config);

// One detection per line: image_id class_label score x0 y0 x1 y1.
std::string format_detection(const std::string& image_id, const Detection& d);

}  // namespace aog
