#pragma once

#include <functional>
#include <map>
#include <ostream>

#include "aog/clustering.hpp"
#include "aog/ssvm.hpp"

namespace aog {

struct DsoConfig {
  SolverConfig solver;
  IsodataConfig isodata;
  int max_iterations = 30;
  double epsilon = 1e-3;  // relative energy change at convergence
  bool sharing_enabled = true;
  bool reconfig_enabled = true;
  int views_per_class = 1;
  int search_radius = kDefaultSearchRadius;
  double latent_min_iou = kLatentMinIou;
};

// One training image bound to its pyramid (label -1 = background).
struct DsoSample {
  SampleData data;
  int sample_id = 0;
};

// Training-loop state: the authoritative model, its parameter vector (always
// equal to flatten_parameters(graph)), current latents and energy.
struct DsoState {
  AndOrGraph graph;
  Vec w;
  std::vector<LatentAssignment> latent;  // aligned with positive samples
  double energy = std::numeric_limits<double>::infinity();
  int iteration = 0;
};

// Injectable clustering backend (tests substitute fixed partitions).
using ClusterFn =
    std::function<Clusters(const std::vector<Vec>&, const IsodataConfig&)>;

// One and-node per class-view with 9 or-nodes and one leaf each, root shapes
// from the per-view median annotation extents, parameters from one convex
// solve with latents pinned to the annotation-centered placements.
AndOrGraph initialize_group_model(const std::vector<DsoSample>& samples,
                                  const DsoConfig& config);

// Latent estimation (the concave-half linearization): per positive the
// highest-scoring annotation-constrained assignment, the frozen features,
// and the hyperplane q = -C * sum phi.
struct LatentEstimate {
  std::vector<int> positives;  // indices into the sample list
  std::vector<LatentAssignment> latent;
  std::vector<SparseVec> phi;
  Vec q;
};
LatentEstimate estimate_latent(const DsoState& state,
                               const std::vector<DsoSample>& samples,
                               const DsoConfig& config);

// What a structural reconfiguration did.
struct ReconfigPlan {
  struct NewLeaf {
    int leaf_id = 0;
    int part_slot = 0;
    PartShape shape;
  };
  std::vector<NewLeaf> created;
  std::vector<int> removed;                     // old leaf ids
  std::vector<std::pair<int, int>> shared;      // new (leaf id, or id) links
  std::map<int, int> handle;                    // old leaf id -> new leaf id
};

struct ReconfigResult {
  AndOrGraph graph;  // reconfigured structure, weights warm-started
  ReconfigPlan plan;
  std::vector<SparseVec> phi_d;  // remapped frozen features, per positive
  Vec q_d;
  bool changed = false;
};

// Per part slot: pool the harvested patches (across the group's and-nodes
// when sharing is enabled, per and-node otherwise), bucket by size, cluster,
// then create / remove / share leaves per cluster and rebuild the frozen
// features with each patch's descriptor relocated to its new leaf's block.
ReconfigResult reconfigure(const DsoState& state, const LatentEstimate& est,
                           const std::vector<DsoSample>& samples,
                           const DsoConfig& config,
                           const ClusterFn& clusterer = nullptr);

// Convex parameter step on a fixed structure: w = argmin f(w) + w.q, then
// the fresh energy E = f(w) - g(w) of the updated model.
struct StepResult {
  Vec w;
  double energy = 0;
  double objective = 0;
  bool converged = false;
};
StepResult step_parameters(const AndOrGraph& structure, const Vec& q,
                           const std::vector<DsoSample>& samples,
                           const DsoConfig& config,
                           std::ostream* log = nullptr);

// E(w) = f(w) - g(w): regularized loss-augmented max minus the constrained
// true-class max, both by fresh latent maximization at the graph's current
// parameters.
double model_energy(const AndOrGraph& g, const std::vector<DsoSample>& samples,
                    const DsoConfig& config);

// Full training loop with energy-based structure acceptance. Log lines, one
// per iteration: `t E accepted? n_leaves n_shared created removed shared`.
AndOrGraph train_group(const std::vector<DsoSample>& samples,
                       const DsoConfig& config, std::ostream* log = nullptr,
                       const ClusterFn& clusterer = nullptr);

}  // namespace aog
