#pragma once

#include <vector>

#include "aog/hog.hpp"
#include "aog/types.hpp"

namespace aog {

// One harvested part window: who produced it and what it looks like.
struct Patch {
  int sample_id = 0;
  int class_label = 0;
  int part_slot = 0;
  Vec descriptor;  // HOG of the patch, length shape.rows*shape.cols*cell_dims
  PartShape shape;
  int source_leaf = 0;  // leaf that localized the patch (0 when unknown)
};

struct IsodataConfig {
  int initial_k = 2;
  int min_cluster_size = 5;
  double split_stddev = -1;    // <= 0: auto, 0.6x median pairwise distance
  double merge_distance = -1;  // <= 0: auto, 0.4x median pairwise distance
  int max_iterations = 50;
  unsigned seed = 1;
};

struct Clusters {
  std::vector<int> assignment;  // point index -> cluster id (0-based, compact)
  std::vector<Vec> centroids;
};

// K-means core with the classic ISODATA moves: discard undersized clusters
// (members reassigned), split clusters whose largest per-axis stddev exceeds
// split_stddev, merge centroid pairs closer than merge_distance.
// Deterministic for a fixed config.seed.
Clusters isodata(const std::vector<Vec>& points, const IsodataConfig& config);

// Patches grouped so that within a bucket the max/min extent ratio per axis
// stays within max_ratio; descriptors come back resampled to the bucket's
// modal shape.
struct SizeBucket {
  std::vector<int> members;  // indices into the input patch list
  PartShape modal_shape;
  std::vector<Vec> descriptors;  // aligned with members
};

std::vector<SizeBucket> bucket_by_size(const std::vector<Patch>& patches,
                                       int cell_dims, double max_ratio = 1.25);

// Cross-class part-appearance similarity: counts(j,k) = number of mixed
// clusters containing patches of both class j+1 and class k+1.
struct SimilarityMatrix {
  Eigen::MatrixXi counts;
  double sigma = 0;  // grouping threshold, M/3
};

SimilarityMatrix build_similarity(const std::vector<Patch>& patches,
                                  int n_classes, int cell_dims,
                                  const IsodataConfig& config);

// Connected components of the graph with an edge where counts > sigma;
// groups and their members ordered by smallest class label.
std::vector<std::vector<int>> partition_groups(const SimilarityMatrix& sim);

}  // namespace aog
