#include "aog/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace aog {

namespace {

double median_pairwise_distance(const std::vector<Vec>& points,
                                std::mt19937& rng) {
  // Subsample for the scale estimate when the set is large.
  std::vector<int> idx(points.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() > 400) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(400);
    std::sort(idx.begin(), idx.end());
  }
  std::vector<double> d;
  d.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b)
      d.push_back((points[idx[a]] - points[idx[b]]).norm());
  if (d.empty()) return 0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

int nearest_centroid(const Vec& p, const std::vector<Vec>& centroids) {
  int best = 0;
  double best_d = (p - centroids[0]).squaredNorm();
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double dd = (p - centroids[c]).squaredNorm();
    if (dd < best_d) {
      best_d = dd;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

Clusters isodata(const std::vector<Vec>& points, const IsodataConfig& config) {
  if (points.empty()) throw DimensionMismatch("isodata needs at least 1 point");
  const Eigen::Index dim = points[0].size();
  for (const Vec& p : points)
    if (p.size() != dim)
      throw DimensionMismatch("isodata points of unequal dimension");

  std::mt19937 rng(config.seed);
  const double scale = median_pairwise_distance(points, rng);
  const double split_thresh =
      config.split_stddev > 0 ? config.split_stddev : 0.6 * scale;
  const double merge_thresh =
      config.merge_distance > 0 ? config.merge_distance : 0.4 * scale;

  const int N = static_cast<int>(points.size());
  const int k0 = std::clamp(config.initial_k, 1, N);

  // k-means++ style seeding (deterministic under config.seed).
  std::vector<Vec> centroids;
  centroids.push_back(points[std::uniform_int_distribution<int>(0, N - 1)(rng)]);
  while (static_cast<int>(centroids.size()) < k0) {
    std::vector<double> d2(N);
    double total = 0;
    for (int i = 0; i < N; ++i) {
      double best = (points[i] - centroids[0]).squaredNorm();
      for (std::size_t c = 1; c < centroids.size(); ++c)
        best = std::min(best, (points[i] - centroids[c]).squaredNorm());
      d2[i] = best;
      total += best;
    }
    if (total <= 0) break;  // all remaining points coincide with a centroid
    double pick = std::uniform_real_distribution<double>(0, total)(rng);
    int chosen = N - 1;
    for (int i = 0; i < N; ++i) {
      pick -= d2[i];
      if (pick <= 0) {
        chosen = i;
        break;
      }
    }
    centroids.push_back(points[chosen]);
  }

  std::vector<int> assign(N, 0);
  auto recompute = [&]() {
    // Mean per cluster; drops clusters that lost all members.
    std::vector<Vec> sums(centroids.size(), Vec::Zero(dim));
    std::vector<int> count(centroids.size(), 0);
    for (int i = 0; i < N; ++i) {
      sums[assign[i]] += points[i];
      count[assign[i]]++;
    }
    std::vector<Vec> fresh;
    std::vector<int> remap(centroids.size(), -1);
    for (std::size_t c = 0; c < centroids.size(); ++c)
      if (count[c] > 0) {
        remap[c] = static_cast<int>(fresh.size());
        fresh.push_back(sums[c] / count[c]);
      }
    for (int i = 0; i < N; ++i) assign[i] = remap[assign[i]];
    centroids = std::move(fresh);
  };

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    bool structural = false;
    const std::vector<int> before = assign;

    for (int i = 0; i < N; ++i) assign[i] = nearest_centroid(points[i], centroids);
    recompute();

    // Discard undersized clusters while more than one remains.
    for (;;) {
      std::vector<int> count(centroids.size(), 0);
      for (int i = 0; i < N; ++i) count[assign[i]]++;
      int victim = -1;
      for (std::size_t c = 0; c < centroids.size(); ++c)
        if (count[c] < config.min_cluster_size &&
            (victim == -1 || count[c] < count[victim]))
          victim = static_cast<int>(c);
      if (victim < 0 || centroids.size() <= 1) break;
      centroids.erase(centroids.begin() + victim);
      for (int i = 0; i < N; ++i) {
        if (assign[i] == victim)
          assign[i] = nearest_centroid(points[i], centroids);
        else if (assign[i] > victim)
          assign[i]--;
      }
      recompute();
      structural = true;
    }

    // Split the cluster with the largest per-axis spread, if any qualifies.
    if (split_thresh > 0) {
      std::vector<int> count(centroids.size(), 0);
      for (int i = 0; i < N; ++i) count[assign[i]]++;
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        if (count[c] < 2 * config.min_cluster_size) continue;
        Vec var = Vec::Zero(dim);
        for (int i = 0; i < N; ++i)
          if (assign[i] == static_cast<int>(c))
            var += (points[i] - centroids[c]).cwiseAbs2();
        var /= count[c];
        Eigen::Index axis;
        const double sd = std::sqrt(var.maxCoeff(&axis));
        if (sd > split_thresh) {
          Vec lo = centroids[c], hi = centroids[c];
          lo[axis] -= 0.5 * sd;
          hi[axis] += 0.5 * sd;
          centroids[c] = lo;
          centroids.push_back(hi);
          structural = true;
        }
      }
      if (structural) {
        for (int i = 0; i < N; ++i)
          assign[i] = nearest_centroid(points[i], centroids);
        recompute();
      }
    }

    // Merge the closest centroid pair below the merge threshold.
    if (merge_thresh > 0) {
      bool merged = true;
      while (merged && centroids.size() > 1) {
        merged = false;
        double best_d = merge_thresh;
        int ba = -1, bb = -1;
        for (std::size_t a2 = 0; a2 < centroids.size(); ++a2)
          for (std::size_t b2 = a2 + 1; b2 < centroids.size(); ++b2) {
            const double dd = (centroids[a2] - centroids[b2]).norm();
            if (dd < best_d) {
              best_d = dd;
              ba = static_cast<int>(a2);
              bb = static_cast<int>(b2);
            }
          }
        if (ba >= 0) {
          for (int i = 0; i < N; ++i)
            if (assign[i] == bb)
              assign[i] = ba;
            else if (assign[i] > bb)
              assign[i]--;
          centroids.erase(centroids.begin() + bb);
          recompute();
          structural = true;
          merged = true;
        }
      }
    }

    if (!structural && assign == before) break;
  }

  return {assign, centroids};
}

std::vector<SizeBucket> bucket_by_size(const std::vector<Patch>& patches,
                                       int cell_dims, double max_ratio) {
  std::vector<int> order(patches.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (!(patches[a].shape == patches[b].shape))
      return patches[a].shape < patches[b].shape;
    return a < b;
  });

  std::vector<SizeBucket> buckets;
  int min_r = 0, max_r = 0, min_c = 0, max_c = 0;
  for (int idx : order) {
    const PartShape s = patches[idx].shape;
    const bool fits =
        !buckets.empty() &&
        std::max(max_r, s.rows) <= max_ratio * std::min(min_r, s.rows) &&
        std::max(max_c, s.cols) <= max_ratio * std::min(min_c, s.cols);
    if (!fits) {
      buckets.emplace_back();
      min_r = max_r = s.rows;
      min_c = max_c = s.cols;
    } else {
      min_r = std::min(min_r, s.rows);
      max_r = std::max(max_r, s.rows);
      min_c = std::min(min_c, s.cols);
      max_c = std::max(max_c, s.cols);
    }
    buckets.back().members.push_back(idx);
  }

  for (SizeBucket& b : buckets) {
    std::map<PartShape, int> freq;
    for (int idx : b.members) freq[patches[idx].shape]++;
    int best = 0;
    for (const auto& [shape, count] : freq)
      if (count > best) {
        best = count;
        b.modal_shape = shape;
      }
    b.descriptors.reserve(b.members.size());
    for (int idx : b.members)
      b.descriptors.push_back(resample_cell_grid(patches[idx].descriptor,
                                                 patches[idx].shape,
                                                 b.modal_shape, cell_dims));
  }
  return buckets;
}

SimilarityMatrix build_similarity(const std::vector<Patch>& patches,
                                  int n_classes, int cell_dims,
                                  const IsodataConfig& config) {
  SimilarityMatrix sim;
  sim.counts = Eigen::MatrixXi::Zero(n_classes, n_classes);
  sim.sigma = n_classes / 3.0;

  // Sharing is only legal between identical part slots, so similarity
  // evidence is collected slot by slot; pooling slots would count accidental
  // appearance collisions between unrelated parts.
  for (int slot = 0; slot < 9; ++slot) {
    std::vector<Patch> slot_patches;
    for (const Patch& p : patches)
      if (p.part_slot == slot) slot_patches.push_back(p);
    for (const SizeBucket& bucket : bucket_by_size(slot_patches, cell_dims)) {
      // Seed one centroid per min-size worth of points so distinct appearance
      // modes separate even when the split heuristic stays quiet; undersized
      // clusters dissolve back into their neighbors.
      IsodataConfig local = config;
      local.initial_k = std::max(
          config.initial_k, static_cast<int>(bucket.members.size()) /
                                std::max(1, config.min_cluster_size));
      const Clusters clusters = isodata(bucket.descriptors, local);
      const int k = static_cast<int>(clusters.centroids.size());
      std::vector<std::map<int, int>> classes_in(k);
      for (std::size_t p = 0; p < bucket.members.size(); ++p)
        classes_in[clusters.assignment[p]]
                  [slot_patches[bucket.members[p]].class_label]++;
      // A lone stray patch is noise, not sharing evidence: both classes must
      // contribute at least two patches to the cluster.
      for (const std::map<int, int>& cs : classes_in)
        for (auto a = cs.begin(); a != cs.end(); ++a)
          for (auto b = std::next(a); b != cs.end(); ++b) {
            if (a->second < 2 || b->second < 2) continue;
            sim.counts(a->first - 1, b->first - 1)++;
            sim.counts(b->first - 1, a->first - 1)++;
          }
    }
  }
  return sim;
}

std::vector<std::vector<int>> partition_groups(const SimilarityMatrix& sim) {
  const int M = static_cast<int>(sim.counts.rows());
  std::vector<int> comp(M, -1);
  int n_comp = 0;
  for (int seed = 0; seed < M; ++seed) {
    if (comp[seed] >= 0) continue;
    std::vector<int> stack = {seed};
    comp[seed] = n_comp;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < M; ++v)
        if (comp[v] < 0 && sim.counts(u, v) > sim.sigma) {
          comp[v] = n_comp;
          stack.push_back(v);
        }
    }
    n_comp++;
  }
  std::vector<std::vector<int>> groups(n_comp);
  for (int c = 0; c < M; ++c) groups[comp[c]].push_back(c + 1);
  return groups;
}

}  // namespace aog
