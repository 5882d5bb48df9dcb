#pragma once

#include <string>
#include <utility>
#include <vector>

#include "aog/clustering.hpp"
#include "aog/dso.hpp"
#include "aog/inference.hpp"

namespace aog {

// ------------------------- dataset manifests -------------------------

struct ManifestEntry {
  std::string image_path;
  std::vector<LabeledBox> annotations;  // empty = background image
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string split;  // informational tag: "train" / "test"
};

// Plain text, one line per annotation: `image_path class x_min y_min x_max
// y_max`; a line holding only a path declares a background image.
// Consecutive or repeated paths merge into one entry. Relative paths resolve
// against the manifest's directory; every path must be openable.
// Throws IoError / FormatError.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// ------------------------- metrics -------------------------

// Greedy one-to-one matching in the given (descending-score) order:
// a detection is a true positive when it overlaps an unmatched annotation of
// its own class at IoU >= threshold.
struct MatchResult {
  std::vector<char> tp;  // aligned with the detection order
  int total_tp = 0;
};
MatchResult match_and_count(const std::vector<ScoredBox>& dets_ranked,
                            const std::vector<LabeledBox>& gts,
                            double iou_threshold = 0.5);

// Area under the precision-recall curve from (score, is_tp) pairs; the
// all-points precision envelope by default, the 11-point interpolation on
// request. n_gt must be >= 1.
double average_precision(std::vector<std::pair<double, bool>> scored_flags,
                         int n_gt, bool eleven_point = false);

struct ImageDetections {
  std::string image_path;
  std::vector<ScoredBox> dets;
};

// Fraction of annotated images whose single highest-scoring detection hits
// one of the image's annotations (own class, IoU >= threshold).
double top1_accuracy(const DatasetManifest& truth,
                     const std::vector<ImageDetections>& dets,
                     double iou_threshold = 0.5);

struct ClassAp {
  int category = 0;
  int n_gt = 0;
  double ap = 0;
};

struct EvalReport {
  std::vector<ClassAp> per_class;
  double mean_ap = 0;
  double top1 = 0;
  int annotated_images = 0;
};

EvalReport evaluate_detections(const DatasetManifest& truth,
                               const std::vector<ImageDetections>& dets,
                               double iou_threshold = 0.5,
                               bool eleven_point = false);

std::string format_report(const EvalReport& report);   // aligned text
std::string report_csv(const EvalReport& report);

// ------------------------- synthetic corpus -------------------------

// Two classes drawing one part slot's strokes from the same pool.
struct SharingPair {
  int class_a = 0;
  int class_b = 0;
  int slot = 0;
};

struct SynthConfig {
  int classes = 4;
  int views_per_class = 2;
  int archetypes_per_slot = 2;
  std::vector<SharingPair> sharing_pairs;
  int image_size = 128;
  double noise = 4.0;  // additive pixel noise sigma
  unsigned seed = 7;
  int train_per_class = 20;
  int test_per_class = 10;
  int background_train = 24;
};

struct SynthCorpus {
  DatasetManifest train;
  DatasetManifest test;
  std::string train_manifest_path;
  std::string test_manifest_path;
};

// Objects are 3x3 grids of oriented-stroke parts: each (class, slot) owns a
// narrow orientation band, sharing pairs collapse the two classes' bands at
// one slot, view 1 is taller than view 0. Backgrounds are noise plus
// distractor strokes. Deterministic for a fixed seed. Throws IoError when
// out_dir is not writable.
SynthCorpus generate_synthetic_corpus(const SynthConfig& config,
                                      const std::string& out_dir);

// ------------------------- pipeline glue -------------------------

// Part patches harvested by per-class seed detectors: each class trains a
// quick fixed-structure model (one leaf per slot, `views` aspect groups, two
// refinement passes), then its nine part detectors cut one patch per slot
// from every positive. Feeds class-similarity grouping.
std::vector<Patch> harvest_seed_patches(const DatasetManifest& manifest,
                                        int n_classes, int views = 1,
                                        const HogConfig& hog = {});

// Training samples for one class group: entries with an annotation of a
// group class become positives (one sample per such annotation); everything
// else, background images included, becomes a negative.
std::vector<DsoSample> load_group_samples(const DatasetManifest& manifest,
                                          const std::vector<int>& group,
                                          const HogConfig& hog = {});

}  // namespace aog
