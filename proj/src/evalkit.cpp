#include "aog/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace aog {

// ------------------------- manifests -------------------------

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();
  DatasetManifest out;
  std::map<std::string, size_t> index;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string image;
    if (!(ls >> image)) continue;  // blank line
    fs::path p(image);
    if (p.is_relative()) p = base / p;
    std::string resolved = p.lexically_normal().string();
    if (!std::ifstream(resolved))
      throw IoError("manifest references missing image: " + resolved);
    auto [it, fresh] = index.try_emplace(resolved, out.entries.size());
    if (fresh) out.entries.push_back({resolved, {}});
    ManifestEntry& entry = out.entries[it->second];
    int category;
    double x0, y0, x1, y1;
    if (ls >> category) {
      if (!(ls >> x0 >> y0 >> x1 >> y1))
        throw FormatError("manifest line " + std::to_string(lineno) +
                          ": expected `image class x_min y_min x_max y_max`");
      Rect box{x0, y0, x1, y1};
      if (box.width() <= 0 || box.height() <= 0)
        throw FormatError("manifest line " + std::to_string(lineno) +
                          ": degenerate box");
      entry.annotations.push_back({category, box});
    }
  }
  return out;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  for (const ManifestEntry& e : manifest.entries) {
    if (e.annotations.empty()) {
      out << e.image_path << '\n';
      continue;
    }
    for (const LabeledBox& a : e.annotations)
      out << e.image_path << ' ' << a.category << ' ' << a.rect.x0 << ' '
          << a.rect.y0 << ' ' << a.rect.x1 << ' ' << a.rect.y1 << '\n';
  }
}

// ------------------------- metrics -------------------------

MatchResult match_and_count(const std::vector<ScoredBox>& dets_ranked,
                            const std::vector<LabeledBox>& gts,
                            double iou_threshold) {
  MatchResult out;
  out.tp.assign(dets_ranked.size(), 0);
  std::vector<char> used(gts.size(), 0);
  for (size_t d = 0; d < dets_ranked.size(); ++d) {
    int best = -1;
    double best_iou = 0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].category != dets_ranked[d].category) continue;
      double v = iou(dets_ranked[d].rect, gts[g].rect);
      if (v >= iou_threshold && v > best_iou) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[best] = 1;
      out.tp[d] = 1;
      ++out.total_tp;
    }
  }
  return out;
}

double average_precision(std::vector<std::pair<double, bool>> scored_flags,
                         int n_gt, bool eleven_point) {
  std::stable_sort(scored_flags.begin(), scored_flags.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (const auto& [score, flag] : scored_flags) {
    flag ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  if (eleven_point) {
    double sum = 0;
    for (int i = 0; i <= 10; ++i) {
      const double r = i / 10.0;
      double best = 0;
      for (size_t k = 0; k < recall.size(); ++k)
        if (recall[k] >= r) best = std::max(best, precision[k]);
      sum += best;
    }
    return sum / 11.0;
  }
  // All-points interpolation: running precision envelope from the right.
  for (int k = static_cast<int>(precision.size()) - 2; k >= 0; --k)
    precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0, prev = 0;
  for (size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev) * precision[k];
    prev = recall[k];
  }
  return ap;
}

double top1_accuracy(const DatasetManifest& truth,
                     const std::vector<ImageDetections>& dets,
                     double iou_threshold) {
  std::map<std::string, const std::vector<ScoredBox>*> by_path;
  for (const ImageDetections& d : dets) by_path[d.image_path] = &d.dets;
  int annotated = 0, correct = 0;
  for (const ManifestEntry& e : truth.entries) {
    if (e.annotations.empty()) continue;
    ++annotated;
    auto it = by_path.find(e.image_path);
    if (it == by_path.end() || it->second->empty()) continue;
    const ScoredBox* best = nullptr;
    for (const ScoredBox& d : *it->second)
      if (!best || d.score > best->score) best = &d;
    for (const LabeledBox& g : e.annotations)
      if (g.category == best->category &&
          iou(best->rect, g.rect) >= iou_threshold) {
        ++correct;
        break;
      }
  }
  return annotated ? static_cast<double>(correct) / annotated : 0.0;
}

EvalReport evaluate_detections(const DatasetManifest& truth,
                               const std::vector<ImageDetections>& dets,
                               double iou_threshold, bool eleven_point) {
  EvalReport report;
  std::map<std::string, const ManifestEntry*> by_path;
  std::map<int, int> gt_count;
  for (const ManifestEntry& e : truth.entries) {
    by_path[e.image_path] = &e;
    if (!e.annotations.empty()) ++report.annotated_images;
    for (const LabeledBox& a : e.annotations) ++gt_count[a.category];
  }
  std::map<int, std::vector<std::pair<double, bool>>> flags;
  for (const ImageDetections& im : dets) {
    auto it = by_path.find(im.image_path);
    static const std::vector<LabeledBox> kNone;
    const std::vector<LabeledBox>& gts =
        it != by_path.end() ? it->second->annotations : kNone;
    std::map<int, std::vector<ScoredBox>> per_class;
    for (const ScoredBox& d : im.dets) per_class[d.category].push_back(d);
    for (auto& [category, boxes] : per_class) {
      std::stable_sort(boxes.begin(), boxes.end(),
                       [](const ScoredBox& a, const ScoredBox& b) {
                         return a.score > b.score;
                       });
      MatchResult match = match_and_count(boxes, gts, iou_threshold);
      for (size_t d = 0; d < boxes.size(); ++d)
        flags[category].push_back({boxes[d].score, match.tp[d] != 0});
    }
  }
  double sum = 0;
  for (const auto& [category, n_gt] : gt_count) {
    ClassAp entry{category, n_gt, 0.0};
    auto it = flags.find(category);
    if (it != flags.end())
      entry.ap = average_precision(it->second, n_gt, eleven_point);
    report.per_class.push_back(entry);
    sum += entry.ap;
  }
  report.mean_ap = gt_count.empty() ? 0.0 : sum / gt_count.size();
  report.top1 = top1_accuracy(truth, dets, iou_threshold);
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << std::setw(6) << "class" << std::setw(8) << "n_gt" << std::setw(8)
      << "AP" << '\n';
  for (const ClassAp& c : report.per_class)
    out << std::setw(6) << c.category << std::setw(8) << c.n_gt << std::setw(8)
        << c.ap << '\n';
  out << "mAP   " << report.mean_ap << '\n';
  out << "top-1 " << report.top1 << "  (" << report.annotated_images
      << " images)" << '\n';
  return out.str();
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "class,n_gt,ap\n";
  for (const ClassAp& c : report.per_class)
    out << c.category << ',' << c.n_gt << ',' << c.ap << '\n';
  out << "mAP,," << report.mean_ap << '\n';
  out << "top1,," << report.top1 << '\n';
  return out.str();
}

// ------------------------- synthetic corpus -------------------------

namespace {

constexpr double kPi = 3.14159265358979323846;

struct SynthRng {
  std::mt19937 gen;
  explicit SynthRng(unsigned seed) : gen(seed) {}
  double uniform(double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(gen);
  }
  int uniform_int(int a, int b) {
    return std::uniform_int_distribution<int>(a, b)(gen);
  }
  double gauss(double sigma) {
    return std::normal_distribution<double>(0.0, sigma)(gen);
  }
};

void draw_bar(Image& im, double cx, double cy, double angle_deg, double len,
              double thickness, double intensity) {
  const double a = angle_deg * kPi / 180.0;
  const double dx = std::cos(a), dy = std::sin(a);
  const double p0x = cx - dx * len / 2, p0y = cy - dy * len / 2;
  const double p1x = cx + dx * len / 2, p1y = cy + dy * len / 2;
  const int x_lo = std::max(0, static_cast<int>(std::floor(
                                   std::min(p0x, p1x) - thickness)));
  const int x_hi = std::min(im.width - 1, static_cast<int>(std::ceil(
                                              std::max(p0x, p1x) + thickness)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(
                                   std::min(p0y, p1y) - thickness)));
  const int y_hi = std::min(im.height - 1, static_cast<int>(std::ceil(
                                               std::max(p0y, p1y) + thickness)));
  const double len2 = std::max(1e-9, len * len);
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double t = std::clamp(
          ((x - p0x) * (p1x - p0x) + (y - p0y) * (p1y - p0y)) / len2, 0.0, 1.0);
      const double qx = p0x + t * (p1x - p0x), qy = p0y + t * (p1y - p0y);
      const double dist = std::hypot(x - qx, y - qy);
      const double v = intensity * std::clamp(thickness / 2 + 1 - dist, 0.0, 1.0);
      unsigned char& px = im.at(x, y, 0);
      px = static_cast<unsigned char>(
          std::max<double>(px, std::min(255.0, v)));
    }
  }
}

// Orientation band for one (class, slot): 4 bands spaced 45 degrees, rotated
// per slot so no two classes collide anywhere; a sharing pair collapses the
// second class's band onto the first at the chosen slot.
double band_angle(const SynthConfig& cfg, int category, int slot) {
  int group = (category - 1 + slot) % 4;
  for (const SharingPair& sp : cfg.sharing_pairs)
    if (sp.slot == slot && sp.class_b == category)
      group = (sp.class_a - 1 + slot) % 4;
  const double base = std::fmod(slot * 13.0, 45.0);
  return std::fmod(base + group * 45.0, 180.0);
}

// Archetype modes vary stroke contrast: visually distinct mixtures per slot
// that block normalization maps to one compact descriptor cloud.
double archetype_intensity(const SynthConfig& cfg, int archetype,
                           SynthRng& rng) {
  const int n = std::max(1, cfg.archetypes_per_slot - 1);
  const double lo = 205.0 - 75.0 * archetype / n;
  return rng.uniform(lo, lo + 40.0);
}

struct ObjectSpec {
  int category = 0;
  int view = 0;
  double w = 48, h = 48;
};

Rect render_object(Image& im, const SynthConfig& cfg, const ObjectSpec& spec,
                   SynthRng& rng) {
  // Placement on the detector's coarsest stride (two cells) so windows can
  // line up exactly; one-stride margin on each side.
  const int gx_max = (im.width - static_cast<int>(spec.w)) / 16 - 1;
  const int gy_max = (im.height - static_cast<int>(spec.h)) / 16 - 1;
  const double x0 = 16.0 * rng.uniform_int(1, std::max(1, gx_max));
  const double y0 = 16.0 * rng.uniform_int(1, std::max(1, gy_max));
  const double tw = spec.w / 3.0, th = spec.h / 3.0;
  for (int slot = 0; slot < 9; ++slot) {
    const int tr = slot / 3, tc = slot % 3;
    const int arch = rng.uniform_int(0, cfg.archetypes_per_slot - 1);
    const double angle = archetype_angle(cfg, spec.category, slot, arch) +
                         rng.uniform(-4.0, 4.0);
    const double cx = x0 + (tc + 0.5) * tw + rng.uniform(-2.0, 2.0);
    const double cy = y0 + (tr + 0.5) * th + rng.uniform(-2.0, 2.0);
    draw_bar(im, cx, cy, angle, 0.62 * std::min(tw, th), 3.2,
             rng.uniform(190.0, 235.0));
  }
  return {x0, y0, x0 + spec.w, y0 + spec.h};
}

void add_distractors(Image& im, int count, const Rect* avoid, SynthRng& rng) {
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double cx = rng.uniform(10.0, im.width - 10.0);
      const double cy = rng.uniform(10.0, im.height - 10.0);
      if (avoid && cx > avoid->x0 - 12 && cx < avoid->x1 + 12 &&
          cy > avoid->y0 - 12 && cy < avoid->y1 + 12)
        continue;
      draw_bar(im, cx, cy, rng.uniform(0.0, 180.0), rng.uniform(10.0, 18.0),
               3.0, rng.uniform(180.0, 235.0));
      break;
    }
  }
}

Image blank_canvas(int size, SynthRng& rng) {
  Image im;
  im.width = im.height = size;
  im.channels = 1;
  const unsigned char base =
      static_cast<unsigned char>(rng.uniform_int(30, 50));
  im.data.assign(static_cast<size_t>(size) * size, base);
  return im;
}

void add_noise(Image& im, double sigma, SynthRng& rng) {
  if (sigma <= 0) return;
  for (unsigned char& px : im.data)
    px = static_cast<unsigned char>(
        std::clamp(px + rng.gauss(sigma), 0.0, 255.0));
}

}  // namespace

SynthCorpus generate_synthetic_corpus(const SynthConfig& config,
                                      const std::string& out_dir) {
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError("cannot create corpus directory: " + out_dir);

  SynthRng rng(config.seed);
  SynthCorpus corpus;
  corpus.train.split = "train";
  corpus.test.split = "test";

  auto make_object_image = [&](int category, int view, const std::string& name,
                               DatasetManifest& manifest) {
    ObjectSpec spec;
    spec.category = category;
    spec.view = view;
    spec.w = 48;
    spec.h = view == 0 ? 48 : 64;
    Image im = blank_canvas(config.image_size, rng);
    Rect box = render_object(im, config, spec, rng);
    add_distractors(im, 2, &box, rng);
    add_noise(im, config.noise, rng);
    save_image(im, (root / "images" / name).string());
    // store manifest-relative paths so the corpus stays relocatable
    manifest.entries.push_back({"images/" + name, {{category, box}}});
  };

  const int views = std::max(1, config.views_per_class);
  for (int i = 0; i < config.train_per_class; ++i)
    for (int c = 1; c <= config.classes; ++c)
      make_object_image(c, i % views,
                        "train_c" + std::to_string(c) + "_" +
                            std::to_string(i) + ".pgm",
                        corpus.train);
  for (int i = 0; i < config.background_train; ++i) {
    Image im = blank_canvas(config.image_size, rng);
    add_distractors(im, 5, nullptr, rng);
    add_noise(im, config.noise, rng);
    const std::string name = "train_bg_" + std::to_string(i) + ".pgm";
    save_image(im, (root / "images" / name).string());
    corpus.train.entries.push_back({"images/" + name, {}});
  }
  for (int i = 0; i < config.test_per_class; ++i)
    for (int c = 1; c <= config.classes; ++c)
      make_object_image(c, i % views,
                        "test_c" + std::to_string(c) + "_" +
                            std::to_string(i) + ".pgm",
                        corpus.test);

  corpus.train_manifest_path = (root / "train.manifest").string();
  corpus.test_manifest_path = (root / "test.manifest").string();
  save_manifest(corpus.train, corpus.train_manifest_path);
  save_manifest(corpus.test, corpus.test_manifest_path);
  // reload so returned entries carry resolved image paths
  const std::string train_split = corpus.train.split;
  const std::string test_split = corpus.test.split;
  corpus.train = load_manifest(corpus.train_manifest_path);
  corpus.test = load_manifest(corpus.test_manifest_path);
  corpus.train.split = train_split;
  corpus.test.split = test_split;
  return corpus;
}

// ------------------------- pipeline glue -------------------------

std::vector<Patch> harvest_seed_patches(const DatasetManifest& manifest,
                                        int n_classes, int views,
                                        const HogConfig& hog) {
  std::vector<Patch> out;
  int sample_id = 0;
  for (int c = 1; c <= n_classes; ++c) {
    std::vector<DsoSample> samples = load_group_samples(manifest, {c}, hog);
    DsoConfig cfg;
    cfg.views_per_class = views;
    cfg.max_iterations = 2;
    cfg.reconfig_enabled = false;
    cfg.sharing_enabled = false;
    cfg.solver.max_cutting_planes = 60;  // rough part detectors suffice
    const AndOrGraph seed = train_group(samples, cfg);
    for (const DsoSample& s : samples) {
      if (s.data.label < 0) continue;
      // Near-exact root (0.95 forces the best-overlap placement) and a tight
      // part radius: patches should sample each slot's appearance, not
      // whatever a half-trained part wanders onto a few cells away.
      const ScoredWindow win = best_true_window(seed, s.data, 0.95, 1);
      for (int slot = 0; slot < 9; ++slot) {
        const LeafNode& leaf = seed.leaf(win.latent.leaf[slot]);
        Patch patch;
        patch.sample_id = sample_id;
        patch.class_label = c;
        patch.part_slot = slot;
        patch.shape = leaf.shape;
        patch.descriptor = extract_part_feature(
            s.data.pyramid, win.latent.part[slot], leaf.shape);
        out.push_back(std::move(patch));
      }
      ++sample_id;
    }
  }
  return out;
}

std::vector<DsoSample> load_group_samples(const DatasetManifest& manifest,
                                          const std::vector<int>& group,
                                          const HogConfig& hog) {
  std::vector<DsoSample> out;
  for (const ManifestEntry& e : manifest.entries) {
    HogPyramid pyramid = build_hog_pyramid(load_image(e.image_path), hog);
    bool positive = false;
    for (const LabeledBox& a : e.annotations) {
      if (std::find(group.begin(), group.end(), a.category) == group.end())
        continue;
      positive = true;
      DsoSample s;
      s.data.pyramid = pyramid;
      s.data.label = a.category;
      s.data.box = a.rect;
      s.sample_id = static_cast<int>(out.size());
      out.push_back(std::move(s));
    }
    if (!positive) {
      DsoSample s;
      s.data.pyramid = std::move(pyramid);
      s.data.label = -1;
      s.sample_id = static_cast<int>(out.size());
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace aog
