// Command-line front end: synth -> group -> train -> combine -> detect -> eval.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aog/combine.hpp"
#include "aog/dso.hpp"
#include "aog/evalkit.hpp"
#include "aog/serialize.hpp"

namespace fs = std::filesystem;
using namespace aog;

namespace {

std::vector<SharingPair> parse_sharing(const std::vector<std::string>& specs) {
  std::vector<SharingPair> out;
  for (const std::string& s : specs) {
    std::string token = s;
    for (char& c : token)
      if (c == ',') c = ' ';
    std::istringstream in(token);
    int a, b;
    std::string slot;
    if (!(in >> a >> b >> slot))
      throw FormatError("bad --share spec (want A,B,SLOT or A,B,all): " + s);
    if (slot == "all") {
      for (int t = 0; t < 9; ++t) out.push_back({a, b, t});
    } else {
      out.push_back({a, b, std::stoi(slot)});
    }
  }
  return out;
}

std::vector<std::vector<int>> read_groups(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open groups file: " + path);
  std::vector<std::vector<int>> groups;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<int> g;
    int c;
    while (ls >> c) g.push_back(c);
    if (!g.empty()) groups.push_back(g);
  }
  if (groups.empty()) throw FormatError("groups file is empty: " + path);
  return groups;
}

int max_category(const DatasetManifest& m) {
  int n = 0;
  for (const ManifestEntry& e : m.entries)
    for (const LabeledBox& a : e.annotations) n = std::max(n, a.category);
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reconfigurable and-or graph multiclass detector"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat `key = value` config file");

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  SynthConfig sc;
  std::string synth_out;
  std::vector<std::string> share_specs;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", sc.classes, "number of classes");
  synth->add_option("--views", sc.views_per_class, "views per class");
  synth->add_option("--archetypes", sc.archetypes_per_slot,
                    "part archetypes per slot");
  synth->add_option("--share", share_specs,
                    "sharing pair A,B,SLOT (slot index or `all`)");
  synth->add_option("--image-size", sc.image_size, "image side in pixels");
  synth->add_option("--noise", sc.noise, "pixel noise sigma");
  synth->add_option("--seed", sc.seed, "generator seed");
  synth->add_option("--train-per-class", sc.train_per_class,
                    "training images per class");
  synth->add_option("--test-per-class", sc.test_per_class,
                    "test images per class");
  synth->add_option("--backgrounds", sc.background_train,
                    "background training images");

  // ---- group ----
  auto* group = app.add_subcommand("group", "partition classes by shared part appearance");
  std::string group_manifest, group_out;
  IsodataConfig group_iso;
  int group_views = 2;
  group->add_option("--views", group_views, "aspect groups per seed model");
  group->add_option("--manifest", group_manifest, "training manifest")
      ->required();
  group->add_option("--out", group_out, "groups file to write")->required();
  group->add_option("--min-cluster", group_iso.min_cluster_size,
                    "minimum cluster size");
  group->add_option("--cluster-seed", group_iso.seed, "clustering seed");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train one model per class group");
  std::string train_manifest, train_groups, train_out;
  int train_index = -1;
  DsoConfig dso;
  dso.views_per_class = 2;
  train->add_option("--manifest", train_manifest, "training manifest")
      ->required();
  train->add_option("--groups", train_groups, "groups file")->required();
  train->add_option("--out", train_out, "model output directory")->required();
  train->add_option("--group-index", train_index,
                    "train only this group (default: all)");
  train->add_option("--views", dso.views_per_class, "views per class");
  train->add_option("--iterations", dso.max_iterations,
                    "structural optimization iterations");
  train->add_option("--epsilon", dso.epsilon, "relative energy tolerance");
  train->add_option("--C", dso.solver.C, "regularization tradeoff");
  train->add_option("--rounds", dso.solver.max_cutting_planes,
                    "cutting-plane rounds per solve");
  train->add_option("--radius", dso.search_radius, "part search radius");
  train->add_option("--min-cluster", dso.isodata.min_cluster_size,
                    "minimum part cluster size");
  train->add_option("--cluster-seed", dso.isodata.seed, "clustering seed");
  train->add_flag("--no-sharing", [&dso](size_t) { dso.sharing_enabled = false; },
                  "disable leaf sharing across classes");
  train->add_flag("--no-reconfig", [&dso](size_t) { dso.reconfig_enabled = false; },
                  "disable structural reconfiguration");

  // ---- combine ----
  auto* combine = app.add_subcommand("combine", "merge group models and learn reweighting + edges");
  std::vector<std::string> combine_models;
  std::string combine_manifest, combine_out;
  CombineConfig cc;
  combine->add_option("--model", combine_models, "group model file (repeat)")
      ->required();
  combine->add_option("--manifest", combine_manifest, "training manifest")
      ->required();
  combine->add_option("--out", combine_out, "combined model file")->required();
  combine->add_option("--C", cc.solver.C, "regularization tradeoff");
  combine->add_option("--rounds", cc.solver.max_cutting_planes,
                      "cutting-plane rounds");
  combine->add_option("--candidates", cc.candidates_per_node,
                      "detections kept per and-node per image");

  // ---- detect ----
  auto* detect = app.add_subcommand("detect", "run multiclass detection");
  std::string detect_model, detect_manifest, detect_out;
  DetectConfig dc;
  detect->add_option("--model", detect_model, "model file")->required();
  detect->add_option("--manifest", detect_manifest, "image manifest")
      ->required();
  detect->add_option("--out", detect_out, "detections file to write")
      ->required();
  detect->add_option("--threshold", dc.threshold, "score threshold");
  detect->add_option("--nms", dc.nms_iou, "suppression overlap");
  detect->add_option("--radius", dc.search_radius, "part search radius");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "score detections against a manifest");
  std::string eval_manifest, eval_dets, eval_csv;
  double eval_iou = 0.5;
  bool eleven = false;
  eval->add_option("--manifest", eval_manifest, "groundtruth manifest")
      ->required();
  eval->add_option("--detections", eval_dets, "detections file")->required();
  eval->add_option("--iou", eval_iou, "matching threshold");
  eval->add_flag("--eleven-point", eleven, "11-point AP instead of all-points");
  eval->add_option("--csv", eval_csv, "also write metrics as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      sc.sharing_pairs = parse_sharing(share_specs);
      SynthCorpus corpus = generate_synthetic_corpus(sc, synth_out);
      std::cout << "train manifest: " << corpus.train_manifest_path << '\n'
                << "test manifest:  " << corpus.test_manifest_path << '\n';
    } else if (*group) {
      DatasetManifest m = load_manifest(group_manifest);
      const int n_classes = max_category(m);
      if (n_classes == 0) throw FormatError("manifest has no annotations");
      std::vector<Patch> patches =
          harvest_seed_patches(m, n_classes, group_views);
      SimilarityMatrix sim =
          build_similarity(patches, n_classes, 36, group_iso);
      std::cout << "similarity counts (sigma = " << sim.sigma << "):\n"
                << sim.counts << '\n';
      std::ofstream out(group_out);
      if (!out) throw IoError("cannot write groups file: " + group_out);
      for (const auto& g : partition_groups(sim)) {
        for (size_t i = 0; i < g.size(); ++i)
          out << g[i] << (i + 1 < g.size() ? ' ' : '\n');
        for (size_t i = 0; i < g.size(); ++i)
          std::cout << g[i] << (i + 1 < g.size() ? ' ' : '\n');
      }
    } else if (*train) {
      DatasetManifest m = load_manifest(train_manifest);
      auto groups = read_groups(train_groups);
      fs::create_directories(train_out);
      for (int gi = 0; gi < static_cast<int>(groups.size()); ++gi) {
        if (train_index >= 0 && gi != train_index) continue;
        std::cout << "group " << gi << ":";
        for (int c : groups[gi]) std::cout << ' ' << c;
        std::cout << '\n';
        auto samples = load_group_samples(m, groups[gi]);
        AndOrGraph model = train_group(samples, dso, &std::cout);
        const std::string path =
            (fs::path(train_out) / ("group_" + std::to_string(gi) + ".aogm"))
                .string();
        save_model(model, path);
        std::cout << "wrote " << path << " (" << model.m() << " and-nodes, "
                  << model.n() << " leaves)\n";
      }
    } else if (*combine) {
      std::vector<AndOrGraph> models;
      for (const std::string& p : combine_models) {
        if (!std::ifstream(p)) throw IoError("model not found: " + p);
        models.push_back(load_model(p));
      }
      AndOrGraph merged = merge_models(models);
      DatasetManifest m = load_manifest(combine_manifest);
      std::vector<CombinedImage> images;
      for (const ManifestEntry& e : m.entries)
        images.push_back(
            {build_hog_pyramid(load_image(e.image_path)), e.annotations});
      CombinationResult res = train_combination(merged, images, cc, &std::cout);
      AndOrGraph final_model = apply_reweighting(merged, res.params);
      save_model(final_model, combine_out);
      std::cout << "wrote " << combine_out
                << (res.converged ? "" : " (best iterate, not converged)")
                << '\n';
    } else if (*detect) {
      if (!std::ifstream(detect_model))
        throw IoError("model not found: " + detect_model);
      AndOrGraph g = load_model(detect_model);
      DatasetManifest m = load_manifest(detect_manifest);
      std::ofstream out(detect_out);
      if (!out) throw IoError("cannot write detections: " + detect_out);
      size_t total = 0;
      for (const ManifestEntry& e : m.entries) {
        auto dets = detect_multiclass(g, load_image(e.image_path), dc);
        for (const Detection& d : dets)
          out << format_detection(e.image_path, d) << '\n';
        total += dets.size();
      }
      std::cout << total << " detections across " << m.entries.size()
                << " images -> " << detect_out << '\n';
    } else if (*eval) {
      DatasetManifest m = load_manifest(eval_manifest);
      std::ifstream in(eval_dets);
      if (!in) throw IoError("cannot open detections: " + eval_dets);
      std::vector<ImageDetections> dets;
      std::map<std::string, size_t> index;
      std::string line;
      while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string path;
        int category;
        double score, x0, y0, x1, y1;
        if (!(ls >> path >> category >> score >> x0 >> y0 >> x1 >> y1))
          continue;
        auto [it, fresh] = index.try_emplace(path, dets.size());
        if (fresh) dets.push_back({path, {}});
        dets[it->second].dets.push_back({category, Rect{x0, y0, x1, y1}, score});
      }
      EvalReport report = evaluate_detections(m, dets, eval_iou, eleven);
      std::cout << format_report(report);
      if (!eval_csv.empty()) {
        std::ofstream csv(eval_csv);
        if (!csv) throw IoError("cannot write CSV: " + eval_csv);
        csv << report_csv(report);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
