#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lrr/evaluation.hpp"
#include "lrr/train.hpp"
#include "lrr_verify/suites.hpp"

namespace fs = std::filesystem;

namespace lrr::cli {

namespace {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !(v > 0)) throw std::invalid_argument("bad");
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw ValidationError("invalid scale '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("no scales given");
  return out;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// ---- gen-data ------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::size_t count = 200;
  std::size_t size = 128;
  std::size_t classes = 5;
  std::uint64_t seed = 1;
  std::uint64_t first_index = 0;
  double background_only = 0.0;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  ShapesOptions o;
  o.n = a.count;
  o.size = a.size;
  o.num_classes = a.classes;
  o.seed = a.seed;
  o.first_index = a.first_index;
  o.background_only_prob = a.background_only;
  if (a.classes < 2 || a.classes > kShapeKinds + 1)
    throw ValidationError("classes must be in [2, " + std::to_string(kShapeKinds + 1) + "]");
  if (a.size < 32) throw ValidationError("size must be >= 32");
  const auto samples = generate_shapes(o);
  out << write_dataset(a.out, samples) << "\n";
  return kExitOk;
}

// ---- extract-bases ---------------------------------------------------------------

struct BasesArgs {
  std::string manifest, out;
  std::size_t classes = 5, K = 10, patches = 10000, patch = 32;
  double min_coverage = 0.02;
  std::uint64_t seed = 1;
};

int extract_bases_cmd(const BasesArgs& a, std::ostream& out) {
  const auto samples = load_dataset(a.manifest);
  for (const auto& s : samples) validate_labels(s.truth, a.classes);
  const auto bases = extract_bases(samples, a.classes, a.K, a.patches, a.patch, a.min_coverage, a.seed);
  save_checkpoint(a.out, bases_to_checkpoint(bases));
  for (std::size_t c = 0; c < bases.size(); ++c) {
    out << "class " << c << ": " << bases[c].patches_used << " patches, " << bases[c].components.size()
        << " components";
    if (!bases[c].singular_values.empty()) out << ", sigma_1 " << fmt(bases[c].singular_values[0]);
    if (!bases[c].note.empty()) out << " (" << bases[c].note << ")";
    out << "\n";
  }
  return kExitOk;
}

// ---- train -------------------------------------------------------------------------

int train_cmd(const std::string& config_path, const std::vector<std::string>& overrides, std::ostream& out) {
  const TrainConfig cfg = parse_config_text(apply_overrides(read_text(config_path), overrides));
  const TrainResult r = train(cfg);
  out << "trained " << r.iterations << " iterations";
  if (!r.log.empty()) out << ", final total loss " << fmt(r.log.back().report.total);
  out << "\ncheckpoint " << r.checkpoint << "\n";
  return kExitOk;
}

// ---- predict -----------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, image, manifest, out, dump_dir, scales = "1";
};

struct LoadedModel {
  ModelConfig config;
  ModelParams<float> params;
};

LoadedModel load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  LoadedModel m;
  m.config = model_config_from_checkpoint(ck);
  m.params = params_from_checkpoint<float>(ck, m.config);
  return m;
}

void dump_levels(const LoadedModel& m, const TensorF& image, const std::string& dir, const std::string& id) {
  fs::create_directories(dir);
  const std::size_t h = image.dim(1), w = image.dim(2);
  const std::size_t sh = scaled_extent(h, 1.0), sw = scaled_extent(w, 1.0);
  const TensorF input = (sh == h && sw == w) ? image : bilinear_resize(image, sh, sw);
  const ForwardPass<float> pass = model_forward(m.params, m.config, input, 0, false, false);
  const auto labels = level_labels(pass.levels, h, w);
  for (std::size_t l = 0; l < pass.levels.size(); ++l) {
    const auto& lo = pass.levels[l];
    const std::string stem = dir + "/" + id + "_" + std::to_string(lo.stride) + "x";
    write_mask_pgm(stem + "_labels.pgm", labels[l]);
    save_lrrt(stem + "_fused.lrrt", lo.fused);
    save_lrrt(stem + "_raw.lrrt", lo.raw);
    if (!lo.mask.empty()) {
      const std::size_t mh = lo.mask.dim(1), mw = lo.mask.dim(2);
      LabelMap gate(mh, mw, 0);
      for (std::size_t c = 0; c < lo.mask.dim(0); ++c)
        for (std::size_t p = 0; p < mh * mw; ++p)
          if (lo.mask[c * mh * mw + p] != 0) gate.labels[p] = 1;
      // 1 where any class gate is open; written as a 0/1 label map.
      write_mask_pgm(stem + "_mask.pgm", gate);
    }
  }
}

LabelMap predict_one(const LoadedModel& m, const TensorF& image, const std::vector<double>& scales) {
  const ScoreFn<float> fn = [&](const TensorF& im) { return predict_scores(m.params, m.config, im); };
  return labels_from_scores(multiscale_predict<float>(fn, image, scales));
}

int predict_cmd(const PredictArgs& a, std::ostream& out) {
  if (a.image.empty() == a.manifest.empty()) throw ValidationError("give exactly one of --image or --manifest");
  const auto scales = parse_scales(a.scales);
  const LoadedModel m = load_model(a.checkpoint);
  if (!a.image.empty()) {
    const TensorF image = read_image_ppm(a.image);
    write_mask_pgm(a.out, predict_one(m, image, scales));
    if (!a.dump_dir.empty()) dump_levels(m, image, a.dump_dir, fs::path(a.image).stem().string());
    out << a.out << "\n";
    return kExitOk;
  }
  fs::create_directories(a.out);
  const auto entries = read_manifest(a.manifest);
  for (const auto& e : entries) {
    const TensorF image = read_image_ppm(e.image_path);
    write_mask_pgm(a.out + "/" + e.id + ".pgm", predict_one(m, image, scales));
    if (!a.dump_dir.empty()) dump_levels(m, image, a.dump_dir, e.id);
  }
  out << entries.size() << " predictions in " << a.out << "\n";
  return kExitOk;
}

// ---- eval / trimap -------------------------------------------------------------------

struct EvalArgs {
  std::string pred_dir, truth_manifest, out, radii = "1,2,3,5,8,12,16,24,32";
  std::size_t classes = 5;
};

void load_pairs(const EvalArgs& a, std::vector<LabelMap>& preds, std::vector<LabelMap>& truths) {
  for (const auto& s : load_dataset(a.truth_manifest)) {
    LabelMap p = read_mask_pgm(a.pred_dir + "/" + s.id + ".pgm");
    if (p.height != s.truth.height || p.width != s.truth.width)
      throw ValidationError("prediction for " + s.id + " has different extents than its truth");
    validate_labels(p, a.classes);
    validate_labels(s.truth, a.classes);
    preds.push_back(std::move(p));
    truths.push_back(s.truth);
  }
  if (preds.empty()) throw ValidationError("truth manifest lists no samples");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path + " for writing");
  return os;
}

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  std::vector<LabelMap> preds, truths;
  load_pairs(a, preds, truths);
  ConfusionMatrix cm(a.classes);
  for (std::size_t i = 0; i < preds.size(); ++i) accumulate(cm, preds[i], truths[i]);
  const Metrics m = metrics(cm);
  std::ostringstream csv;
  csv << "metric,value\n"
      << "pixel_acc," << fmt(m.pixel_acc) << "\n"
      << "mean_class_acc," << fmt(m.mean_class_acc) << "\n"
      << "mean_iou," << fmt(m.mean_iou) << "\n";
  for (std::size_t c = 0; c < a.classes; ++c) csv << "iou_class_" << c << "," << fmt(m.class_iou[c]) << "\n";
  for (std::size_t c = 0; c < a.classes; ++c) csv << "acc_class_" << c << "," << fmt(m.class_acc[c]) << "\n";
  if (a.out.empty()) out << csv.str();
  else open_out(a.out) << csv.str();
  if (!a.out.empty()) out << "mean IoU " << fmt(m.mean_iou) << "\n";
  return kExitOk;
}

int trimap_cmd(const EvalArgs& a, std::ostream& out) {
  std::vector<int> radii;
  std::stringstream ss(a.radii);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const int r = std::stoi(item, &used);
      if (used != item.size() || r < 1) throw std::invalid_argument("bad");
      radii.push_back(r);
    } catch (const std::logic_error&) {
      throw ValidationError("invalid radius '" + item + "'");
    }
  }
  std::vector<LabelMap> preds, truths;
  load_pairs(a, preds, truths);
  const auto curve = trimap_curve(preds, truths, radii, a.classes);
  std::ostringstream csv;
  csv << "radius,mean_iou,pixel_acc,pixels\n";
  for (const auto& p : curve) csv << p.radius << "," << fmt(p.mean_iou) << "," << fmt(p.pixel_acc) << "," << p.pixels << "\n";
  if (a.out.empty()) out << csv.str();
  else open_out(a.out) << csv.str();
  return kExitOk;
}

int suite_cmd(const std::vector<verify::CheckResult>& results, std::ostream& out) {
  for (const auto& r : results) out << verify::format_result(r) << "\n";
  const bool ok = verify::all_passed(results);
  out << (ok ? "all checks passed" : "FAILURES present") << "\n";
  return ok ? kExitOk : kExitValidation;
}

}  // namespace

std::string apply_overrides(const std::string& text, const std::vector<std::string>& overrides) {
  std::vector<std::string> keys;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ValidationError("override '" + o + "' is not key=value");
    std::string k = o.substr(0, eq);
    k.erase(0, k.find_first_not_of(" \t"));
    k.erase(k.find_last_not_of(" \t") + 1);
    keys.push_back(k);
  }
  std::ostringstream os;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    std::string body = line.substr(0, line.find('#'));
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      std::string k = body.substr(0, eq);
      k.erase(0, k.find_first_not_of(" \t"));
      k.erase(k.find_last_not_of(" \t") + 1);
      if (std::find(keys.begin(), keys.end(), k) != keys.end()) continue;
    }
    os << line << "\n";
  }
  for (const auto& o : overrides) os << o << "\n";
  return os.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-resolution semantic segmentation with basis reconstruction and boundary-masked refinement"};
  app.name("lrr");
  app.require_subcommand(1, 1);

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic shapes dataset to a directory");
  c_gen->add_option("--out", gd.out, "Output directory")->required();
  c_gen->add_option("--count", gd.count, "Number of samples");
  c_gen->add_option("--size", gd.size, "Image side length");
  c_gen->add_option("--classes", gd.classes, "Number of classes including background");
  c_gen->add_option("--seed", gd.seed, "Dataset seed");
  c_gen->add_option("--first-index", gd.first_index, "Stream index of the first sample");
  c_gen->add_option("--background-only", gd.background_only, "Probability of a shape-free sample")
      ->check(CLI::Range(0.0, 1.0));

  BasesArgs ba;
  auto* c_bases = app.add_subcommand("extract-bases", "Fit per-class PCA bases from training masks");
  c_bases->add_option("--manifest", ba.manifest, "Training manifest")->required();
  c_bases->add_option("--out", ba.out, "Output basis container")->required();
  c_bases->add_option("--classes", ba.classes, "Number of classes");
  c_bases->add_option("-K,--basis-count", ba.K, "Components per class");
  c_bases->add_option("--patches", ba.patches, "Patches per class");
  c_bases->add_option("--patch", ba.patch, "Patch side length");
  c_bases->add_option("--min-coverage", ba.min_coverage, "Minimum class fraction of a kept patch");
  c_bases->add_option("--seed", ba.seed, "Sampling seed");

  std::string config_path;
  std::vector<std::string> overrides;
  auto* c_train = app.add_subcommand("train", "Train from a key = value config file");
  c_train->add_option("config", config_path, "Config file")->required();
  c_train->add_option("-s,--set", overrides, "Override a config entry (key=value)");

  PredictArgs pa;
  auto* c_pred = app.add_subcommand("predict", "Predict label masks from a checkpoint");
  c_pred->add_option("--checkpoint", pa.checkpoint, "Model checkpoint")->required();
  c_pred->add_option("--image", pa.image, "Input PPM image");
  c_pred->add_option("--manifest", pa.manifest, "Predict every image of a manifest");
  c_pred->add_option("--out", pa.out, "Output PGM (single image) or directory (manifest)")->required();
  c_pred->add_option("--dump-levels", pa.dump_dir, "Write per-level labels, scores and masks here");
  c_pred->add_option("--scales", pa.scales, "Comma-separated inference scales (max fusion)");

  EvalArgs ea;
  auto* c_eval = app.add_subcommand("eval", "Metrics CSV of predictions against truth");
  c_eval->add_option("--pred-dir", ea.pred_dir, "Directory of <id>.pgm predictions")->required();
  c_eval->add_option("--truth", ea.truth_manifest, "Truth manifest")->required();
  c_eval->add_option("--classes", ea.classes, "Number of classes");
  c_eval->add_option("--out", ea.out, "CSV path (stdout when omitted)");

  EvalArgs ta;
  auto* c_tri = app.add_subcommand("trimap", "Band-restricted metrics for a sweep of radii");
  c_tri->add_option("--pred-dir", ta.pred_dir, "Directory of <id>.pgm predictions")->required();
  c_tri->add_option("--truth", ta.truth_manifest, "Truth manifest")->required();
  c_tri->add_option("--classes", ta.classes, "Number of classes");
  c_tri->add_option("--radii", ta.radii, "Comma-separated band radii");
  c_tri->add_option("--out", ta.out, "CSV path (stdout when omitted)");

  verify::GradcheckOptions go;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite (double precision)");
  c_grad->add_option("--seed", go.seed, "Probe seed");
  std::uint64_t oracle_seed = 11;
  auto* c_oracle = app.add_subcommand("oracle-check", "Optimised kernels against straight-loop references");
  c_oracle->add_option("--seed", oracle_seed, "Input seed");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*c_gen) return gen_data(gd, out);
    if (*c_bases) return extract_bases_cmd(ba, out);
    if (*c_train) return train_cmd(config_path, overrides, out);
    if (*c_pred) return predict_cmd(pa, out);
    if (*c_eval) return eval_cmd(ea, out);
    if (*c_tri) return trimap_cmd(ta, out);
    if (*c_grad) return suite_cmd(verify::gradcheck_suite(go), out);
    if (*c_oracle) return suite_cmd(verify::oracle_suite(oracle_seed), out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  err << app.help();
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace lrr::cli
