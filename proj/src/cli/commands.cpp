#include "shcanet/cli/commands.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "shcanet/cli/checks.hpp"
#include "shcanet/cli/weights.hpp"
#include "shcanet/data/anchors.hpp"
#include "shcanet/data/augment.hpp"
#include "shcanet/data/synthetic.hpp"
#include "shcanet/eval/bench.hpp"
#include "shcanet/rng.hpp"

namespace shcanet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

train::TrainOptions train_options(const RunConfig& cfg) {
  train::TrainOptions o;
  o.optim = cfg.optim;
  o.gains = cfg.gains;
  o.mosaic = cfg.mosaic;
  o.max_steps = cfg.max_steps;
  o.eval_every = cfg.eval_every;
  o.eval_predict = {cfg.eval_conf, cfg.eval_iou, 300};
  o.operating_conf = cfg.operating_conf;
  return o;
}

std::uint64_t model_seed(std::uint64_t run_seed) { return derive_seed(run_seed, {2}); }

namespace {

struct Flags {
  std::string config, weights, out, manifest;
  std::optional<std::uint64_t> seed;
  std::optional<double> conf, iou;
  bool verify = false;
  bool ignore_hash = false;
  // anchors
  int k = 9;
  // eval
  bool identity = false;
  // detect
  std::vector<std::string> images;
  bool no_draw = false;
  // bench
  int trials = 100, warmup = 10;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw OperationalError("cannot write " + path.string());
  f << text;
  if (!f) throw OperationalError("write failed for " + path.string());
}

fs::path out_dir(const Flags& f) {
  const fs::path dir(f.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw OperationalError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

RunConfig config_of(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  return c;
}

data::ClassList classes_of(const RunConfig& c) { return {c.class_names, c.ignore_labels}; }

std::vector<data::Sample> dataset(const std::string& path, const RunConfig& c, const char* what) {
  if (path.empty()) fail_input(std::string("no ") + what + " data: pass --manifest or set data.train in the config");
  return data::load_dataset(path, classes_of(c));
}

train::Model model_of(const RunConfig& c, const Flags& f, std::ostream& err) {
  train::Model m(c.model, model_seed(c.seed));
  if (!f.weights.empty())
    load_weights(f.weights, m, {f.ignore_hash, f.verify});
  else
    err << "note: no --weights given, using a randomly initialized model (seed " << c.seed << ")\n";
  return m;
}

json anchors_json(const data::AnchorSet& a) {
  json levels = json::array();
  for (const auto& level : a) {
    json l = json::array();
    for (const auto& wh : level) l.push_back({wh[0], wh[1]});
    levels.push_back(l);
  }
  return levels;
}

int cmd_anchors(const Flags& f, std::ostream& out) {
  const RunConfig c = config_of(f);
  const auto samples = dataset(f.manifest.empty() ? c.train_data : f.manifest, c, "training");
  std::vector<data::WidthHeight> boxes;
  for (const auto& s : samples) {
    const auto meta = data::letterbox_meta(s.image.width, s.image.height, c.model.input_size);
    for (const auto& a : s.annotations) boxes.push_back({a.box.width() * meta.scale, a.box.height() * meta.scale});
  }
  require(!boxes.empty(), "anchors: the dataset has no boxes");
  require(f.k >= 1, "anchors: --k must be >= 1");
  const auto km = data::kmeans_anchors(boxes, f.k, c.seed);
  char buf[160];
  std::snprintf(buf, sizeof buf, "k-means over %zu boxes at input %d: %d iterations%s\n", boxes.size(), c.model.input_size,
                km.iterations, km.converged ? "" : " (not converged)");
  out << buf;
  for (const auto& wh : km.centroids) {
    std::snprintf(buf, sizeof buf, "  %.2f x %.2f\n", wh[0], wh[1]);
    out << buf;
  }
  const double base = data::mean_best_iou(boxes, c.model.head.anchors);
  if (km.centroids.size() != 9) {
    std::snprintf(buf, sizeof buf, "mean best IoU with the configured anchors: %.4f (no fragment: k != 9)\n", base);
    out << buf;
    return kOk;
  }
  const auto set = data::to_anchor_set(km.centroids);
  std::snprintf(buf, sizeof buf, "mean best IoU: clustered %.4f, configured %.4f\n", data::mean_best_iou(boxes, set), base);
  out << buf;
  const json fragment{{"model", {{"head", {{"anchors", anchors_json(set)}}}}}};
  if (!f.out.empty()) {
    const fs::path p = out_dir(f) / "anchors.json";
    write_file(p, fragment.dump(2) + "\n");
    out << "wrote " << p.string() << "\n";
  } else {
    out << fragment.dump(2) << "\n";
  }
  return kOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
  RunConfig c = config_of(f);
  if (!f.manifest.empty()) c.train_data = f.manifest;
  require(!f.out.empty(), "train: --out DIR is required");
  const auto train_set = dataset(c.train_data, c, "training");
  const auto val = c.val_data.empty() ? train_set : data::load_dataset(c.val_data, classes_of(c));
  const fs::path dir = out_dir(f);
  write_file(dir / "config.json", dump(c));

  train::Model model(c.model, model_seed(c.seed));
  std::ofstream log(dir / "train.log", std::ios::trunc);
  if (!log) throw OperationalError("cannot write " + (dir / "train.log").string());
  auto opt = train_options(c);
  opt.log = &log;
  const auto on_best = [&](const train::EvalRecord&, const train::Model& m) { save_weights(m, dir / "best.weights"); };
  const auto r = train::train(model, train_set, val, c.class_names, opt, c.seed, on_best);
  save_weights(model, dir / "last.weights");

  json evals = json::array();
  for (const auto& e : r.evals) evals.push_back({{"epoch", e.epoch}, {"step", e.step}, {"map", e.map}});
  const json history{{"steps", r.steps.size()},
                     {"evals", evals},
                     {"best_epoch", r.best_epoch},
                     {"best_map", r.best_map},
                     {"row", row_name(ablation_row(c))},
                     {"final_loss", r.steps.empty() ? 0.0 : r.steps.back().parts.total}};
  write_file(dir / "history.json", history.dump(2) + "\n");
  char buf[200];
  std::snprintf(buf, sizeof buf, "trained %zu steps (%s); best mAP@0.5 %.4f at epoch %d\n", r.steps.size(),
                row_name(ablation_row(c)).c_str(), r.best_map, r.best_epoch);
  out << buf << "outputs in " << dir.string() << "\n";
  return kOk;
}

int cmd_eval(const Flags& f, std::ostream& out, std::ostream& err) {
  RunConfig c = config_of(f);
  const std::string path = !f.manifest.empty() ? f.manifest : !c.val_data.empty() ? c.val_data : c.train_data;
  const auto samples = dataset(path, c, "evaluation");
  const double op = f.conf.value_or(c.operating_conf);
  eval::EvalReport rep;
  if (f.identity) {
    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<Annotation>> gts;
    for (const auto& s : samples) {
      gts.push_back(s.annotations);
      preds.emplace_back();
      for (const auto& a : s.annotations) preds.back().push_back({a.class_id, 1.0, a.box});
    }
    rep = eval::evaluate(preds, gts, c.class_names, {0.5, op});
  } else {
    require(!f.weights.empty(), "eval: --weights is required unless --identity is given");
    auto model = model_of(c, f, err);
    rep = train::evaluate_model(model, samples, c.class_names, {c.eval_conf, f.iou.value_or(c.eval_iou), 300}, op);
  }
  out << rep.to_text();
  if (!f.out.empty()) {
    const fs::path dir = out_dir(f);
    write_file(dir / "eval.json", rep.to_json().dump(2) + "\n");
    write_file(dir / "eval.txt", rep.to_text());
  }
  return kOk;
}

int cmd_detect(const Flags& f, std::ostream& out, std::ostream& err) {
  RunConfig c = config_of(f);
  std::vector<std::string> paths = f.images;
  if (!f.manifest.empty())
    for (const auto& e : data::parse_manifest(data::read_text(f.manifest), fs::path(f.manifest).parent_path()))
      paths.push_back(e.image.string());
  require(!paths.empty(), "detect: give PPM files or --manifest");
  auto model = model_of(c, f, err);
  const nn::PredictOptions po{f.conf.value_or(c.detect_conf), f.iou.value_or(c.detect_iou), 300};

  std::vector<data::Sample> samples;
  for (const auto& p : paths) samples.push_back({data::load_ppm(p), {}, p});
  const auto dets = train::detect_samples(model, samples, po);

  std::string jsonl;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (const auto& d : dets[i]) {
      const json rec{{"image", paths[i]},
                     {"class", c.class_names[static_cast<std::size_t>(d.class_id)]},
                     {"score", d.score},
                     {"x1", d.box.x1},
                     {"y1", d.box.y1},
                     {"x2", d.box.x2},
                     {"y2", d.box.y2}};
      jsonl += rec.dump() + "\n";
    }
  if (f.out.empty()) {
    out << jsonl;
    return kOk;
  }
  const fs::path dir = out_dir(f);
  write_file(dir / "detections.jsonl", jsonl);
  if (!f.no_draw) {
    std::map<std::string, int> used;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::string stem = fs::path(paths[i]).stem().string();
      if (used[stem]++ > 0) stem += "_" + std::to_string(i);
      data::Image img = samples[i].image;
      for (const auto& d : dets[i]) data::draw_box(img, d.box, data::class_color(d.class_id));
      data::save_ppm(dir / (stem + ".ppm"), img);
    }
  }
  std::size_t n = 0;
  for (const auto& d : dets) n += d.size();
  out << n << " detections in " << samples.size() << " images; outputs in " << dir.string() << "\n";
  return kOk;
}

int cmd_bench(const Flags& f, std::ostream& out, std::ostream& err) {
  RunConfig c = config_of(f);
  auto model = model_of(c, f, err);
  require(f.trials >= 1 && f.warmup >= 0, "bench: need --trials >= 1 and --warmup >= 0");
  eval::BenchOptions bo;
  bo.trials = f.trials;
  bo.warmup = f.warmup;
  bo.predict = {f.conf.value_or(c.detect_conf), f.iou.value_or(c.detect_iou), 300};
  const auto rep = eval::bench(model, bo);
  json j = rep.to_json();
  j["row"] = row_name(ablation_row(c));
  j["weights_bytes"] = 4 * rep.parameters;
  out << j.dump(2) << "\n";
  if (!f.out.empty()) write_file(out_dir(f) / "bench.json", j.dump(2) + "\n");
  return kOk;
}

int cmd_selfcheck(std::ostream& out) {
  int failed = 0;
  const auto results = checks::selfcheck();
  for (const auto& o : results) {
    out << (o.pass ? "PASS  " : "FAIL  ") << o.name << ": " << o.detail << "\n";
    failed += !o.pass;
  }
  out << (failed ? "selfcheck FAILED: " + std::to_string(failed) + " of " : std::string("selfcheck passed: all "))
      << results.size() << " checks\n";
  return failed ? kOperational : kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lightweight mask detector: anchors, training, evaluation, detection, benchmarking"};
  app.name("shcanet");
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* s, bool needs_config) {
    auto* opt = s->add_option("--config", f.config, "run configuration (JSON)");
    if (needs_config) opt->required();
    s->add_option("--seed", f.seed, "override the config seed");
  };
  auto* anchors = app.add_subcommand("anchors", "cluster training boxes into anchors");
  common(anchors, true);
  anchors->add_option("--manifest", f.manifest, "dataset (defaults to data.train)");
  anchors->add_option("--k", f.k, "number of clusters (a config fragment is written for 9)");
  anchors->add_option("--out", f.out, "directory for anchors.json");

  auto* trn = app.add_subcommand("train", "train and keep the best checkpoint");
  common(trn, true);
  trn->add_option("--manifest", f.manifest, "training data (defaults to data.train)");
  trn->add_option("--out", f.out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "mAP@0.5, per-class AP, P/R and confusion");
  common(ev, true);
  ev->add_option("--weights", f.weights);
  ev->add_option("--manifest", f.manifest, "dataset (defaults to data.val, then data.train)");
  ev->add_option("--out", f.out, "directory for eval.json and eval.txt");
  ev->add_option("--conf", f.conf, "operating threshold for precision/recall");
  ev->add_option("--iou", f.iou, "NMS IoU threshold");
  ev->add_flag("--identity", f.identity, "score the ground truth against itself");
  ev->add_flag("--verify", f.verify, "check weight checksums");
  ev->add_flag("--ignore-hash", f.ignore_hash, "accept weights from another config when shapes fit");

  auto* det = app.add_subcommand("detect", "detections as JSONL plus annotated copies");
  common(det, true);
  det->add_option("images", f.images, "PPM images");
  det->add_option("--weights", f.weights);
  det->add_option("--manifest", f.manifest, "take images from a manifest");
  det->add_option("--out", f.out, "directory for detections.jsonl and annotated images");
  det->add_option("--conf", f.conf, "score threshold");
  det->add_option("--iou", f.iou, "NMS IoU threshold");
  det->add_flag("--no-draw", f.no_draw, "skip annotated images");
  det->add_flag("--verify", f.verify, "check weight checksums");
  det->add_flag("--ignore-hash", f.ignore_hash, "accept weights from another config when shapes fit");

  auto* bn = app.add_subcommand("bench", "single-image latency and parameter count");
  common(bn, false);
  bn->add_option("--weights", f.weights);
  bn->add_option("--out", f.out, "directory for bench.json");
  bn->add_option("--trials", f.trials, "timed runs");
  bn->add_option("--warmup", f.warmup, "untimed runs first");
  bn->add_option("--conf", f.conf, "score threshold");
  bn->add_option("--iou", f.iou, "NMS IoU threshold");
  bn->add_flag("--verify", f.verify, "check weight checksums");
  bn->add_flag("--ignore-hash", f.ignore_hash, "accept weights from another config when shapes fit");

  auto* sc = app.add_subcommand("selfcheck", "gradient checks and reference comparisons");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  }

  try {
    if (anchors->parsed()) return cmd_anchors(f, out);
    if (trn->parsed()) return cmd_train(f, out);
    if (ev->parsed()) return cmd_eval(f, out, err);
    if (det->parsed()) return cmd_detect(f, out, err);
    if (bn->parsed()) return cmd_bench(f, out, err);
    if (sc->parsed()) return cmd_selfcheck(out);
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const OperationalError& e) {
    err << "error: " << e.what() << "\n";
    return kOperational;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOperational;
  }
  return kInvalidInput;
}

}  // namespace shcanet::cli
