// Command-line front end: view rendering, segmentation, training, dataset
// generation, tracking and metric evaluation over the file formats described
// in the README.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "storm/geometry.hpp"
#include "storm/io.hpp"
#include "storm/metrics.hpp"
#include "storm/pipeline.hpp"
#include "storm/prompts.hpp"
#include "storm/tom.hpp"

using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string trace_csv(const storm::optim::TrainResult& result) {
  std::string out = "step,loss,ema\n";
  char buf[96];
  for (const auto& row : result.trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", row.step, row.loss, row.ema);
    out += buf;
  }
  return out;
}

// ---- render-views ----------------------------------------------------------

int run_render_views(int n, const std::string& out_path) {
  const auto dirs = storm::geometry::fibonacci_directions(n);
  json arr = json::array();
  for (int k = 0; k < n; ++k) {
    const auto& d = dirs[static_cast<std::size_t>(k)];
    const auto r = storm::geometry::look_at_rotation(d);
    json item;
    item["index"] = k;
    item["direction"] = {d.x, d.y, d.z};
    item["rotation"] = json::array();
    for (double v : r.m) item["rotation"].push_back(v);
    arr.push_back(item);
  }
  const std::string text = arr.dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
  return 0;
}

// ---- segment ----------------------------------------------------------------

json prompt_set_json(const storm::prompts::PromptSet& ps) {
  json j;
  j["center"] = {ps.center.row, ps.center.col};
  j["quadrants"] = {{"top", {ps.top.row, ps.top.col}},
                    {"bottom", {ps.bottom.row, ps.bottom.col}},
                    {"left", {ps.left.row, ps.left.col}},
                    {"right", {ps.right.row, ps.right.col}}};
  j["bbox"] = {ps.bbox.min_row, ps.bbox.min_col, ps.bbox.max_row, ps.bbox.max_col};
  j["fallbacks"] = ps.fallbacks;
  return j;
}

int run_segment(const std::string& model_path, const std::string& features_path,
                const std::vector<std::string>& ref_paths, long long demo_seed, bool use_demo,
                double threshold, const std::string& prompts_path, const std::string& heatmap_path,
                const std::string& dump_features) {
  const auto model = storm::io::load_hsfa(model_path);

  storm::FeatureMap<float> frame;
  std::vector<storm::FeatureMap<float>> refs;
  if (use_demo) {
    storm::pipeline::SceneConfig sc;
    sc.channels = model.channels;
    sc.world_seed = 1;
    storm::pipeline::SyntheticWorld<float> world(sc);
    storm::Rng rng(static_cast<std::uint64_t>(demo_seed));
    const auto scene = world.make_scene(rng);
    frame = scene.features;
    refs = world.reference_views(scene.target_archetype, model.view_count,
                                 static_cast<std::uint64_t>(demo_seed));
  } else {
    if (features_path.empty()) throw std::runtime_error("segment: provide --features or --demo-scene");
    frame = storm::io::load_feature_map(features_path);
    for (const auto& p : ref_paths) refs.push_back(storm::io::load_feature_map(p));
  }
  if (!dump_features.empty()) storm::io::save_feature_map(dump_features, frame);

  storm::pipeline::RegistrationConfig rc;
  rc.heatmap_threshold = threshold;
  const auto reg = storm::pipeline::run_registration<float>(model, frame, refs, rc);
  if (!heatmap_path.empty()) storm::io::save_pgm16(heatmap_path, reg.heatmap.values);
  if (!reg.ok) {
    std::cerr << "segment: empty ROI at threshold " << threshold << "\n";
    return 1;
  }
  const std::string text = prompt_set_json(reg.prompt_set).dump(2) + "\n";
  if (prompts_path.empty())
    std::cout << text;
  else
    write_text(prompts_path, text);
  return 0;
}

// ---- train-som ---------------------------------------------------------------

int run_train_som(const std::string& config_path, const std::string& out_path, const std::string& trace_path) {
  const json cfg = config_path.empty() ? json::object() : json::parse(read_text(config_path));

  storm::optim::TrainConfig tc;
  tc.optimizer = cfg.value("optimizer", std::string("adam"));
  tc.eta0 = cfg.value("eta0", 1e-3);
  tc.warmup_steps = cfg.value("warmup", 100);
  tc.total_steps = cfg.value("total_steps", 1500);
  tc.batch = cfg.value("batch", 2);
  tc.seed = cfg.value("seed", 0ull);
  tc.loss_preset = cfg.value("loss_preset", std::string("default"));

  storm::pipeline::SomTaskConfig task;
  task.scene.grid_h = cfg.value("grid_h", 14);
  task.scene.grid_w = cfg.value("grid_w", 14);
  task.scene.channels = cfg.value("channels", 32);
  task.scene.object_grid = cfg.value("object_grid", 6);
  task.scene.archetype_count = cfg.value("archetypes", 2);
  task.scene.world_seed = cfg.value("world_seed", 1ull);
  task.reference_views = cfg.value("views", 2);
  task.use_text = cfg.value("use_text", false);
  task.data_seed = cfg.value("data_seed", tc.seed + 7);

  storm::hsfa::HsfaConfig<float> hc;
  hc.n_layers = cfg.value("n_layers", 3);
  hc.view_count = task.reference_views;
  hc.channels = task.scene.channels;
  hc.text_dim = task.scene.text_dim;
  hc.head_count = cfg.value("head_count", 1);
  hc.upsample_scale = cfg.value("upsample_scale", 1);
  auto model = storm::hsfa::HsfaModel<float>::init(hc, tc.seed);

  const double target_iou = cfg.value("target_iou", -1.0);
  const int eval_every = cfg.value("eval_every", 100);
  const int eval_episodes = cfg.value("eval_episodes", 20);

  const auto outcome = storm::pipeline::train_som(model, task, tc, target_iou, eval_every, eval_episodes);
  storm::io::save_hsfa(out_path, model);
  if (!trace_path.empty()) write_text(trace_path, trace_csv(outcome.trace));
  std::cout << "trained " << outcome.trace.steps_run << " steps, held-out IoU " << outcome.final_iou << "\n";
  return outcome.trace.diverged ? 1 : 0;
}

// ---- gen-track-dataset ---------------------------------------------------------

int run_gen_track_dataset(int n, int archetypes, int grid, int channels, long long seed, const std::string& out_path) {
  storm::tom::TrackingDatasetConfig cfg;
  cfg.pair_count = n;
  cfg.archetype_count = archetypes;
  cfg.grid = grid;
  cfg.channels = channels;
  cfg.seed = static_cast<std::uint64_t>(seed);
  storm::tom::TrackingDatasetGenerator<float> gen(cfg);
  storm::io::TrackingDatasetWriter writer(out_path, grid * grid, channels, static_cast<std::uint64_t>(n));
  for (int i = 0; i < n; ++i) writer.append(gen.pair(i));
  writer.close();
  std::cout << "wrote " << n << " pairs to " << out_path << "\n";
  return 0;
}

// ---- train-tom -------------------------------------------------------------------

int run_train_tom(const std::string& dataset_path, int layers, int epochs, int batch, double lr, long long seed,
                  double holdout, const std::string& out_path, const std::string& trace_path) {
  const auto pairs = storm::io::load_tracking_dataset(dataset_path);
  if (pairs.empty()) throw std::runtime_error("train-tom: empty dataset");
  const int channels = pairs.front().candidate.cols;
  auto model = storm::tom::TomModel<float>::init(channels, layers, static_cast<std::uint64_t>(seed));

  const auto split = static_cast<std::size_t>(static_cast<double>(pairs.size()) * (1.0 - holdout));
  std::span<const storm::tom::TrackingPair<float>> train(pairs.data(), split);
  std::span<const storm::tom::TrackingPair<float>> held(pairs.data() + split, pairs.size() - split);

  storm::tom::TomTrainConfig tc;
  tc.epochs = epochs;
  tc.batch = batch;
  tc.learning_rate = lr;
  tc.seed = static_cast<std::uint64_t>(seed);
  const auto result = storm::tom::train_tom(model, train, tc);
  storm::io::save_tom(out_path, model);
  if (!trace_path.empty()) write_text(trace_path, trace_csv(result));

  if (!held.empty()) {
    const double acc = storm::tom::tom_accuracy(model, held);
    std::cout << "held-out accuracy " << acc << " over " << held.size() << " pairs\n";
  }
  return result.diverged ? 1 : 0;
}

// ---- track ------------------------------------------------------------------------

int run_track(const std::string& scenario_path, const std::string& som_path, const std::string& tom_path,
              double threshold, const std::string& out_path) {
  const auto script = storm::pipeline::ScenarioScript::from_json_file(scenario_path);
  const auto som = storm::io::load_hsfa(som_path);
  const auto tom_model = storm::io::load_tom(tom_path);

  storm::pipeline::TrackOptions opts;
  opts.tom_threshold = threshold;
  opts.crop_grid = script.object_grid;

  storm::pipeline::TrackRunResult result;
  if (!script.feature_files.empty()) {
    storm::pipeline::FileBackedProvider<float> provider(script);
    result = storm::pipeline::run_tracking<float>(provider, som, tom_model, script, opts);
  } else {
    storm::pipeline::SyntheticScenarioProvider<float> provider(script, storm::pipeline::SceneConfig{});
    result = storm::pipeline::run_tracking<float>(provider, som, tom_model, script, opts);
  }

  const std::string text = result.to_jsonl();
  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
  std::cerr << "re-registrations: " << result.reregistrations
            << ", failed registrations: " << result.registration_failures << "\n";
  return 0;
}

// ---- eval -------------------------------------------------------------------------

struct PoseRecord {
  std::string object_id;
  storm::metrics::Pose pose;
};

std::vector<PoseRecord> read_pose_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<PoseRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    PoseRecord rec;
    if (j.at("object_id").is_string())
      rec.object_id = j.at("object_id").get<std::string>();
    else
      rec.object_id = std::to_string(j.at("object_id").get<long long>());
    const auto R = j.at("R");
    if (R.size() != 9) throw std::runtime_error("pose record: R must have 9 entries");
    for (int i = 0; i < 9; ++i) rec.pose.rotation.m[static_cast<std::size_t>(i)] = R.at(i).get<double>();
    const auto t = j.at("t");
    if (t.size() != 3) throw std::runtime_error("pose record: t must have 3 entries");
    for (int i = 0; i < 3; ++i) rec.pose.translation[static_cast<std::size_t>(i)] = t.at(i).get<double>();
    out.push_back(std::move(rec));
  }
  return out;
}

std::map<std::string, storm::metrics::ModelPoints> read_model_points(const std::string& path) {
  const json j = json::parse(read_text(path));
  std::map<std::string, storm::metrics::ModelPoints> out;
  for (const auto& [key, val] : j.items()) {
    std::vector<std::array<double, 3>> pts;
    for (const auto& p : val.at("points"))
      pts.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    auto mp = storm::metrics::ModelPoints::from_points(std::move(pts));
    if (val.contains("diameter")) mp.diameter = val.at("diameter").get<double>();
    out.emplace(key, std::move(mp));
  }
  return out;
}

int run_eval(const std::string& est_path, const std::string& gt_path, const std::string& points_path,
             const std::string& out_path, const std::string& detections_path, bool with_ar,
             double recall_fraction) {
  const auto est = read_pose_jsonl(est_path);
  const auto gt = read_pose_jsonl(gt_path);
  if (est.size() != gt.size()) throw std::runtime_error("eval: estimate/ground-truth record counts differ");
  const auto models = read_model_points(points_path);

  struct Agg {
    std::vector<double> adds, add_ss;
    std::vector<std::pair<storm::metrics::Pose, storm::metrics::Pose>> pairs;
  };
  std::map<std::string, Agg> by_object;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (est[i].object_id != gt[i].object_id)
      throw std::runtime_error("eval: object_id mismatch at record " + std::to_string(i));
    const auto it = models.find(est[i].object_id);
    if (it == models.end()) throw std::runtime_error("eval: no model points for object " + est[i].object_id);
    auto& agg = by_object[est[i].object_id];
    agg.adds.push_back(storm::metrics::add(est[i].pose, gt[i].pose, it->second));
    agg.add_ss.push_back(storm::metrics::add_s(est[i].pose, gt[i].pose, it->second));
    agg.pairs.emplace_back(est[i].pose, gt[i].pose);
  }

  json report;
  report["objects"] = json::object();
  std::string table = "object            count  mean_add      mean_add_s    recall\n";
  double sum_add = 0, sum_add_s = 0, sum_recall = 0;
  for (const auto& [id, agg] : by_object) {
    const auto& mp = models.at(id);
    double ma = 0, ms = 0;
    for (double v : agg.adds) ma += v;
    for (double v : agg.add_ss) ms += v;
    ma /= static_cast<double>(agg.adds.size());
    ms /= static_cast<double>(agg.add_ss.size());
    const double recall = storm::metrics::add_recall(agg.adds, recall_fraction, mp.diameter);
    json obj;
    obj["count"] = agg.adds.size();
    obj["mean_add"] = ma;
    obj["mean_add_s"] = ms;
    obj["add_recall"] = recall;
    if (with_ar) {
      std::vector<double> thresholds;
      for (int k = 1; k <= 10; ++k) thresholds.push_back(0.05 * k);
      const auto curve =
          storm::metrics::recall_table(storm::metrics::add_surrogate_error, agg.pairs, mp, thresholds);
      // The bundled surrogate feeds all three AR slots; real VSD/MSSD/MSPD
      // error functions plug into the same aggregation.
      std::map<std::string, std::vector<double>> tables{{"VSD", curve}, {"MSSD", curve}, {"MSPD", curve}};
      obj["ar_surrogate"] = storm::metrics::ar_dataset(tables);
    }
    report["objects"][id] = obj;
    sum_add += ma;
    sum_add_s += ms;
    sum_recall += recall;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-17s %-6zu %-13.6g %-13.6g %-10.6g\n", id.c_str(), agg.adds.size(), ma, ms,
                  recall);
    table += buf;
  }
  const double n = static_cast<double>(by_object.size());
  report["mean"] = {{"add", sum_add / n}, {"add_s", sum_add_s / n}, {"add_recall", sum_recall / n}};
  report["recall_threshold_fraction"] = recall_fraction;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-17s %-6s %-13.6g %-13.6g %-10.6g\n", "mean", "-", sum_add / n, sum_add_s / n,
                sum_recall / n);
  table += buf;

  if (!detections_path.empty()) {
    const json dj = json::parse(read_text(detections_path));
    std::vector<storm::metrics::DetectionRecord> dets;
    for (const auto& d : dj) {
      storm::metrics::DetectionRecord rec;
      rec.dataset = d.value("dataset", std::string("default"));
      rec.image = d.value("image", std::string("0"));
      rec.category = d.at("category").get<std::string>();
      rec.score = d.at("score").get<double>();
      rec.iou_with_gt = d.at("iou").get<double>();
      rec.visibility = d.value("visibility", 1.0);
      dets.push_back(std::move(rec));
    }
    const auto ap = storm::metrics::mean_ap(dets);
    json jmap;
    jmap["map"] = ap.map;
    jmap["per_dataset"] = ap.per_dataset;
    for (const auto& [ds, cats] : ap.per_category) jmap["per_category"][ds] = cats;
    jmap["warnings"] = ap.warnings;
    report["detection_map"] = jmap;
  }

  std::cout << table;
  if (!out_path.empty()) write_text(out_path, report.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pose-estimation and tracking core: reference geometry, ROI segmentation, "
               "tracking-failure detection, metrics"};
  app.require_subcommand(1);

  // render-views
  auto* rv = app.add_subcommand("render-views", "emit uniformly sampled view directions and rotations");
  int rv_n = 16;
  std::string rv_out;
  long long rv_seed = 0;
  rv->add_option("--n", rv_n, "number of views");
  rv->add_option("--out", rv_out, "output JSON path (stdout if omitted)");
  rv->add_option("--seed", rv_seed, "unused; sampling is deterministic in n");

  // segment
  auto* sg = app.add_subcommand("segment", "run ROI segmentation and emit prompts + heatmap");
  std::string sg_model, sg_features, sg_prompts, sg_heatmap, sg_dump;
  std::vector<std::string> sg_refs;
  long long sg_demo_seed = 0;
  bool sg_use_demo = false;
  double sg_threshold = 0.5;
  sg->add_option("--model", sg_model, "HSFA checkpoint")->required();
  sg->add_option("--features", sg_features, "query FMAP file");
  sg->add_option("--refs", sg_refs, "reference FMAP files (repeatable)");
  sg->add_option("--demo-scene", sg_demo_seed, "segment a synthetic demo scene with this seed")
      ->each([&](const std::string&) { sg_use_demo = true; });
  sg->add_option("--threshold", sg_threshold, "binarization threshold");
  sg->add_option("--prompts", sg_prompts, "output prompts JSON (stdout if omitted)");
  sg->add_option("--heatmap", sg_heatmap, "output 16-bit PGM heatmap");
  sg->add_option("--dump-features", sg_dump, "write the query features as FMAP");

  // train-som
  auto* ts = app.add_subcommand("train-som", "train the segmentation stack on the synthetic task");
  std::string ts_config, ts_out = "som.ckpt", ts_trace;
  ts->add_option("--config", ts_config, "training config JSON");
  ts->add_option("--out", ts_out, "output checkpoint path");
  ts->add_option("--trace", ts_trace, "loss trace CSV path");

  // gen-track-dataset
  auto* gd = app.add_subcommand("gen-track-dataset", "generate the synthetic tracking-pair dataset");
  int gd_n = 20000, gd_arch = 4, gd_grid = 6, gd_channels = 32;
  long long gd_seed = 0;
  std::string gd_out = "pairs.tomd";
  gd->add_option("--n", gd_n, "pair count (balanced 50/50)");
  gd->add_option("--archetypes", gd_arch, "archetype count (>= 2)");
  gd->add_option("--grid", gd_grid, "crop grid side in tokens");
  gd->add_option("--channels", gd_channels, "feature channels");
  gd->add_option("--seed", gd_seed, "dataset seed");
  gd->add_option("--out", gd_out, "output TOMD path");

  // train-tom
  auto* tt = app.add_subcommand("train-tom", "train the tracking-failure classifier");
  std::string tt_dataset, tt_out = "tom.ckpt", tt_trace;
  int tt_layers = 1, tt_epochs = 10, tt_batch = 64;
  double tt_lr = 1e-4, tt_holdout = 0.2;
  long long tt_seed = 0;
  tt->add_option("--dataset", tt_dataset, "TOMD dataset path")->required();
  tt->add_option("--layers", tt_layers, "attention layers (0, 1 or 2)");
  tt->add_option("--epochs", tt_epochs, "epochs");
  tt->add_option("--batch", tt_batch, "batch size");
  tt->add_option("--lr", tt_lr, "learning rate");
  tt->add_option("--holdout", tt_holdout, "held-out fraction for the accuracy report");
  tt->add_option("--seed", tt_seed, "training seed");
  tt->add_option("--out", tt_out, "output checkpoint path");
  tt->add_option("--trace", tt_trace, "loss trace CSV path");

  // track
  auto* tr = app.add_subcommand("track", "run the register/track/verify/re-register loop on a scenario");
  std::string tr_scenario, tr_som, tr_tom, tr_out;
  double tr_threshold = 0.5;
  tr->add_option("--scenario", tr_scenario, "scenario script JSON")->required();
  tr->add_option("--som", tr_som, "HSFA checkpoint")->required();
  tr->add_option("--tom", tr_tom, "TOM checkpoint")->required();
  tr->add_option("--threshold", tr_threshold, "verification threshold; 0 disables failure detection");
  tr->add_option("--out", tr_out, "output JSONL log (stdout if omitted)");

  // eval
  auto* ev = app.add_subcommand("eval", "pose metrics from estimate/ground-truth JSONL");
  std::string ev_est, ev_gt, ev_points, ev_out, ev_dets;
  bool ev_ar = false;
  double ev_fraction = 0.1;
  ev->add_option("--est", ev_est, "estimated poses JSONL")->required();
  ev->add_option("--gt", ev_gt, "ground-truth poses JSONL")->required();
  ev->add_option("--model-points", ev_points, "model points JSON")->required();
  ev->add_option("--out", ev_out, "metrics report JSON path");
  ev->add_option("--detections", ev_dets, "detection records JSON for mAP");
  ev->add_flag("--ar", ev_ar, "include surrogate AR aggregation");
  ev->add_option("--recall-fraction", ev_fraction, "diameter fraction for ADD recall");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (rv->parsed()) return run_render_views(rv_n, rv_out);
    if (sg->parsed())
      return run_segment(sg_model, sg_features, sg_refs, sg_demo_seed, sg_use_demo, sg_threshold, sg_prompts,
                         sg_heatmap, sg_dump);
    if (ts->parsed()) return run_train_som(ts_config, ts_out, ts_trace);
    if (gd->parsed()) return run_gen_track_dataset(gd_n, gd_arch, gd_grid, gd_channels, gd_seed, gd_out);
    if (tt->parsed())
      return run_train_tom(tt_dataset, tt_layers, tt_epochs, tt_batch, tt_lr, tt_seed, tt_holdout, tt_out, tt_trace);
    if (tr->parsed()) return run_track(tr_scenario, tr_som, tr_tom, tr_threshold, tr_out);
    if (ev->parsed()) return run_eval(ev_est, ev_gt, ev_points, ev_out, ev_dets, ev_ar, ev_fraction);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
