#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mtssl/engine.hpp"
#include "mtssl/shapes.hpp"

using namespace mtssl;

namespace {

int cmd_report(const std::string& metrics, const std::string& csv) {
  const auto recs = read_metrics_log(metrics);
  std::vector<EvalPoint> pts;
  for (const auto& r : recs) pts.push_back({r.step, r.miou, r.map});
  const std::size_t best = geometric_mean_select(pts);
  const MetricsRecord& b = recs[best];
  std::printf("evaluations: %zu (steps %lld..%lld)\n", recs.size(), recs.front().step, recs.back().step);
  std::printf("selected step %lld by geometric mean %.4f\n", b.step, b.gmean);
  std::printf("  mIoU %.4f (std %.4f)  mAP %.4f\n", b.miou, b.iou_std, b.map);
  static const char* seg_names[] = {"background", "circle", "square", "triangle"};
  static const char* det_names[] = {"circle", "square", "triangle"};
  std::printf("  %-12s %8s\n", "class", "IoU");
  for (std::size_t c = 0; c < b.iou.size(); ++c) {
    std::printf("  %-12s %8s\n", c < 4 ? seg_names[c] : std::to_string(c).c_str(), b.iou[c].c_str());
  }
  std::printf("  %-12s %8s\n", "class", "AP");
  for (std::size_t c = 0; c < b.ap.size(); ++c) {
    std::printf("  %-12s %8s\n", c < 3 ? det_names[c] : std::to_string(c).c_str(), b.ap[c].c_str());
  }
  if (!csv.empty()) {
    std::ofstream os(csv);
    if (!os) throw IoError("cannot write " + csv);
    os << "step,miou,map,gmean";
    for (std::size_t c = 0; c < b.iou.size(); ++c) os << ",iou_" << c;
    for (std::size_t c = 0; c < b.ap.size(); ++c) os << ",ap_" << c;
    os << "\n";
    for (const auto& r : recs) {
      os << r.step << "," << r.miou << "," << r.map << "," << r.gmean;
      for (const auto& v : r.iou) os << "," << v;
      for (const auto& v : r.ap) os << "," << v;
      os << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task semi-supervised training on partially annotated data"};
  app.require_subcommand(1);

  std::size_t gen_n = 1000;
  int gen_side = 64;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic shapes dataset");
  gen->add_option("--n", gen_n, "number of images")->required();
  gen->add_option("--side", gen_side, "image side in pixels");
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  std::string sc_kind, sc_root, sc_out;
  std::size_t sc_n = 0, sc_seg = 0, sc_det = 0;
  std::uint64_t sc_seed = 0;
  auto* scen = app.add_subcommand("make-scenario", "Draw a partial-annotation manifest");
  scen->add_option("--kind", sc_kind, "a, b, c, d, e or full")->required();
  scen->add_option("--seg", sc_seg, "samples labeled for segmentation")->required();
  scen->add_option("--det", sc_det, "samples labeled for detection")->required();
  scen->add_option("--seed", sc_seed, "random seed");
  auto* n_opt = scen->add_option("--n", sc_n, "dataset size");
  auto* root_opt = scen->add_option("--root", sc_root, "dataset whose images define the sample ids");
  n_opt->excludes(root_opt);
  scen->add_option("--out", sc_out, "manifest path")->required();

  std::string tr_config;
  auto* train = app.add_subcommand("train", "Train a model; extra --key value pairs override the config");
  train->add_option("--config", tr_config, "key = value config file");
  train->allow_extras();

  std::string ev_ckpt, ev_data, ev_protocol = "coco";
  int ev_side = 64;
  bool ev_student = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled dataset");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset root")->required();
  ev->add_option("--input-side", ev_side, "network input side");
  ev->add_option("--protocol", ev_protocol, "coco or iou50");
  ev->add_flag("--student", ev_student, "evaluate the student instead of the teacher");

  std::string rp_metrics, rp_csv;
  auto* rep = app.add_subcommand("report", "Summarize a metrics log");
  rep->add_option("metrics", rp_metrics, "metrics.txt written by train")->required();
  rep->add_option("--csv", rp_csv, "also write all records as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      gen_shapes_dataset(gen_n, gen_side, gen_seed, gen_out);
      std::printf("wrote %zu samples to %s\n", gen_n, gen_out.c_str());
    } else if (*scen) {
      const ScenarioKind kind = parse_scenario_kind(sc_kind);
      std::vector<std::string> ids;
      if (!sc_root.empty()) {
        for (const auto& e : fs::directory_iterator(fs::path(sc_root) / "images")) {
          if (e.path().extension() == ".ppm") ids.push_back(e.path().stem().string());
        }
        std::sort(ids.begin(), ids.end());
        sc_n = ids.size();
      }
      if (sc_n == 0) throw InvalidScenario("dataset size must be given with --n or --root");
      AnnotationManifest m = generate_scenario(sc_n, kind, sc_seg, sc_det, default_overlap(kind), sc_seed);
      for (std::size_t i = 0; i < ids.size(); ++i) m.samples[i].id = ids[i];
      write_manifest(sc_out, m);
      std::printf("scenario (%c): n=%zu seg=%zu det=%zu overlap=%zu (expected %.1f if independent)\n",
                  to_char(kind), sc_n, m.count(Task::kSegmentation), m.count(Task::kDetection),
                  m.overlap_count(), expected_overlap(sc_n, sc_seg, sc_det));
    } else if (*train) {
      RunConfig cfg;
      if (!tr_config.empty()) load_config_file(cfg, tr_config);
      const auto extras = train->remaining();
      for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string key = extras[i];
        if (key.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + key + "'");
        key = key.substr(2);
        std::string value;
        if (const auto eq = key.find('='); eq != std::string::npos) {
          value = key.substr(eq + 1);
          key = key.substr(0, eq);
        } else {
          if (i + 1 >= extras.size()) throw ConfigError("missing value for --" + key);
          value = extras[++i];
        }
        std::replace(key.begin(), key.end(), '-', '_');
        set_config_value(cfg, key, value);
      }
      const TrainContext ctx = make_context(cfg);
      std::optional<TrainState> resume;
      if (!cfg.resume.empty()) {
        resume = state_from_checkpoint(load_checkpoint<Scalar>(cfg.resume, ctx.spec), cfg.ema_decay);
      }
      const RunReport r = run(ctx, std::move(resume));
      const auto best = r.best_entry();
      std::printf("best step %lld: mIoU %.4f mAP %.4f gmean %.4f\n", best.step, best.miou, best.map,
                  geometric_mean(best.miou, best.map));
    } else if (*ev) {
      NetSpec spec;
      spec.input_side = ev_side;
      auto ck = load_checkpoint<Scalar>(ev_ckpt, spec);
      const Dataset data = load_dataset(ev_data);
      const auto protocol = ev_protocol == "iou50" ? ApProtocol::kIou50 : ApProtocol::kCoco;
      const EvalResult r = evaluate(ev_student ? ck.student : ck.teacher, spec, data, protocol);
      std::printf("%s\n", format_record(ck.step, r, spec.det_classes).c_str());
    } else if (*rep) {
      return cmd_report(rp_metrics, rp_csv);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
