#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <variant>

#include "mtssl/augment.hpp"
#include "mtssl/config.hpp"
#include "mtssl/data.hpp"
#include "mtssl/io.hpp"
#include "mtssl/losses.hpp"
#include "mtssl/metrics.hpp"
#include "mtssl/model.hpp"
#include "mtssl/pseudolabel.hpp"

// Training loop: weak and strong views, teacher pseudo-labels moved into the
// strong frame, supervised and consistency losses, SGD and the EMA teacher.
namespace mtssl {

using Scalar = float;

// Everything that stays fixed during a run.
struct TrainContext {
  RunConfig cfg;
  NetSpec spec;
  BoxSet anchors;
  Dataset train;
  AnnotationManifest manifest;
  Dataset eval;

  TrainContext(RunConfig c, Dataset train_set, AnnotationManifest m, Dataset eval_set)
      : cfg(std::move(c)),
        spec(cfg.net_spec()),
        anchors(spec.anchors()),
        train(std::move(train_set)),
        manifest(std::move(m)),
        eval(std::move(eval_set)) {
    validate(cfg);
    if (manifest.size() != train.samples.size()) {
      throw ShapeMismatch("manifest lists " + std::to_string(manifest.size()) + " samples, dataset has " +
                          std::to_string(train.samples.size()));
    }
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto& f = manifest.samples[i];
      const auto& s = train.samples[i];
      if (f.has_seg && !s.has_mask) throw MissingLabel(f.id + " is flagged for segmentation but has no mask");
      if (f.has_det && !s.has_boxes) throw MissingLabel(f.id + " is flagged for detection but has no boxes");
    }
  }
};

struct TrainState {
  long long step = 0;
  ParamStore<Scalar> student;
  EmaTeacher<Scalar> teacher;
  std::vector<HistoryEntry> history;
};

inline TrainState init_state(const TrainContext& ctx) {
  TrainState s;
  s.student = init_params<Scalar>(ctx.spec, ctx.cfg.seed);
  s.teacher = EmaTeacher<Scalar>::from(s.student, ctx.cfg.ema_decay);
  return s;
}

// True when the consistency branch can influence the gradient at all.
inline bool unsupervised_active(const RunConfig& cfg) {
  if (!cfg.semi_supervised()) return false;
  for (int t = 0; t < kNumTasks; ++t) {
    if (cfg.weights.gamma[static_cast<std::size_t>(t)] * cfg.weights.lambda_max[static_cast<std::size_t>(t)] > 0) {
      return true;
    }
  }
  return false;
}

struct PreparedSample {
  int index = 0;  // into the dataset
  AugRecord weak;
  WarpedImage weak_view;
  SampleTargets weak_targets;  // labels carried through the weak transform
  bool in_labeled = false;     // member of some B^l_t
  bool in_unlabeled = false;   // member of some B^u_t with the branch active
  AugRecord strong;
  WarpedImage strong_view;
  AffineTransform2D relabel;
};

struct PreparedBatch {
  long long step = 0;
  Batch batch;
  std::array<Membership, kNumTasks> membership;
  std::vector<PreparedSample> samples;
};

class BatchSource {
 public:
  explicit BatchSource(const TrainContext& ctx) {
    const auto& c = ctx.cfg;
    if (c.sampling == SamplingMode::kImplicit) {
      sampler_.emplace<ImplicitSampler>(ctx.manifest, c.seed, c.batch_total);
    } else {
      BatchSpec bs;
      bs.labeled_quota = c.labeled_quota;
      bs.total = c.semi_supervised() ? c.batch_total : c.labeled_quota;
      bs.require_all_tasks = c.require_all_tasks;
      sampler_.emplace<ExplicitSampler>(ctx.manifest, c.seed, bs);
    }
  }

  Batch batch(long long step) {
    return std::visit(
        [&](auto& s) -> Batch {
          if constexpr (std::is_same_v<std::decay_t<decltype(s)>, std::monostate>) {
            return {};
          } else {
            return s.batch(static_cast<std::uint64_t>(step));
          }
        },
        sampler_);
  }

 private:
  std::variant<std::monostate, ImplicitSampler, ExplicitSampler> sampler_;
};

// Draws and applies the augmentations of one step. A pure function of the
// configuration, the dataset and the step counter.
inline PreparedBatch prepare_batch(const TrainContext& ctx, BatchSource& source, long long step) {
  const auto& cfg = ctx.cfg;
  PreparedBatch pb;
  pb.step = step;
  pb.batch = source.batch(step);
  const LossScope scope = cfg.semi_supervised() ? cfg.l_u_scope : LossScope::kUnlabeledOnly;
  for (Task t : kTasks) {
    pb.membership[static_cast<std::size_t>(t)] = loss_membership(pb.batch, ctx.manifest, t, scope);
  }
  const bool unsup = unsupervised_active(cfg);
  const AugConfig aug = cfg.aug_config();
  const FrameSize frame{aug.crop_size, aug.crop_size};
  pb.samples.resize(pb.batch.samples.size());
  for (std::size_t k = 0; k < pb.samples.size(); ++k) {
    auto& ps = pb.samples[k];
    ps.index = pb.batch.samples[k];
    const auto& flags = ctx.manifest.samples[static_cast<std::size_t>(ps.index)];
    const auto& src = ctx.train.samples[static_cast<std::size_t>(ps.index)];
    for (Task t : kTasks) {
      const auto& mem = pb.membership[static_cast<std::size_t>(t)];
      const int pos = static_cast<int>(k);
      if (std::find(mem.labeled.begin(), mem.labeled.end(), pos) != mem.labeled.end()) ps.in_labeled = true;
      if (unsup && std::find(mem.unlabeled.begin(), mem.unlabeled.end(), pos) != mem.unlabeled.end()) {
        ps.in_unlabeled = true;
      }
    }
    Rng weak_rng(cfg.seed, Stream::kWeak, {static_cast<std::uint64_t>(step), k});
    ps.weak = sample_weak(weak_rng, aug, src.image.size());
    ps.weak_view = apply_record(src.image, ps.weak);
    if (ps.in_labeled) {
      if (flags.has_seg) ps.weak_targets.seg = warp_segmap(src.mask, ps.weak.geometric, frame);
      if (flags.has_det) ps.weak_targets.det = warp_boxes(src.boxes, ps.weak.geometric, frame);
    }
    if (ps.in_unlabeled) {
      Rng strong_rng(cfg.seed, Stream::kStrong, {static_cast<std::uint64_t>(step), k});
      ps.strong = pair_with_weak(ps.weak, sample_strong(strong_rng, aug));
      ps.strong_view = apply_record(src.image, ps.strong);
      ps.relabel = relabel_transform(ps.weak, ps.strong);
      if (cfg.method == Method::kFixMatchStar && !ps.relabel.is_identity(1e-9)) {
        throw Error("invariant-only relabel transform is not the identity");
      }
    }
  }
  return pb;
}

// Runs prepare_batch for consecutive steps on a worker thread, at most
// `depth` batches ahead of the consumer.
class Prefetcher {
 public:
  Prefetcher(const TrainContext& ctx, long long first, long long last, std::size_t depth)
      : ctx_(ctx), source_(ctx), depth_(std::max<std::size_t>(1, depth)), next_(first), last_(last) {
    worker_ = std::jthread([this](std::stop_token st) { run(st); });
  }

  ~Prefetcher() {
    worker_.request_stop();
    cv_.notify_all();
  }

  PreparedBatch pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || error_; });
    if (queue_.empty() && error_) std::rethrow_exception(error_);
    PreparedBatch pb = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return pb;
  }

 private:
  void run(std::stop_token st) {
    try {
      for (long long s = next_; s < last_ && !st.stop_requested(); ++s) {
        PreparedBatch pb = prepare_batch(ctx_, source_, s);
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return queue_.size() < depth_ || st.stop_requested(); });
        if (st.stop_requested()) return;
        queue_.push_back(std::move(pb));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  const TrainContext& ctx_;
  BatchSource source_;
  std::size_t depth_;
  long long next_, last_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<PreparedBatch> queue_;
  std::exception_ptr error_;
  std::jthread worker_;
};

// Teacher pseudo-labels for one weak view (segmentation argmax with padded
// pixels ignored, thresholded detections after NMS).
inline std::pair<SegPseudoLabel, DetPseudoLabel> teacher_pseudo_labels(
    const TrainContext& ctx, const HeadView<Scalar>& head, const ValidityMask& weak_mask) {
  const auto& spec = ctx.spec;
  SegPseudoLabel seg = seg_sigma<Scalar>(head.seg, spec.seg_classes, spec.input_side, spec.input_side);
  for (std::size_t p = 0; p < seg.classes.classes.size(); ++p) {
    if (!weak_mask.valid[p]) {
      seg.classes.classes[p] = kIgnoreId;
      seg.confidence[p] = 0.0f;
    }
  }
  const BoxSet dets = decode_detections<Scalar>(head.det_cls, head.det_deltas, ctx.anchors,
                                                {spec.input_side, spec.input_side});
  return {std::move(seg), det_sigma(dets, ctx.cfg.det_threshold)};
}

// One optimization step on a prepared batch.
inline LossReport train_step(const TrainContext& ctx, TrainState& state, const PreparedBatch& pb) {
  const auto& cfg = ctx.cfg;
  const auto& spec = ctx.spec;
  const HeadDims dims = spec.head_dims();
  const FrameSize frame{spec.input_side, spec.input_side};
  const std::size_t n = pb.samples.size();

  // Teacher pass on the weak views that need pseudo-labels.
  std::vector<int> pseudo_pos;
  for (std::size_t k = 0; k < n; ++k)
    if (pb.samples[k].in_unlabeled) pseudo_pos.push_back(static_cast<int>(k));
  std::vector<MappedPseudoLabels> mapped(n);
  if (!pseudo_pos.empty()) {
    std::vector<Image> views;
    for (int k : pseudo_pos) views.push_back(pb.samples[static_cast<std::size_t>(k)].weak_view.image);
    Graph<Scalar> tg(state.teacher.shadow);
    const auto out = forward(tg, spec, to_batch<Scalar>(views));
    for (std::size_t j = 0; j < pseudo_pos.size(); ++j) {
      const auto& ps = pb.samples[static_cast<std::size_t>(pseudo_pos[j])];
      auto [seg, det] = teacher_pseudo_labels(ctx, head_view(tg, out, static_cast<int>(j)), ps.weak_view.mask);
      mapped[static_cast<std::size_t>(pseudo_pos[j])] = map_pseudo(seg, det, ps.relabel, frame);
    }
  }

  // Student pass: weak views of labeled members, strong views of unlabeled.
  std::vector<Image> views;
  std::vector<int> weak_entry(n, -1), strong_entry(n, -1);
  for (std::size_t k = 0; k < n; ++k) {
    if (pb.samples[k].in_labeled) {
      weak_entry[k] = static_cast<int>(views.size());
      views.push_back(pb.samples[k].weak_view.image);
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (pb.samples[k].in_unlabeled) {
      strong_entry[k] = static_cast<int>(views.size());
      views.push_back(pb.samples[k].strong_view.image);
    }
  }
  LossReport parts;
  for (Task t : kTasks) {
    const auto& mem = pb.membership[static_cast<std::size_t>(t)];
    parts[t].num_labeled = mem.labeled.size();
    parts[t].num_unlabeled = unsupervised_active(cfg) ? mem.unlabeled.size() : 0;
  }
  if (views.empty()) {
    // Nothing to learn from; the optimizer still advances so that step
    // counters and the EMA schedule stay aligned.
    state.student.zero_grad();
  } else {
    Graph<Scalar> g(state.student);
    const auto out = forward(g, spec, to_batch<Scalar>(views));
    const std::size_t ne = views.size();
    std::vector<HeadView<Scalar>> preds(ne);
    for (std::size_t e = 0; e < ne; ++e) preds[e] = head_view(g, out, static_cast<int>(e));
    std::vector<HeadGrad<Scalar>> grads(ne);
    std::vector<SampleTargets> targets(ne);
    std::vector<MappedPseudoLabels> pseudo(ne);
    std::vector<ValidityMask> validity(ne);
    for (std::size_t k = 0; k < n; ++k) {
      if (weak_entry[k] >= 0) targets[static_cast<std::size_t>(weak_entry[k])] = pb.samples[k].weak_targets;
      if (strong_entry[k] >= 0) {
        pseudo[static_cast<std::size_t>(strong_entry[k])] = std::move(mapped[k]);
        validity[static_cast<std::size_t>(strong_entry[k])] = pb.samples[k].strong_view.mask;
      }
    }
    const RampSchedule ramp{cfg.warmup_steps()};
    for (Task t : kTasks) {
      const auto ti = static_cast<std::size_t>(t);
      const auto& mem = pb.membership[ti];
      std::vector<int> lab, unl;
      for (int k : mem.labeled) lab.push_back(weak_entry[static_cast<std::size_t>(k)]);
      const double gamma = cfg.weights.gamma[ti];
      parts[t].supervised = supervised_loss<Scalar>(t, dims, ctx.anchors, preds, targets, lab,
                                                    gamma > 0 ? std::span<HeadGrad<Scalar>>(grads)
                                                              : std::span<HeadGrad<Scalar>>(),
                                                    static_cast<Scalar>(gamma));
      if (!unsupervised_active(cfg)) continue;
      for (int k : mem.unlabeled) unl.push_back(strong_entry[static_cast<std::size_t>(k)]);
      const double scale = gamma * task_lambda(cfg.weights, t, pb.step, ramp);
      parts[t].unsupervised = unsupervised_loss<Scalar>(
          t, dims, ctx.anchors, preds, pseudo, validity, unl,
          scale > 0 ? std::span<HeadGrad<Scalar>>(grads) : std::span<HeadGrad<Scalar>>(),
          static_cast<Scalar>(scale));
    }
    // Seed the head outputs with the accumulated loss gradients.
    const auto& sv = g.value(out.seg);
    const auto& cv = g.value(out.det_cls);
    const auto& bv = g.value(out.det_box);
    Tensor4<Scalar> gs(sv.n, sv.c, sv.h, sv.w), gc(cv.n, cv.c, cv.h, cv.w), gb(bv.n, bv.c, bv.h, bv.w);
    for (std::size_t e = 0; e < ne; ++e) {
      auto copy = [&](const std::vector<Scalar>& src, Tensor4<Scalar>& dst) {
        if (!src.empty()) std::copy(src.begin(), src.end(), dst.sample(static_cast<int>(e)).begin());
      };
      copy(grads[e].seg, gs);
      copy(grads[e].det_cls, gc);
      copy(grads[e].det_deltas, gb);
    }
    const std::pair<Var, const Tensor4<Scalar>*> seeds[] = {{out.seg, &gs}, {out.det_cls, &gc}, {out.det_box, &gb}};
    g.backward(seeds);
  }
  LossReport report = total_loss(parts, cfg.weights, pb.step, RampSchedule{cfg.warmup_steps()});
  sgd_step(state.student, pb.step, cfg.total_steps, cfg.sgd);
  ema_update(state.teacher, state.student);
  if (state.teacher.shadow.gradient_steps != 0 ||
      state.teacher.shadow.ema_steps != state.student.gradient_steps) {
    throw Error("teacher must only follow the student through EMA updates");
  }
  ++state.step;
  return report;
}

struct EvalResult {
  IouReport iou;
  ApReport ap;
  double miou = 0.0;
  double map = 0.0;
  double gmean() const { return geometric_mean(miou, map); }
};

// Single forward pass per image, no augmentation.
template <typename T>
EvalResult evaluate(ParamStore<T>& weights, const NetSpec& spec, const Dataset& data,
                    ApProtocol protocol = ApProtocol::kCoco, double min_score = 0.05) {
  if (data.samples.empty()) throw EmptyMatrix("evaluation set is empty");
  ConfusionMatrix cm(spec.seg_classes);
  std::vector<BoxSet> dets, gts;
  const BoxSet anchors = spec.anchors();
  const std::size_t chunk = 32;
  for (std::size_t b = 0; b < data.samples.size(); b += chunk) {
    std::vector<Image> imgs;
    const std::size_t e = std::min(data.samples.size(), b + chunk);
    for (std::size_t i = b; i < e; ++i) {
      const auto& s = data.samples[i];
      if (s.image.width != spec.input_side || s.image.height != spec.input_side) {
        throw ShapeMismatch("evaluation image " + s.id + " does not match the network input");
      }
      imgs.push_back(s.image);
    }
    Graph<T> g(weights);
    const auto out = forward(g, spec, to_batch<T>(imgs));
    for (std::size_t i = b; i < e; ++i) {
      const auto& s = data.samples[i];
      const auto head = head_view(g, out, static_cast<int>(i - b));
      if (s.has_mask) {
        const auto pred = seg_sigma<T>(head.seg, spec.seg_classes, spec.input_side, spec.input_side);
        cm.add(s.mask, pred.classes);
      }
      DecodeParams dp;
      dp.min_score = min_score;
      dets.push_back(decode_detections<T>(head.det_cls, head.det_deltas, anchors,
                                          {spec.input_side, spec.input_side}, dp));
      gts.push_back(s.boxes);
    }
  }
  EvalResult r;
  r.iou = miou(cm);
  r.miou = r.iou.mean;
  const auto thresholds = protocol == ApProtocol::kCoco ? coco_iou_thresholds() : std::vector<double>{0.5};
  r.ap = average_precision(dets, gts, thresholds);
  r.map = r.ap.map;
  return r;
}

// One evaluation record:
//   step=<n> miou=<v> map=<v> gmean=<v> iou_std=<v> iou=<c0,c1,..> ap=<c0,c1,..>
// Absent classes are written as "nan".
inline std::string format_record(long long step, const EvalResult& r, int det_classes) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "step=" << step << " miou=" << r.miou << " map=" << r.map << " gmean=" << r.gmean()
     << " iou_std=" << r.iou.stddev << " iou=";
  for (std::size_t c = 0; c < r.iou.per_class.size(); ++c) {
    if (c) os << ",";
    if (r.iou.per_class[c]) os << *r.iou.per_class[c]; else os << "nan";
  }
  os << " ap=";
  for (int c = 0; c < det_classes; ++c) {
    if (c) os << ",";
    auto it = r.ap.per_class.find(c);
    if (it != r.ap.per_class.end()) os << it->second; else os << "nan";
  }
  return os.str();
}

struct MetricsRecord {
  long long step = 0;
  double miou = 0, map = 0, gmean = 0, iou_std = 0;
  std::vector<std::string> iou, ap;  // per class, as written
};

// Parses a log written with format_record; unknown fields are skipped.
inline std::vector<MetricsRecord> read_metrics_log(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) out.push_back(tok);
    return out;
  };
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    MetricsRecord r;
    for (const auto& field : split(line, ' ')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = field.substr(0, eq), v = field.substr(eq + 1);
      if (k == "step") r.step = std::stoll(v);
      else if (k == "miou") r.miou = std::stod(v);
      else if (k == "map") r.map = std::stod(v);
      else if (k == "gmean") r.gmean = std::stod(v);
      else if (k == "iou_std") r.iou_std = std::stod(v);
      else if (k == "iou") r.iou = split(v, ',');
      else if (k == "ap") r.ap = split(v, ',');
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw IoError(path.string() + " holds no evaluation records");
  return out;
}

struct RunReport {
  std::vector<HistoryEntry> history;
  std::size_t best = 0;
  std::vector<LossReport> losses;  // one per executed step
  HistoryEntry best_entry() const { return history.at(best); }
};

// Trains `total_steps`, evaluating every `eval_every` steps (and at the end)
// with the teacher weights. Writes metrics.txt and checkpoints to out_dir
// when it is set.
inline RunReport run(const TrainContext& ctx, std::optional<TrainState> resume = std::nullopt) {
  const auto& cfg = ctx.cfg;
  TrainState state = resume ? std::move(*resume) : init_state(ctx);
  const bool write = !cfg.out_dir.empty();
  if (write) fs::create_directories(cfg.out_dir);
  std::ofstream metrics;
  if (write) {
    metrics.open(fs::path(cfg.out_dir) / "metrics.txt", resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics to " + cfg.out_dir);
  }
  RunReport rep;
  auto checkpoint = [&](const std::string& name) {
    Checkpoint<Scalar> ck{state.step, cfg.seed, describe(cfg), state.student, state.teacher.shadow, state.history};
    save_checkpoint((fs::path(cfg.out_dir) / name).string(), ck);
  };
  auto do_eval = [&] {
    if (!state.history.empty() && state.history.back().step == state.step) return;
    auto& weights = cfg.eval_student ? state.student : state.teacher.shadow;
    const EvalResult r = evaluate(weights, ctx.spec, ctx.eval, cfg.ap_protocol, cfg.eval_min_score);
    state.history.push_back({state.step, r.miou, r.map});
    if (cfg.verbose) {
      std::fprintf(stderr, "[%s seed %llu] step %lld  mIoU %.4f  mAP %.4f  gmean %.4f\n",
                   to_string(cfg.method).c_str(), static_cast<unsigned long long>(cfg.seed), state.step,
                   r.miou, r.map, r.gmean());
    }
    if (write) {
      metrics << format_record(state.step, r, ctx.spec.det_classes) << "\n" << std::flush;
      checkpoint("last.ckpt");
      std::vector<EvalPoint> pts;
      for (const auto& h : state.history) pts.push_back({h.step, h.miou, h.map});
      if (geometric_mean_select(pts) == pts.size() - 1) checkpoint("best.ckpt");
    }
  };

  const long long first = state.step;
  std::optional<Prefetcher> prefetch;
  std::optional<BatchSource> inline_source;
  if (cfg.prefetch > 0 && first < cfg.total_steps) {
    prefetch.emplace(ctx, first, cfg.total_steps, static_cast<std::size_t>(cfg.prefetch));
  } else {
    inline_source.emplace(ctx);
  }
  for (long long step = first; step < cfg.total_steps; ++step) {
    if (step % cfg.eval_every == 0) do_eval();
    const PreparedBatch pb = prefetch ? prefetch->pop() : prepare_batch(ctx, *inline_source, step);
    rep.losses.push_back(train_step(ctx, state, pb));
  }
  do_eval();

  rep.history = state.history;
  std::vector<EvalPoint> pts;
  for (const auto& h : rep.history) pts.push_back({h.step, h.miou, h.map});
  rep.best = geometric_mean_select(pts);
  return rep;
}

// Loads datasets named by the configuration and builds the context.
inline TrainContext make_context(const RunConfig& cfg) {
  validate(cfg);
  if (cfg.train_root.empty()) throw ConfigError("train_root is required");
  if (cfg.eval_root.empty()) throw ConfigError("eval_root is required");
  AnnotationManifest m = read_manifest(cfg.manifest_path());
  Dataset train = load_dataset(cfg.train_root, manifest_ids(m));
  Dataset eval = load_dataset(cfg.eval_root);
  return TrainContext(cfg, std::move(train), std::move(m), std::move(eval));
}

inline TrainState state_from_checkpoint(const Checkpoint<Scalar>& ck, double ema_decay) {
  TrainState s;
  s.step = ck.step;
  s.student = ck.student;
  s.student.gradient_steps = static_cast<std::uint64_t>(ck.step);
  s.teacher.shadow = ck.teacher;
  s.teacher.decay = ema_decay;
  s.teacher.shadow.ema_steps = static_cast<std::uint64_t>(ck.step);
  s.history = ck.history;
  return s;
}

}  // namespace mtssl
