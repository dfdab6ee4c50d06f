#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "mtssl/augment.hpp"
#include "mtssl/data.hpp"
#include "mtssl/error.hpp"
#include "mtssl/losses.hpp"
#include "mtssl/model.hpp"

namespace mtssl {

enum class Method { kSupervised, kFixMatchStar, kDenseFixMatch };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kSupervised: return "supervised";
    case Method::kFixMatchStar: return "fixmatch_star";
    case Method::kDenseFixMatch: return "dense_fixmatch";
  }
  return "?";
}

enum class ApProtocol { kCoco, kIou50 };

// Every knob of a training run. Defaults are the desk-scale settings except
// the learning rate, which keeps its full-scale value.
struct RunConfig {
  std::string train_root;
  std::string manifest;  // defaults to <train_root>/manifest.txt
  std::string eval_root;
  std::string out_dir;
  std::string resume;  // checkpoint to continue from

  Method method = Method::kDenseFixMatch;
  SamplingMode sampling = SamplingMode::kExplicit;
  LossScope l_u_scope = LossScope::kUnlabeledOnly;
  bool require_all_tasks = false;

  long long total_steps = 20000;
  long long eval_every = 500;
  std::uint64_t seed = 0;
  int batch_total = 16;
  int labeled_quota = 8;

  SgdParams sgd{};
  double ema_decay = kEmaDecay;
  TaskWeights weights{};
  double warmup_frac = 0.05;
  double det_threshold = kDetPseudoThreshold;

  int input_side = 64;
  double anchor_scale = 2.0;
  AugConfig aug{};

  bool eval_student = false;
  ApProtocol ap_protocol = ApProtocol::kCoco;
  double eval_min_score = 0.05;
  int prefetch = 1;  // batches prepared ahead on a worker thread; 0 = inline
  bool verbose = false;

  std::set<std::string> explicitly_set;

  AugMode aug_mode() const {
    return method == Method::kDenseFixMatch ? AugMode::kEquivariant : AugMode::kInvariantOnly;
  }
  bool semi_supervised() const { return method != Method::kSupervised; }
  long long warmup_steps() const {
    return std::max<long long>(1, static_cast<long long>(std::llround(warmup_frac * total_steps)));
  }
  NetSpec net_spec() const {
    NetSpec s;
    s.input_side = input_side;
    s.anchor_scale = anchor_scale;
    return s;
  }
  AugConfig aug_config() const {
    AugConfig a = aug;
    a.crop_size = input_side;
    a.mode = aug_mode();
    return a;
  }
  std::string manifest_path() const {
    return manifest.empty() ? train_root + "/manifest.txt" : manifest;
  }
};

namespace detail {

inline bool parse_bool(const std::string& k, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(k + ": expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& k, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(k + ": expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& k, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(k + ": expected an integer, got '" + v + "'");
  }
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  const std::string& k = key;
  if (k == "train_root") c.train_root = v;
  else if (k == "manifest") c.manifest = v;
  else if (k == "eval_root") c.eval_root = v;
  else if (k == "out_dir") c.out_dir = v;
  else if (k == "resume") c.resume = v;
  else if (k == "method") {
    if (v == "supervised") c.method = Method::kSupervised;
    else if (v == "fixmatch_star") c.method = Method::kFixMatchStar;
    else if (v == "dense_fixmatch") c.method = Method::kDenseFixMatch;
    else throw ConfigError("method: unknown value '" + v + "'");
  } else if (k == "sampling") {
    if (v == "implicit") c.sampling = SamplingMode::kImplicit;
    else if (v == "explicit") c.sampling = SamplingMode::kExplicit;
    else throw ConfigError("sampling: unknown value '" + v + "'");
  } else if (k == "l_u_scope") {
    if (v == "unlabeled_only") c.l_u_scope = LossScope::kUnlabeledOnly;
    else if (v == "all_samples") c.l_u_scope = LossScope::kAllSamples;
    else throw ConfigError("l_u_scope: unknown value '" + v + "'");
  } else if (k == "require_all_tasks") c.require_all_tasks = parse_bool(k, v);
  else if (k == "total_steps") c.total_steps = parse_int(k, v);
  else if (k == "eval_every") c.eval_every = parse_int(k, v);
  else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_int(k, v));
  else if (k == "batch_total") c.batch_total = static_cast<int>(parse_int(k, v));
  else if (k == "labeled_quota") c.labeled_quota = static_cast<int>(parse_int(k, v));
  else if (k == "lr0") c.sgd.lr0 = parse_double(k, v);
  else if (k == "momentum") c.sgd.momentum = parse_double(k, v);
  else if (k == "nesterov") c.sgd.nesterov = parse_bool(k, v);
  else if (k == "weight_decay") c.sgd.weight_decay = parse_double(k, v);
  else if (k == "poly_gamma") c.sgd.poly_gamma = parse_double(k, v);
  else if (k == "ema_decay") c.ema_decay = parse_double(k, v);
  else if (k == "gamma_seg") c.weights.gamma[0] = parse_double(k, v);
  else if (k == "gamma_det") c.weights.gamma[1] = parse_double(k, v);
  else if (k == "lambda_max") c.weights.lambda_max = {parse_double(k, v), parse_double(k, v)};
  else if (k == "lambda_max_seg") c.weights.lambda_max[0] = parse_double(k, v);
  else if (k == "lambda_max_det") c.weights.lambda_max[1] = parse_double(k, v);
  else if (k == "warmup_frac") c.warmup_frac = parse_double(k, v);
  else if (k == "det_threshold") c.det_threshold = parse_double(k, v);
  else if (k == "input_side") c.input_side = static_cast<int>(parse_int(k, v));
  else if (k == "anchor_scale") c.anchor_scale = parse_double(k, v);
  else if (k == "resize_scale_min") c.aug.resize_scale_min = parse_double(k, v);
  else if (k == "resize_scale_max") c.aug.resize_scale_max = parse_double(k, v);
  else if (k == "hflip_prob") c.aug.hflip_prob = parse_double(k, v);
  else if (k == "randaug_n") c.aug.randaug_n = static_cast<int>(parse_int(k, v));
  else if (k == "cutout_area_min") c.aug.cutout_area_min = parse_double(k, v);
  else if (k == "cutout_area_max") c.aug.cutout_area_max = parse_double(k, v);
  else if (k == "eval_student") c.eval_student = parse_bool(k, v);
  else if (k == "ap_protocol") {
    if (v == "coco") c.ap_protocol = ApProtocol::kCoco;
    else if (v == "iou50") c.ap_protocol = ApProtocol::kIou50;
    else throw ConfigError("ap_protocol: unknown value '" + v + "'");
  } else if (k == "eval_min_score") c.eval_min_score = parse_double(k, v);
  else if (k == "prefetch") c.prefetch = static_cast<int>(parse_int(k, v));
  else if (k == "verbose") c.verbose = parse_bool(k, v);
  else throw ConfigError("unknown key '" + k + "'");
  c.explicitly_set.insert(k);
}

inline void validate(const RunConfig& c) {
  if (c.method == Method::kSupervised && c.explicitly_set.count("l_u_scope")) {
    throw ConfigError("method=supervised has no unsupervised loss; drop l_u_scope");
  }
  if (c.total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (c.eval_every <= 0) throw ConfigError("eval_every must be positive");
  if (c.batch_total <= 0 || c.labeled_quota <= 0 || c.labeled_quota > c.batch_total) {
    throw ConfigError("need 0 < labeled_quota <= batch_total");
  }
  if (c.input_side % 16 != 0 || c.input_side < 16) throw ConfigError("input_side must be a multiple of 16");
  for (double g : c.weights.gamma)
    if (g < 0) throw ConfigError("task weights must be >= 0");
  for (double l : c.weights.lambda_max)
    if (l < 0) throw ConfigError("lambda_max must be >= 0");
  if (c.ema_decay < 0 || c.ema_decay > 1) throw ConfigError("ema_decay must lie in [0,1]");
}

// Parses "key = value" lines; '#' starts a comment.
inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

// Canonical text form (stored in checkpoints).
inline std::string describe(const RunConfig& c) {
  std::ostringstream os;
  os << "method = " << to_string(c.method) << "\n"
     << "sampling = " << (c.sampling == SamplingMode::kExplicit ? "explicit" : "implicit") << "\n"
     << "l_u_scope = " << (c.l_u_scope == LossScope::kAllSamples ? "all_samples" : "unlabeled_only") << "\n"
     << "total_steps = " << c.total_steps << "\n"
     << "eval_every = " << c.eval_every << "\n"
     << "seed = " << c.seed << "\n"
     << "lr0 = " << c.sgd.lr0 << "\n"
     << "lambda_max_seg = " << c.weights.lambda_max[0] << "\n"
     << "lambda_max_det = " << c.weights.lambda_max[1] << "\n"
     << "input_side = " << c.input_side << "\n";
  return os.str();
}

}  // namespace mtssl
