#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mtssl/engine.hpp"
#include "mtssl/shapes.hpp"

// Small on-disk datasets and contexts for training-loop tests.
namespace mtssl::testing {

struct TinyData {
  std::filesystem::path root;
  Dataset train;
  Dataset eval;
};

// Renders `n_train` + `n_eval` shapes images of side `side` under a scratch
// directory (reused when already present; the name should encode the sizes).
inline TinyData tiny_data(const std::string& name, std::size_t n_train, std::size_t n_eval, int side = 32) {
  TinyData d;
  d.root = std::filesystem::temp_directory_path() / ("mtssl_" + name);
  const auto train = d.root / "train", eval = d.root / "eval";
  if (!std::filesystem::exists(d.root)) {
    // Render privately, then publish with one rename.
    const auto tmp = d.root.string() + ".tmp" + std::to_string(std::random_device{}());
    gen_shapes_dataset(n_train, side, 101, std::filesystem::path(tmp) / "train");
    gen_shapes_dataset(n_eval, side, 202, std::filesystem::path(tmp) / "eval");
    std::error_code ec;
    std::filesystem::rename(tmp, d.root, ec);
    if (ec) std::filesystem::remove_all(tmp);
  }
  d.train = load_dataset(train);
  d.eval = load_dataset(eval);
  return d;
}

// Desk-scale settings shrunk for fast tests.
inline RunConfig tiny_config(Method method, long long total_steps, long long eval_every) {
  RunConfig c;
  c.method = method;
  c.total_steps = total_steps;
  c.eval_every = eval_every;
  c.input_side = 32;
  c.sgd.lr0 = 0.01;
  c.prefetch = 0;
  return c;
}

inline TrainContext tiny_context(const TinyData& d, RunConfig cfg, const AnnotationManifest& m) {
  return TrainContext(std::move(cfg), d.train, m, d.eval);
}

// Scenario (b) over the tiny training set.
inline AnnotationManifest tiny_manifest(const TinyData& d, std::size_t labeled, std::uint64_t seed = 0) {
  auto m = generate_scenario(d.train.samples.size(), ScenarioKind::kB, labeled, labeled, Overlap::kFull, seed);
  for (std::size_t i = 0; i < m.size(); ++i) m.samples[i].id = d.train.samples[i].id;
  return m;
}

inline bool same_losses(const std::vector<LossReport>& a, const std::vector<LossReport>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].total != b[i].total) return false;
    for (Task t : kTasks) {
      if (a[i][t].supervised != b[i][t].supervised || a[i][t].unsupervised != b[i][t].unsupervised) return false;
    }
  }
  return true;
}

inline bool same_params(const ParamStore<Scalar>& a, const ParamStore<Scalar>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[static_cast<int>(k)].value.data != b[static_cast<int>(k)].value.data) return false;
  }
  return true;
}

}  // namespace mtssl::testing
