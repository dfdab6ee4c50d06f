#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mtssl/error.hpp"
#include "mtssl/losses.hpp"
#include "mtssl/rng.hpp"

// Partial-annotation bookkeeping: which samples carry which labels, the
// scenario generators that decide it, and the mini-batch samplers.
namespace mtssl {

enum class ScenarioKind { kA, kB, kC, kD, kE, kFull };
enum class Overlap { kFull, kRandom };

inline char to_char(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kA: return 'a';
    case ScenarioKind::kB: return 'b';
    case ScenarioKind::kC: return 'c';
    case ScenarioKind::kD: return 'd';
    case ScenarioKind::kE: return 'e';
    case ScenarioKind::kFull: return 'f';
  }
  return '?';
}

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "a") return ScenarioKind::kA;
  if (s == "b") return ScenarioKind::kB;
  if (s == "c") return ScenarioKind::kC;
  if (s == "d") return ScenarioKind::kD;
  if (s == "e") return ScenarioKind::kE;
  if (s == "f" || s == "full") return ScenarioKind::kFull;
  throw InvalidScenario("unknown scenario kind '" + s + "'");
}

// Natural overlap of each scenario: (b) and (d) nest the segmentation subset
// inside the detection subset, (c) and (e) draw them independently.
inline Overlap default_overlap(ScenarioKind k) {
  return (k == ScenarioKind::kC || k == ScenarioKind::kE) ? Overlap::kRandom : Overlap::kFull;
}

struct SampleFlags {
  std::string id;
  bool has_seg = false;
  bool has_det = false;

  bool has(Task t) const { return t == Task::kSegmentation ? has_seg : has_det; }
  bool labeled_any() const { return has_seg || has_det; }
  bool labeled_all() const { return has_seg && has_det; }
};

struct AnnotationManifest {
  ScenarioKind kind = ScenarioKind::kFull;
  std::size_t seg_size = 0;
  std::size_t det_size = 0;
  Overlap overlap = Overlap::kFull;
  std::uint64_t seed = 0;
  std::vector<SampleFlags> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t count(Task t) const {
    return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(),
                                                  [t](const SampleFlags& s) { return s.has(t); }));
  }
  std::size_t overlap_count() const {
    return static_cast<std::size_t>(std::count_if(
        samples.begin(), samples.end(), [](const SampleFlags& s) { return s.labeled_all(); }));
  }
};

inline std::string default_sample_id(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

inline void check_scenario(std::size_t n, ScenarioKind kind, std::size_t seg, std::size_t det,
                           Overlap overlap) {
  if (seg > n || det > n) throw InvalidScenario("subset larger than the dataset");
  switch (kind) {
    case ScenarioKind::kA:
      if (det != n) throw InvalidScenario("(a) requires every sample labeled for detection");
      break;
    case ScenarioKind::kB:
    case ScenarioKind::kC:
      if (seg != det) throw InvalidScenario("(b)/(c) require equal subset sizes");
      break;
    case ScenarioKind::kD:
    case ScenarioKind::kE:
      if (det < seg) throw InvalidScenario("(d)/(e) require det_size >= seg_size");
      break;
    case ScenarioKind::kFull:
      if (seg != n || det != n) throw InvalidScenario("full scenario labels every sample");
      break;
  }
  if (kind != ScenarioKind::kA && kind != ScenarioKind::kFull && overlap != default_overlap(kind)) {
    throw InvalidScenario(std::string("overlap mode inconsistent with scenario (") + to_char(kind) + ")");
  }
}

// Draws which samples are annotated for which task. Full overlap nests the
// segmentation subset inside the detection subset; random overlap draws the
// two subsets independently.
inline AnnotationManifest generate_scenario(std::size_t n, ScenarioKind kind, std::size_t seg_size,
                                            std::size_t det_size, Overlap overlap,
                                            std::uint64_t seed) {
  check_scenario(n, kind, seg_size, det_size, overlap);
  AnnotationManifest m;
  m.kind = kind;
  m.seg_size = seg_size;
  m.det_size = det_size;
  m.overlap = overlap;
  m.seed = seed;
  m.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.samples[i].id = default_sample_id(i);
  Rng rng(seed, Stream::kScenario);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  for (std::size_t k = 0; k < det_size; ++k) m.samples[order[k]].has_det = true;
  if (overlap == Overlap::kFull) {
    // Segmentation subset is a uniformly random subset of the detection one.
    std::vector<std::size_t> det_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(det_size));
    rng.shuffle(det_idx.begin(), det_idx.end());
    for (std::size_t k = 0; k < seg_size; ++k) m.samples[det_idx[k]].has_seg = true;
  } else {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t k = 0; k < seg_size; ++k) m.samples[order[k]].has_seg = true;
  }
  return m;
}

// Expectation and variance of the overlap of two independent uniformly drawn
// subsets (hypergeometric).
inline double expected_overlap(std::size_t n, std::size_t seg, std::size_t det) {
  return static_cast<double>(seg) * static_cast<double>(det) / static_cast<double>(n);
}

inline double overlap_variance(std::size_t n, std::size_t seg, std::size_t det) {
  const double N = static_cast<double>(n), s = static_cast<double>(seg), d = static_cast<double>(det);
  if (n < 2) return 0.0;
  return s * (d / N) * ((N - d) / N) * ((N - s) / (N - 1.0));
}

enum class SamplingMode { kImplicit, kExplicit };
enum class LossScope { kUnlabeledOnly, kAllSamples };

struct BatchSpec {
  SamplingMode mode = SamplingMode::kExplicit;
  int total = 16;
  int labeled_quota = 8;  // explicit only
  bool require_all_tasks = false;  // "labeled" = labeled for every task
};

struct Batch {
  std::vector<int> samples;  // dataset indices
  int num_from_labeled_stream = 0;  // explicit: leading entries drawn from the labeled stream
};

namespace detail {

// Element `pos` of an endless sequence of independently shuffled passes over
// `pool`.
inline int cyclic_pick(const std::vector<int>& pool, std::uint64_t seed, Stream stream,
                       std::uint64_t pos, std::vector<int>& cache, std::uint64_t& cached_epoch) {
  const std::uint64_t n = pool.size();
  const std::uint64_t epoch = pos / n;
  if (cache.empty() || cached_epoch != epoch) {
    cache = pool;
    Rng rng(seed, stream, {epoch});
    rng.shuffle(cache.begin(), cache.end());
    cached_epoch = epoch;
  }
  return cache[pos % n];
}

}  // namespace detail

// Uniform sampling regardless of annotations: each epoch is a fresh
// permutation of the dataset; batch b takes positions [b*total, (b+1)*total).
class ImplicitSampler {
 public:
  ImplicitSampler(const AnnotationManifest& m, std::uint64_t seed, int total = 16)
      : seed_(seed), total_(total) {
    if (m.size() == 0) throw EmptyPartition("empty dataset");
    pool_.resize(m.size());
    std::iota(pool_.begin(), pool_.end(), 0);
  }

  Batch batch(std::uint64_t b) {
    Batch out;
    for (int k = 0; k < total_; ++k) {
      out.samples.push_back(detail::cyclic_pick(pool_, seed_, Stream::kImplicitOrder,
                                                b * static_cast<std::uint64_t>(total_) + static_cast<std::uint64_t>(k),
                                                cache_, epoch_));
    }
    return out;
  }

  Batch next() { return batch(cursor_++); }
  std::uint64_t batches_per_epoch() const {
    return (pool_.size() + static_cast<std::size_t>(total_) - 1) / static_cast<std::size_t>(total_);
  }

 private:
  std::vector<int> pool_, cache_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = ~0ull;
  std::uint64_t cursor_ = 0;
  int total_;
};

// Over-sampling of labeled data: two independent cyclic shuffled streams, one
// over labeled samples (labeled for at least one task, or for every task with
// `require_all_tasks`) and one over the rest. If no unlabeled samples exist the
// second stream runs over the whole dataset.
class ExplicitSampler {
 public:
  ExplicitSampler(const AnnotationManifest& m, std::uint64_t seed, const BatchSpec& spec = {})
      : seed_(seed), spec_(spec) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto& s = m.samples[i];
      const bool lab = spec.require_all_tasks ? s.labeled_all() : s.labeled_any();
      (lab ? labeled_ : unlabeled_).push_back(static_cast<int>(i));
    }
    if (labeled_.empty()) throw EmptyPartition("no labeled samples");
    if (unlabeled_.empty()) {
      unlabeled_.resize(m.size());
      std::iota(unlabeled_.begin(), unlabeled_.end(), 0);
      regularization_only_ = true;
    }
  }

  Batch batch(std::uint64_t b) {
    Batch out;
    const auto lq = static_cast<std::uint64_t>(spec_.labeled_quota);
    const auto uq = static_cast<std::uint64_t>(spec_.total - spec_.labeled_quota);
    for (std::uint64_t k = 0; k < lq; ++k) {
      out.samples.push_back(
          detail::cyclic_pick(labeled_, seed_, Stream::kLabeledOrder, b * lq + k, lcache_, lepoch_));
    }
    out.num_from_labeled_stream = static_cast<int>(lq);
    for (std::uint64_t k = 0; k < uq; ++k) {
      out.samples.push_back(detail::cyclic_pick(unlabeled_, seed_, Stream::kUnlabeledOrder,
                                                b * uq + k, ucache_, uepoch_));
    }
    return out;
  }

  Batch next() { return batch(cursor_++); }

  bool regularization_only() const { return regularization_only_; }
  const std::vector<int>& labeled() const { return labeled_; }
  const std::vector<int>& unlabeled() const { return unlabeled_; }

  // One epoch = one pass over the longer of the two streams.
  std::uint64_t batches_per_epoch() const {
    const auto lq = static_cast<std::uint64_t>(spec_.labeled_quota);
    const auto uq = static_cast<std::uint64_t>(std::max(1, spec_.total - spec_.labeled_quota));
    return std::max((labeled_.size() + lq - 1) / lq, (unlabeled_.size() + uq - 1) / uq);
  }

 private:
  std::vector<int> labeled_, unlabeled_, lcache_, ucache_;
  std::uint64_t seed_;
  BatchSpec spec_;
  std::uint64_t lepoch_ = ~0ull, uepoch_ = ~0ull, cursor_ = 0;
  bool regularization_only_ = false;
};

struct Membership {
  std::vector<int> labeled;    // B^l_t, positions within the batch
  std::vector<int> unlabeled;  // B^u_t, positions within the batch
};

inline Membership loss_membership(const Batch& batch, const AnnotationManifest& m, Task t,
                                  LossScope scope) {
  Membership out;
  for (std::size_t k = 0; k < batch.samples.size(); ++k) {
    const auto idx = static_cast<std::size_t>(batch.samples[k]);
    if (idx >= m.size()) throw MissingLabel("batch member outside the manifest");
    const bool has = m.samples[idx].has(t);
    if (has) out.labeled.push_back(static_cast<int>(k));
    if (!has || scope == LossScope::kAllSamples) out.unlabeled.push_back(static_cast<int>(k));
  }
  return out;
}

}  // namespace mtssl
