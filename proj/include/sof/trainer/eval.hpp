#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "sof/error.hpp"
#include "sof/facecore/embedder.hpp"
#include "sof/rng.hpp"
#include "sof/trainer/triplet.hpp"

namespace sof::trainer {

/// A verification pair reduced to its embedding distance.
struct ScoredPair {
  double distance = 0.0;
  bool same = false;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

/// Rates when "same" is predicted for distance <= threshold.
struct SweepEntry {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<RocPoint> roc_points;
  double auc = 0.0;
  double best_threshold = 0.0;
  double best_accuracy = 0.0;
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  /// Every candidate threshold (observed distances and midpoints), ascending.
  std::vector<SweepEntry> sweep;
};

inline constexpr int kVerificationFolds = 10;

namespace detail {

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const ScoredPair> pairs) {
  std::size_t same = 0;
  for (const auto& p : pairs) same += p.same ? 1 : 0;
  return {same, pairs.size() - same};
}

/// Distinct distances plus the midpoint between each consecutive pair.
inline std::vector<double> candidate_thresholds(std::span<const ScoredPair> pairs) {
  std::vector<double> d;
  d.reserve(pairs.size());
  for (const auto& p : pairs) d.push_back(p.distance);
  std::sort(d.begin(), d.end());
  d.erase(std::unique(d.begin(), d.end()), d.end());
  std::vector<double> out;
  out.reserve(d.size() * 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i > 0) out.push_back(0.5 * (d[i - 1] + d[i]));
    out.push_back(d[i]);
  }
  return out;
}

/// Evaluates every candidate threshold in one sorted sweep.
inline std::vector<SweepEntry> sweep(std::span<const ScoredPair> pairs) {
  const auto [n_same, n_diff] = class_counts(pairs);
  std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.distance < b.distance; });
  std::vector<SweepEntry> out;
  std::size_t i = 0, tp = 0, fp = 0;
  for (double t : candidate_thresholds(pairs)) {
    while (i < sorted.size() && sorted[i].distance <= t) {
      (sorted[i].same ? tp : fp) += 1;
      ++i;
    }
    SweepEntry e;
    e.threshold = t;
    e.tpr = n_same ? static_cast<double>(tp) / n_same : 0.0;
    e.fpr = n_diff ? static_cast<double>(fp) / n_diff : 0.0;
    e.accuracy = static_cast<double>(tp + (n_diff - fp)) / static_cast<double>(pairs.size());
    out.push_back(e);
  }
  return out;
}

/// Smallest candidate threshold with maximal accuracy.
inline std::pair<double, double> best_accuracy_threshold(std::span<const ScoredPair> pairs) {
  double best_t = 0.0, best_acc = -1.0;
  for (const auto& e : sweep(pairs)) {
    if (e.accuracy > best_acc) {
      best_acc = e.accuracy;
      best_t = e.threshold;
    }
  }
  return {best_t, best_acc};
}

}  // namespace detail

/// ROC through (0,0), one point per distinct distance, ending at (1,1).
inline std::vector<RocPoint> roc_curve(std::span<const ScoredPair> pairs) {
  std::vector<RocPoint> roc{{0.0, 0.0}};
  for (const auto& e : detail::sweep(pairs)) {
    if (e.fpr != roc.back().fpr || e.tpr != roc.back().tpr) roc.push_back({e.fpr, e.tpr});
  }
  return roc;
}

/// Trapezoid area under the ROC curve.
inline double roc_auc(std::span<const ScoredPair> pairs) {
  const auto [n_same, n_diff] = detail::class_counts(pairs);
  if (n_same == 0 || n_diff == 0) fail(ErrorCode::DegeneratePairs, "both same and different pairs are required");
  const auto roc = roc_curve(pairs);
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) * 0.5;
  }
  return area;
}

/// Full verification report: ROC, AUC, best threshold and 10-fold accuracy.
///
/// Pairs are cut into ten contiguous folds in the given order; each fold is
/// scored with the accuracy-maximizing threshold of the other nine.
inline EvalReport verification_report(std::span<const ScoredPair> pairs) {
  const auto [n_same, n_diff] = detail::class_counts(pairs);
  if (n_same == 0 || n_diff == 0) fail(ErrorCode::DegeneratePairs, "both same and different pairs are required");
  if (pairs.size() < static_cast<std::size_t>(10 * kVerificationFolds)) {
    fail(ErrorCode::DegeneratePairs, "need at least 10 pairs per fold");
  }
  for (const auto& p : pairs) {
    if (!std::isfinite(p.distance)) fail(ErrorCode::InvalidArgument, "non-finite pair distance");
  }
  EvalReport r;
  r.sweep = detail::sweep(pairs);
  r.roc_points = roc_curve(pairs);
  r.auc = roc_auc(pairs);
  std::tie(r.best_threshold, r.best_accuracy) = detail::best_accuracy_threshold(pairs);

  const std::size_t n = pairs.size();
  for (int k = 0; k < kVerificationFolds; ++k) {
    const std::size_t lo = n * k / kVerificationFolds, hi = n * (k + 1) / kVerificationFolds;
    std::vector<ScoredPair> train;
    train.reserve(n - (hi - lo));
    for (std::size_t i = 0; i < n; ++i) {
      if (i < lo || i >= hi) train.push_back(pairs[i]);
    }
    const double t = detail::best_accuracy_threshold(train).first;
    std::size_t correct = 0;
    for (std::size_t i = lo; i < hi; ++i) correct += ((pairs[i].distance <= t) == pairs[i].same) ? 1 : 0;
    r.fold_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(hi - lo));
  }
  double sum = 0.0;
  for (double a : r.fold_accuracies) sum += a;
  r.mean_accuracy = sum / kVerificationFolds;
  double var = 0.0;
  for (double a : r.fold_accuracies) var += (a - r.mean_accuracy) * (a - r.mean_accuracy);
  r.std_accuracy = std::sqrt(var / kVerificationFolds);
  return r;
}

struct ChipPair {
  const FaceChip* first = nullptr;
  const FaceChip* second = nullptr;
  bool same = false;
};

inline EvalReport evaluate_pairs(std::span<const ChipPair> pairs, const facecore::EmbedderParams& params) {
  std::vector<ScoredPair> scored;
  scored.reserve(pairs.size());
  for (const auto& p : pairs) {
    scored.push_back({facecore::squared_distance(facecore::embed(*p.first, params), facecore::embed(*p.second, params)),
                      p.same});
  }
  return verification_report(scored);
}

/// Largest swept threshold whose false-positive rate stays within `target_far`.
inline double calibrate_threshold(const EvalReport& report, double target_far) {
  if (!(target_far > 0.0 && target_far <= 1.0)) fail(ErrorCode::InvalidArgument, "target FAR must be in (0,1]");
  const SweepEntry* best = nullptr;
  for (const auto& e : report.sweep) {
    if (e.fpr <= target_far) best = &e;
  }
  if (best == nullptr) fail(ErrorCode::Unattainable, "no threshold meets the target false-accept rate");
  return best->threshold;
}

/// Index pairs for verification: every same-identity pair (capped at
/// `max_same`) and as many random different-identity pairs, shuffled together.
struct IndexPair {
  std::size_t first = 0;
  std::size_t second = 0;
  bool same = false;
};

inline std::vector<IndexPair> make_verification_pairs(std::span<const std::string> labels, std::uint64_t seed,
                                                      std::size_t max_same = 3000) {
  Rng rng(seed);
  std::vector<IndexPair> same;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      if (labels[i] == labels[j]) same.push_back({i, j, true});
    }
  }
  rng.shuffle(std::span(same));
  if (same.size() > max_same) same.resize(max_same);
  std::vector<IndexPair> out = same;
  const std::size_t want = same.size();
  std::size_t guard = 0;
  while (out.size() < 2 * want && guard++ < 100 * want + 1000) {
    const auto i = rng.index(labels.size()), j = rng.index(labels.size());
    if (labels[i] != labels[j]) out.push_back({std::min(i, j), std::max(i, j), false});
  }
  rng.shuffle(std::span(out));
  return out;
}

/// Verification report over pairs drawn from `set` with `pair_seed`; each chip is embedded once.
inline EvalReport evaluate_set(const LabeledChipSet& set, const facecore::EmbedderParams& params,
                               std::uint64_t pair_seed = 3) {
  std::vector<std::vector<double>> emb;
  emb.reserve(set.size());
  for (const auto& r : set) emb.push_back(facecore::forward(r.chip, params).output);
  const auto labels = labels_of(set);
  std::vector<ScoredPair> scored;
  for (const auto& p : make_verification_pairs(labels, pair_seed)) {
    scored.push_back({facecore::squared_distance(emb[p.first], emb[p.second]), p.same});
  }
  if (scored.empty()) fail(ErrorCode::InsufficientIdentities, "no verification pairs in set");
  return verification_report(scored);
}

}  // namespace sof::trainer
