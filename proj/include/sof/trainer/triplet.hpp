#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sof/error.hpp"
#include "sof/facecore/embedder.hpp"
#include "sof/facecore/gallery.hpp"
#include "sof/image.hpp"
#include "sof/rng.hpp"

namespace sof::trainer {

using facecore::EmbedderParams;
using facecore::EmbeddingVector;
using facecore::Provenance;

struct LabeledRecord {
  FaceChip chip;
  std::string person_id;
  Provenance source = Provenance::Enrollment;
};

using LabeledChipSet = std::vector<LabeledRecord>;

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  bool operator==(const Triplet&) const = default;
};

enum class MiningMode { All, SemiHard };

struct TrainConfig {
  double margin = 0.2;
  double learning_rate = 0.05;
  int epochs = 30;
  int batch_size = 32;
  MiningMode mining = MiningMode::All;
  std::uint64_t seed = 1;
  bool freeze_first_layer = false;

  /// Epochs may be zero: the incremental path then only re-enrolls.
  void validate() const {
    if (!(margin > 0.0)) fail(ErrorCode::InvalidArgument, "margin must be positive");
    if (!(learning_rate >= 0.0)) fail(ErrorCode::InvalidArgument, "learning rate must be non-negative");
    if (epochs < 0) fail(ErrorCode::InvalidArgument, "epochs must be >= 0");
    if (batch_size < 2) fail(ErrorCode::InvalidArgument, "batch size must be >= 2");
  }
};

inline std::string to_string(MiningMode m) { return m == MiningMode::All ? "all" : "semi-hard"; }

inline MiningMode mining_from_string(const std::string& s) {
  if (s == "all") return MiningMode::All;
  if (s == "semi-hard" || s == "semihard") return MiningMode::SemiHard;
  fail(ErrorCode::InvalidArgument, "unknown mining mode '" + s + "'");
}

/// max(0, |a-p|^2 - |a-n|^2 + margin)
inline double triplet_loss(const EmbeddingVector& a, const EmbeddingVector& p, const EmbeddingVector& n,
                           double margin) {
  return std::max(0.0, facecore::squared_distance(a, p) - facecore::squared_distance(a, n) + margin);
}

inline double triplet_loss_from_distances(double d_ap, double d_an, double margin) {
  return std::max(0.0, d_ap - d_an + margin);
}

/// Needs two identities and at least one identity contributing a positive pair.
inline void require_minable(std::span<const std::string> labels) {
  std::map<std::string, int> counts;
  for (const auto& l : labels) ++counts[l];
  const bool has_pair = std::any_of(counts.begin(), counts.end(), [](const auto& kv) { return kv.second >= 2; });
  if (counts.size() < 2 || !has_pair) {
    fail(ErrorCode::InsufficientIdentities, "triplet mining needs >= 2 identities and one with >= 2 chips");
  }
}

inline constexpr int kChipsPerIdentityGroup = 4;

/// Identity-balanced batches for one epoch.
///
/// Each identity's chips are shuffled and cut into groups of four; the groups
/// are shuffled and packed in order into batches of `batch_size` chips, so
/// every batch holds several positives per identity.
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const std::string> labels,
                                                          const TrainConfig& cfg, int epoch) {
  std::map<std::string, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(i);
  Rng rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch));
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [id, idx] : by_id) {
    rng.shuffle(std::span(idx));
    for (std::size_t s = 0; s < idx.size(); s += kChipsPerIdentityGroup) {
      const auto e = std::min(idx.size(), s + kChipsPerIdentityGroup);
      groups.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s), idx.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  rng.shuffle(std::span(groups));
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  for (const auto& g : groups) {
    if (!current.empty() && current.size() + g.size() > static_cast<std::size_t>(cfg.batch_size)) {
      batches.push_back(std::move(current));
      current.clear();
    }
    current.insert(current.end(), g.begin(), g.end());
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

/// Triplets inside one batch. `embeddings[k]` belongs to `batch[k]`; the
/// returned indices are the global ones from `batch`.
inline std::vector<Triplet> mine_batch(std::span<const std::size_t> batch, std::span<const std::string> labels,
                                       std::span<const std::vector<double>> embeddings, MiningMode mode,
                                       double margin) {
  std::vector<Triplet> out;
  const std::size_t n = batch.size();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[batch[p]] != labels[batch[a]]) continue;
      const double d_ap = mode == MiningMode::SemiHard ? facecore::squared_distance(embeddings[a], embeddings[p]) : 0.0;
      for (std::size_t q = 0; q < n; ++q) {
        if (labels[batch[q]] == labels[batch[a]]) continue;
        if (mode == MiningMode::SemiHard) {
          const double d_an = facecore::squared_distance(embeddings[a], embeddings[q]);
          if (!(d_an > d_ap && d_an < d_ap + margin)) continue;
        }
        out.push_back({batch[a], batch[p], batch[q]});
      }
    }
  }
  return out;
}

inline std::vector<std::string> labels_of(const LabeledChipSet& set) {
  std::vector<std::string> out;
  out.reserve(set.size());
  for (const auto& r : set) out.push_back(r.person_id);
  return out;
}

/// Triplets for the first epoch's batches, mined with `params` held fixed.
inline std::vector<Triplet> mine_triplets(const LabeledChipSet& set, const EmbedderParams& params,
                                          const TrainConfig& cfg) {
  cfg.validate();
  const auto labels = labels_of(set);
  require_minable(labels);
  std::vector<Triplet> out;
  for (const auto& batch : make_batches(labels, cfg, 0)) {
    std::vector<std::vector<double>> emb;
    emb.reserve(batch.size());
    for (std::size_t i : batch) emb.push_back(facecore::forward(set[i].chip, params).output);
    auto t = mine_batch(batch, labels, emb, cfg.mining, cfg.margin);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

}  // namespace sof::trainer
