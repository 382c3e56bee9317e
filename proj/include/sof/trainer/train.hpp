#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/error.hpp"
#include "sof/facecore/embedder.hpp"
#include "sof/facecore/gallery.hpp"
#include "sof/trainer/triplet.hpp"

namespace sof::trainer {

using facecore::ForwardPass;
using facecore::IdentityGallery;

/// A chip set reduced to pooled network inputs, computed once per training run.
struct PreparedSet {
  std::vector<std::vector<double>> inputs;
  std::vector<std::string> labels;

  static PreparedSet from(const LabeledChipSet& set, const facecore::EmbedderDims& dims) {
    PreparedSet p;
    p.inputs.reserve(set.size());
    p.labels.reserve(set.size());
    for (const auto& r : set) {
      p.inputs.push_back(facecore::pool(r.chip, dims));
      p.labels.push_back(r.person_id);
    }
    return p;
  }
};

struct LossAndGradient {
  double loss = 0.0;
  EmbedderParams gradient;
};

/// Mean triplet loss over `triplets` and its exact gradient.
///
/// Triplet indices address `inputs`. Each distinct chip is forwarded once;
/// the loss gradient w.r.t. its normalized embedding is pulled back through
/// the normalization Jacobian (I/|v| - v v^T/|v|^3), the output layer, tanh
/// and the hidden layer. With `skip_first_layer` the w1/b1 gradient is left at zero.
inline LossAndGradient loss_and_gradient(const EmbedderParams& params, std::span<const std::vector<double>> inputs,
                                         std::span<const Triplet> triplets, double margin,
                                         bool skip_first_layer = false) {
  const auto& d = params.dims;
  LossAndGradient out;
  out.gradient = EmbedderParams::zeros(d);
  if (triplets.empty()) return out;

  std::map<std::size_t, ForwardPass> passes;
  for (const auto& t : triplets) {
    for (std::size_t i : {t.anchor, t.positive, t.negative}) {
      if (!passes.contains(i)) passes.emplace(i, facecore::forward_pooled(inputs[i], params));
    }
  }
  std::map<std::size_t, std::vector<double>> grad_e;
  for (const auto& [i, f] : passes) grad_e[i].assign(d.embedding, 0.0);

  const double scale = 1.0 / static_cast<double>(triplets.size());
  double total = 0.0;
  for (const auto& t : triplets) {
    const auto& a = passes.at(t.anchor).output;
    const auto& p = passes.at(t.positive).output;
    const auto& n = passes.at(t.negative).output;
    const double d_ap = facecore::squared_distance(a, p);
    const double d_an = facecore::squared_distance(a, n);
    const double l = d_ap - d_an + margin;
    if (l <= 0.0) continue;
    total += l;
    auto& ga = grad_e[t.anchor];
    auto& gp = grad_e[t.positive];
    auto& gn = grad_e[t.negative];
    for (int k = 0; k < d.embedding; ++k) {
      ga[k] += scale * 2.0 * (n[k] - p[k]);
      gp[k] += scale * -2.0 * (a[k] - p[k]);
      gn[k] += scale * 2.0 * (a[k] - n[k]);
    }
  }
  out.loss = total * scale;

  auto& g = out.gradient;
  std::vector<double> g_raw(d.embedding), g_hidden(d.hidden);
  const std::size_t n_in = static_cast<std::size_t>(d.input_size());
  for (const auto& [i, f] : passes) {
    const auto& ge = grad_e[i];
    double dot = 0.0;
    for (int k = 0; k < d.embedding; ++k) dot += f.output[k] * ge[k];
    bool any = false;
    for (int k = 0; k < d.embedding; ++k) {
      g_raw[k] = (ge[k] - f.output[k] * dot) / f.norm;
      any = any || g_raw[k] != 0.0;
    }
    if (!any) continue;
    std::fill(g_hidden.begin(), g_hidden.end(), 0.0);
    for (int k = 0; k < d.embedding; ++k) {
      const double gk = g_raw[k];
      g.b2[k] += gk;
      double* gw = g.w2.data() + static_cast<std::size_t>(k) * d.hidden;
      const double* w = params.w2.data() + static_cast<std::size_t>(k) * d.hidden;
      for (int h = 0; h < d.hidden; ++h) {
        gw[h] += gk * f.hidden[h];
        g_hidden[h] += gk * w[h];
      }
    }
    if (skip_first_layer) continue;
    for (int h = 0; h < d.hidden; ++h) {
      const double gz = g_hidden[h] * (1.0 - f.hidden[h] * f.hidden[h]);
      g.b1[h] += gz;
      double* gw = g.w1.data() + static_cast<std::size_t>(h) * n_in;
      for (std::size_t x = 0; x < n_in; ++x) gw[x] += gz * f.input[x];
    }
  }
  return out;
}

inline void check_finite(const EmbedderParams& g) {
  for (const auto* t : {&g.w1, &g.b1, &g.w2, &g.b2}) {
    for (double v : *t) {
      if (!std::isfinite(v)) fail(ErrorCode::NonFiniteGradient, "non-finite gradient; epoch aborted");
    }
  }
}

inline void sgd_step(EmbedderParams& params, const EmbedderParams& grad, double lr, bool freeze_first_layer) {
  auto step = [lr](std::vector<double>& w, const std::vector<double>& gw) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
  };
  if (!freeze_first_layer) {
    step(params.w1, grad.w1);
    step(params.b1, grad.b1);
  }
  step(params.w2, grad.w2);
  step(params.b2, grad.b2);
}

struct EpochStats {
  int epoch = 0;
  double first_batch_loss = 0.0;
  double last_batch_loss = 0.0;
  double mean_loss = 0.0;
  std::size_t triplets = 0;
};

struct EpochResult {
  EmbedderParams params;
  double mean_loss = 0.0;
  EpochStats stats;
};

/// One pass of mini-batch SGD with online mining inside each batch.
///
/// Each batch is embedded with the current weights, triplets are mined, and
/// one step is taken on the batch-mean loss. The reported loss is the mean of
/// the pre-step batch losses over batches that produced triplets.
inline EpochResult train_epoch(const PreparedSet& data, EmbedderParams params, const TrainConfig& cfg, int epoch = 0) {
  cfg.validate();
  params.validate();
  require_minable(data.labels);
  EpochResult r;
  r.stats.epoch = epoch;
  double sum = 0.0;
  int counted = 0;
  for (const auto& batch : make_batches(data.labels, cfg, epoch)) {
    std::vector<std::vector<double>> emb;
    std::vector<Triplet> triplets;
    LossAndGradient lg;
    try {
      emb.reserve(batch.size());
      for (std::size_t i : batch) emb.push_back(facecore::forward_pooled(data.inputs[i], params).output);
      triplets = mine_batch(batch, data.labels, emb, cfg.mining, cfg.margin);
      if (triplets.empty()) continue;
      lg = loss_and_gradient(params, data.inputs, triplets, cfg.margin, cfg.freeze_first_layer);
    } catch (const Error& e) {
      // Inputs and starting weights were finite, so this is an overflow caused by a previous step.
      if (e.code() != ErrorCode::InvalidArgument) throw;
      fail(ErrorCode::NonFiniteGradient, std::string("epoch aborted: ") + e.what());
    }
    check_finite(lg.gradient);
    if (counted == 0) r.stats.first_batch_loss = lg.loss;
    r.stats.last_batch_loss = lg.loss;
    r.stats.triplets += triplets.size();
    sum += lg.loss;
    ++counted;
    if (cfg.learning_rate > 0.0) sgd_step(params, lg.gradient, cfg.learning_rate, cfg.freeze_first_layer);
  }
  // Batch-all mining coming up empty means the batching never mixes identities;
  // an empty semi-hard epoch just means nothing sits inside the margin band.
  if (counted == 0 && cfg.mining == MiningMode::All) {
    fail(ErrorCode::InsufficientIdentities, "no batch mixes two identities; increase batch_size");
  }
  r.mean_loss = counted > 0 ? sum / counted : 0.0;
  r.stats.mean_loss = r.mean_loss;
  r.params = std::move(params);
  return r;
}

inline EpochResult train_epoch(const LabeledChipSet& set, EmbedderParams params, const TrainConfig& cfg,
                               int epoch = 0) {
  return train_epoch(PreparedSet::from(set, params.dims), std::move(params), cfg, epoch);
}

struct TrainResult {
  EmbedderParams params;
  std::vector<EpochStats> epochs;
};

inline TrainResult train(const LabeledChipSet& set, EmbedderParams params, const TrainConfig& cfg) {
  cfg.validate();
  const PreparedSet data = PreparedSet::from(set, params.dims);
  TrainResult out;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto r = train_epoch(data, std::move(params), cfg, e);
    params = std::move(r.params);
    out.epochs.push_back(r.stats);
  }
  out.params = std::move(params);
  return out;
}

// ---------------------------------------------------------------------------
// Incremental learning.

/// Per-person display name and level, applied to identities new to the gallery.
using PersonDirectory = std::map<std::string, facecore::NewPerson>;

/// Rebuilds every centroid from scratch under `params`.
inline IdentityGallery build_gallery(const EmbedderParams& params, const LabeledChipSet& records,
                                     const IdentityGallery& previous, const PersonDirectory& directory = {}) {
  std::map<std::string, std::vector<const LabeledRecord*>> by_id;
  for (const auto& r : records) by_id[r.person_id].push_back(&r);
  IdentityGallery g;
  for (const auto& [id, entry] : previous.entries()) {
    if (!by_id.contains(id)) g.put(id, entry);
  }
  for (const auto& [id, recs] : by_id) {
    facecore::GalleryEntry e;
    std::vector<double> mean(params.dims.embedding, 0.0);
    for (const auto* r : recs) {
      const auto f = facecore::forward(r->chip, params);
      for (int k = 0; k < params.dims.embedding; ++k) mean[k] += f.output[k];
    }
    for (double& v : mean) v /= static_cast<double>(recs.size());
    e.centroid = facecore::EmbeddingVector::normalized(mean);
    e.mean = std::move(mean);
    e.sample_count = static_cast<int>(recs.size());
    if (previous.contains(id)) {
      const auto& old = previous.at(id);
      e.permission_level = old.permission_level;
      e.display_name = old.display_name;
      e.provenance = old.provenance;
    } else if (auto it = directory.find(id); it != directory.end()) {
      e.permission_level = it->second.permission_level;
      e.display_name = it->second.display_name.empty() ? id : it->second.display_name;
      e.provenance = recs.front()->source;
    } else {
      e.display_name = id;
      e.provenance = recs.front()->source;
    }
    g.put(id, std::move(e));
  }
  return g;
}

struct IncrementalResult {
  EmbedderParams params;
  IdentityGallery gallery;
  bool fine_tuned = false;
  std::vector<EpochStats> epochs;
};

/// Fine-tunes `old_params` on stored enrollments plus `new_data`, then
/// recomputes every centroid.
///
/// `enrolled` holds the chips already on record for existing identities.
/// Fine-tuning is skipped when the combined data cannot yield a triplet
/// (fewer than two identities) or `cfg.epochs == 0`; the gallery is still rebuilt.
inline IncrementalResult incremental_update(const EmbedderParams& old_params, const IdentityGallery& old_gallery,
                                            const LabeledChipSet& enrolled, const LabeledChipSet& new_data,
                                            const TrainConfig& cfg, const PersonDirectory& directory = {}) {
  cfg.validate();
  if (new_data.empty()) fail(ErrorCode::InsufficientIdentities, "incremental update without new data");
  LabeledChipSet all = enrolled;
  all.insert(all.end(), new_data.begin(), new_data.end());

  IncrementalResult out;
  out.params = old_params;
  bool minable = true;
  try {
    require_minable(labels_of(all));
  } catch (const Error&) {
    minable = false;
  }
  if (minable && cfg.epochs > 0) {
    auto r = train(all, old_params, cfg);
    out.params = std::move(r.params);
    out.epochs = std::move(r.epochs);
    out.fine_tuned = true;
  }
  out.gallery = build_gallery(out.params, all, old_gallery, directory);
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"margin", c.margin},         {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"mining", to_string(c.mining)},    {"seed", c.seed},
          {"freeze_first_layer", c.freeze_first_layer}};
}

inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  base.margin = j.value("margin", base.margin);
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.epochs = j.value("epochs", base.epochs);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.mining = mining_from_string(j.value("mining", to_string(base.mining)));
  base.seed = j.value("seed", base.seed);
  base.freeze_first_layer = j.value("freeze_first_layer", base.freeze_first_layer);
  base.validate();
  return base;
}

/// Audit record written beside each produced model.
inline nlohmann::json training_manifest(const TrainConfig& cfg, std::span<const EpochStats> epochs,
                                        std::uint64_t model_version) {
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& e : epochs) {
    losses.push_back({{"epoch", e.epoch},
                      {"initial_loss", e.first_batch_loss},
                      {"final_loss", e.last_batch_loss},
                      {"mean_loss", e.mean_loss},
                      {"triplets", e.triplets}});
  }
  return {{"config", to_json(cfg)}, {"seed", cfg.seed}, {"epochs", losses}, {"model_version", model_version}};
}

}  // namespace sof::trainer
