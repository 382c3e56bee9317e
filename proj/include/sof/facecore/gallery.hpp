#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/error.hpp"
#include "sof/facecore/embedder.hpp"

namespace sof::facecore {

enum class Provenance { Social, Escalation, Enrollment };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Social: return "social";
    case Provenance::Escalation: return "escalation";
    case Provenance::Enrollment: return "enrollment";
  }
  return "enrollment";
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "social") return Provenance::Social;
  if (s == "escalation") return Provenance::Escalation;
  if (s == "enrollment") return Provenance::Enrollment;
  fail(ErrorCode::ParseError, "unknown provenance '" + s + "'");
}

inline constexpr int kMinPermissionLevel = 0;
inline constexpr int kMaxPermissionLevel = 3;

struct GalleryEntry {
  EmbeddingVector centroid;
  /// Unnormalized mean of every embedding folded in; the centroid is its direction.
  std::vector<double> mean;
  int sample_count = 1;
  int permission_level = 0;
  std::string display_name;
  Provenance provenance = Provenance::Enrollment;

  bool operator==(const GalleryEntry&) const = default;
};

/// Identity record for someone not yet in the gallery.
struct NewPerson {
  std::string display_name;
  int permission_level = 0;
  Provenance provenance = Provenance::Enrollment;
};

class IdentityGallery {
 public:
  using Entries = std::map<std::string, GalleryEntry>;

  [[nodiscard]] const Entries& entries() const noexcept { return entries_; }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool contains(const std::string& id) const { return entries_.contains(id); }

  [[nodiscard]] const GalleryEntry& at(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) fail(ErrorCode::UnknownPerson, id);
    return it->second;
  }

  /// Inserts or replaces one entry after checking its invariants.
  void put(const std::string& id, GalleryEntry entry) {
    if (id.empty()) fail(ErrorCode::InvalidArgument, "empty person id");
    if (entry.sample_count < 1) fail(ErrorCode::InvalidArgument, "sample_count must be >= 1");
    if (entry.permission_level < kMinPermissionLevel || entry.permission_level > kMaxPermissionLevel) {
      fail(ErrorCode::InvalidArgument, "permission level out of range");
    }
    if (entry.centroid.dim() == 0) fail(ErrorCode::InvalidArgument, "empty centroid");
    if (entry.mean.empty()) entry.mean.assign(entry.centroid.values().begin(), entry.centroid.values().end());
    entries_[id] = std::move(entry);
  }

  void set_permission_level(const std::string& id, int level) {
    auto it = entries_.find(id);
    if (it == entries_.end()) fail(ErrorCode::UnknownPerson, id);
    if (level < kMinPermissionLevel || level > kMaxPermissionLevel) {
      fail(ErrorCode::InvalidArgument, "permission level out of range");
    }
    it->second.permission_level = level;
  }

  bool operator==(const IdentityGallery&) const = default;

 private:
  Entries entries_;
};

struct ClassifyResult {
  std::optional<std::string> label;  // nullopt = UNKNOWN
  double distance = 0.0;             // squared Euclidean to nearest centroid
  double confidence = 0.0;

  [[nodiscard]] bool known() const noexcept { return label.has_value(); }
};

/// Open-set nearest-centroid classification.
///
/// Ties go to the lexicographically smallest id (the map iterates in order and
/// only a strictly smaller distance replaces the current best).
inline ClassifyResult classify(const EmbeddingVector& probe, const IdentityGallery& gallery, double accept_threshold) {
  if (!(accept_threshold > 0.0)) fail(ErrorCode::InvalidArgument, "accept threshold must be positive");
  ClassifyResult r;
  const std::string* best = nullptr;
  double best_d = 0.0;
  for (const auto& [id, entry] : gallery.entries()) {
    const double d = squared_distance(probe, entry.centroid);
    if (best == nullptr || d < best_d) {
      best = &id;
      best_d = d;
    }
  }
  if (best == nullptr) return r;
  r.distance = best_d;
  if (best_d > accept_threshold) return r;
  r.label = *best;
  r.confidence = std::max(0.0, 1.0 - best_d / accept_threshold);
  return r;
}

/// Folds one embedding into a person's centroid, creating the entry when
/// `create` is supplied and the id is new. Returns the updated gallery.
inline IdentityGallery update_centroid(IdentityGallery gallery, const std::string& person_id,
                                       const EmbeddingVector& embedding,
                                       const std::optional<NewPerson>& create = std::nullopt) {
  if (!gallery.contains(person_id)) {
    if (!create) fail(ErrorCode::UnknownPerson, person_id);
    GalleryEntry e;
    e.centroid = embedding;
    e.mean.assign(embedding.values().begin(), embedding.values().end());
    e.sample_count = 1;
    e.permission_level = create->permission_level;
    e.display_name = create->display_name.empty() ? person_id : create->display_name;
    e.provenance = create->provenance;
    gallery.put(person_id, std::move(e));
    return gallery;
  }
  GalleryEntry e = gallery.at(person_id);
  if (embedding.dim() != e.mean.size()) fail(ErrorCode::ShapeMismatch, "embedding dimension mismatch");
  const double n = e.sample_count;
  for (std::size_t i = 0; i < e.mean.size(); ++i) e.mean[i] = (e.mean[i] * n + embedding[i]) / (n + 1.0);
  e.centroid = EmbeddingVector::normalized(e.mean);
  e.sample_count += 1;
  gallery.put(person_id, std::move(e));
  return gallery;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const IdentityGallery& g) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [id, e] : g.entries()) {
    out[id] = {{"centroid", std::vector<double>(e.centroid.values().begin(), e.centroid.values().end())},
               {"mean", e.mean},
               {"sample_count", e.sample_count},
               {"permission_level", e.permission_level},
               {"display_name", e.display_name},
               {"provenance", to_string(e.provenance)}};
  }
  return out;
}

inline IdentityGallery gallery_from_json(const nlohmann::json& j) {
  IdentityGallery g;
  try {
    for (const auto& [id, v] : j.items()) {
      GalleryEntry e;
      e.centroid = EmbeddingVector::from_unit(v.at("centroid").get<std::vector<double>>());
      e.mean = v.at("mean").get<std::vector<double>>();
      e.sample_count = v.at("sample_count").get<int>();
      e.permission_level = v.at("permission_level").get<int>();
      e.display_name = v.at("display_name").get<std::string>();
      e.provenance = provenance_from_string(v.at("provenance").get<std::string>());
      g.put(id, std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("gallery: ") + e.what());
  }
  return g;
}

}  // namespace sof::facecore
