#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "sof/cloudhub/policy.hpp"
#include "sof/error.hpp"
#include "sof/facecore/embedder.hpp"
#include "sof/facecore/gallery.hpp"

namespace sof::edgenode {

using Timestamp = std::int64_t;  // milliseconds

/// Pair-verification threshold at FAR 0.02 on the reference validation split
/// (20 identities x 30 chips, seed 1, default training), rounded down.
inline constexpr double kDefaultAcceptThreshold = 0.99;

/// Versioned bundle distributed from hub to nodes. Immutable once published;
/// holders share it through `SnapshotPtr`.
struct ModelSnapshot {
  std::uint64_t version = 0;
  facecore::EmbedderParams params;
  facecore::IdentityGallery gallery;
  double accept_threshold = kDefaultAcceptThreshold;
  Timestamp created_at = 0;
  /// Device rules in force when the snapshot was cut; nodes fall back to their
  /// configured rule for devices not listed.
  std::map<std::string, cloudhub::DeviceRule> devices;

  /// Throws CorruptSnapshot on any invariant failure.
  void validate() const {
    if (version < 1) fail(ErrorCode::CorruptSnapshot, "version must be >= 1");
    if (!(accept_threshold > 0.0) || !std::isfinite(accept_threshold)) {
      fail(ErrorCode::CorruptSnapshot, "accept threshold must be positive");
    }
    try {
      params.validate();
    } catch (const Error& e) {
      fail(ErrorCode::CorruptSnapshot, e.what());
    }
    for (const auto& [id, entry] : gallery.entries()) {
      if (entry.centroid.dim() != static_cast<std::size_t>(params.dims.embedding)) {
        fail(ErrorCode::CorruptSnapshot, "centroid dimension of '" + id + "' does not match params");
      }
    }
    for (const auto& [id, rule] : devices) {
      if (rule.min_level < 0 || rule.min_level > cloudhub::kOwnerLevel) {
        fail(ErrorCode::CorruptSnapshot, "device '" + id + "' has an invalid min_level");
      }
    }
  }
};

using SnapshotPtr = std::shared_ptr<const ModelSnapshot>;

inline nlohmann::json to_json(const ModelSnapshot& s) {
  return {{"version", s.version},
          {"created_at", s.created_at},
          {"accept_threshold", s.accept_threshold},
          {"devices", cloudhub::devices_to_json(s.devices)},
          {"params", facecore::to_json(s.params)},
          {"gallery", facecore::to_json(s.gallery)}};
}

inline ModelSnapshot snapshot_from_json(const nlohmann::json& j) {
  ModelSnapshot s;
  try {
    s.version = j.at("version").get<std::uint64_t>();
    s.created_at = j.at("created_at").get<Timestamp>();
    s.accept_threshold = j.at("accept_threshold").get<double>();
    s.params = facecore::params_from_json(j.at("params"));
    s.gallery = facecore::gallery_from_json(j.at("gallery"));
    if (j.contains("devices")) s.devices = cloudhub::devices_from_json(j.at("devices"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptSnapshot, e.what());
  } catch (const Error& e) {
    fail(ErrorCode::CorruptSnapshot, e.what());
  }
  s.validate();
  return s;
}

}  // namespace sof::edgenode
