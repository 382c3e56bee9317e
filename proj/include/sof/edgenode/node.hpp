#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/cloudhub/policy.hpp"
#include "sof/codec.hpp"
#include "sof/edgenode/snapshot.hpp"
#include "sof/error.hpp"
#include "sof/facecore/alignment.hpp"
#include "sof/facecore/embedder.hpp"
#include "sof/facecore/gallery.hpp"
#include "sof/image.hpp"

namespace sof::edgenode {

struct FrameEvent {
  Timestamp timestamp = 0;
  Image image;
  std::optional<facecore::Landmarks> landmarks;  // nullopt: no face upstream
};

enum class Outcome { Granted, DeniedUnknown, DeniedPolicy };

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Granted: return "GRANTED";
    case Outcome::DeniedUnknown: return "DENIED_UNKNOWN";
    case Outcome::DeniedPolicy: return "DENIED_POLICY";
  }
  return "DENIED_UNKNOWN";
}

inline Outcome outcome_from_string(const std::string& s) {
  if (s == "GRANTED") return Outcome::Granted;
  if (s == "DENIED_UNKNOWN") return Outcome::DeniedUnknown;
  if (s == "DENIED_POLICY") return Outcome::DeniedPolicy;
  fail(ErrorCode::ParseError, "unknown outcome '" + s + "'");
}

struct AccessDecision {
  Outcome outcome = Outcome::DeniedUnknown;
  std::optional<std::string> person;  // nullopt = UNKNOWN
  double confidence = 0.0;
  double distance = 0.0;
  std::uint64_t model_version = 0;
  std::string device_id;
  std::string node_id;
  Timestamp timestamp = 0;
  bool operator==(const AccessDecision&) const = default;
};

struct PhotoSeries {
  std::string series_id;
  std::string node_id;
  std::vector<FaceChip> chips;
  std::vector<Timestamp> chip_times;
  Timestamp first_seen = 0;
  bool operator==(const PhotoSeries&) const = default;
};

inline constexpr std::size_t kMinSeriesChips = 3;
inline constexpr std::size_t kMaxSeriesChips = 10;

inline void validate(const PhotoSeries& s) {
  if (s.series_id.empty()) fail(ErrorCode::InvalidArgument, "series id missing");
  if (s.chips.size() < kMinSeriesChips || s.chips.size() > kMaxSeriesChips) {
    fail(ErrorCode::InvalidArgument, "photo series must hold 3 to 10 chips");
  }
  for (const auto& c : s.chips) {
    if (c.size() <= 0) fail(ErrorCode::InvalidArgument, "empty chip in series");
  }
}

struct Escalation {
  PhotoSeries series;
};

struct Diagnostic {
  ErrorCode code = ErrorCode::InvalidArgument;
  std::string message;
  Timestamp timestamp = 0;
};

/// One line of the node's append-only decision log.
struct LogLine {
  std::string json;
};

using Effect = std::variant<AccessDecision, LogLine, Escalation, Diagnostic>;
using Effects = std::vector<Effect>;

struct NodeConfig {
  std::string node_id = "node-1";
  std::string device_id = "front_door";
  cloudhub::DeviceRule device{"Front door", 0, false};
  Timestamp debounce_ms = 5000;
  std::size_t series_min = kMinSeriesChips;
  std::size_t series_max = kMaxSeriesChips;
  Timestamp series_timeout_ms = 10000;
  Timestamp min_series_span_ms = 1000;
  Timestamp chip_interval_ms = 250;
  /// Recognition must beat this confidence to be acted on.
  double grant_floor = 0.0;
};

enum class Mode { Idle, Capturing };

struct NodeState {
  NodeConfig config;
  SnapshotPtr snapshot;
  Mode mode = Mode::Idle;
  std::vector<FaceChip> series_chips;
  std::vector<Timestamp> series_times;
  Timestamp series_first_seen = 0;
  std::optional<Timestamp> last_unknown_ts;
  std::map<std::string, Timestamp> last_decision_ts;
  std::optional<Timestamp> last_ts;
  std::uint64_t series_counter = 0;

  [[nodiscard]] std::uint64_t model_version() const noexcept { return snapshot ? snapshot->version : 0; }
};

using Transition = std::pair<NodeState, Effects>;

inline NodeState make_node(NodeConfig config, SnapshotPtr bootstrap) {
  if (!bootstrap) fail(ErrorCode::InvalidArgument, "node requires a bootstrap snapshot");
  bootstrap->validate();
  NodeState s;
  s.config = std::move(config);
  s.snapshot = std::move(bootstrap);
  return s;
}

inline nlohmann::json to_json(const AccessDecision& d) {
  return {{"outcome", to_string(d.outcome)},
          {"person", d.person ? nlohmann::json(*d.person) : nlohmann::json(nullptr)},
          {"confidence", d.confidence},
          {"distance", d.distance},
          {"model_version", d.model_version},
          {"device_id", d.device_id},
          {"node_id", d.node_id},
          {"ts", d.timestamp}};
}

inline AccessDecision decision_from_json(const nlohmann::json& j) {
  AccessDecision d;
  try {
    d.outcome = outcome_from_string(j.at("outcome").get<std::string>());
    if (!j.at("person").is_null()) d.person = j.at("person").get<std::string>();
    d.confidence = j.at("confidence").get<double>();
    d.distance = j.value("distance", 0.0);
    d.model_version = j.at("model_version").get<std::uint64_t>();
    d.device_id = j.at("device_id").get<std::string>();
    d.node_id = j.value("node_id", "");
    d.timestamp = j.at("ts").get<Timestamp>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("decision: ") + e.what());
  }
  return d;
}

inline nlohmann::json to_json(const PhotoSeries& s) {
  nlohmann::json chips = nlohmann::json::array();
  for (const auto& c : s.chips) chips.push_back(chip_to_json(c));
  return {{"series_id", s.series_id}, {"node_id", s.node_id}, {"first_seen", s.first_seen},
          {"chip_times", s.chip_times}, {"chips", chips}};
}

inline PhotoSeries series_from_json(const nlohmann::json& j) {
  PhotoSeries s;
  try {
    s.series_id = j.at("series_id").get<std::string>();
    s.node_id = j.at("node_id").get<std::string>();
    s.first_seen = j.at("first_seen").get<Timestamp>();
    s.chip_times = j.value("chip_times", std::vector<Timestamp>{});
    for (const auto& c : j.at("chips")) s.chips.push_back(chip_from_json(c));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("series: ") + e.what());
  }
  return s;
}

/// The decision-log record: {ts, outcome, person, confidence, model_version}.
inline LogLine log_line(const AccessDecision& d) {
  nlohmann::json j = {{"ts", d.timestamp},
                      {"outcome", to_string(d.outcome)},
                      {"person", d.person ? nlohmann::json(*d.person) : nlohmann::json(nullptr)},
                      {"confidence", d.confidence},
                      {"model_version", d.model_version}};
  return {j.dump()};
}

/// Closes the current capture: escalates a complete series or discards a short one.
inline Transition finalize_series(NodeState s, Timestamp now) {
  Effects fx;
  if (s.mode != Mode::Capturing) return {std::move(s), std::move(fx)};
  const std::size_t n = s.series_chips.size();
  const Timestamp span = n > 0 ? s.series_times.back() - s.series_times.front() : 0;
  if (n >= s.config.series_min && span >= s.config.min_series_span_ms) {
    PhotoSeries series;
    // first_seen keeps ids distinct across node restarts, where the counter starts over.
    series.series_id = s.config.node_id + "-" + std::to_string(s.series_first_seen) + "-" +
                       std::to_string(++s.series_counter);
    series.node_id = s.config.node_id;
    series.chips = std::move(s.series_chips);
    series.chip_times = std::move(s.series_times);
    series.first_seen = s.series_first_seen;
    AccessDecision d;
    d.outcome = Outcome::DeniedUnknown;
    d.model_version = s.model_version();
    d.device_id = s.config.device_id;
    d.node_id = s.config.node_id;
    d.timestamp = now;
    fx.emplace_back(Escalation{std::move(series)});
    fx.emplace_back(d);
    fx.emplace_back(log_line(d));
  } else {
    fx.emplace_back(Diagnostic{ErrorCode::SeriesTooSmall,
                               "series of " + std::to_string(n) + " chips over " + std::to_string(span) +
                                   " ms discarded",
                               now});
  }
  s.series_chips.clear();
  s.series_times.clear();
  s.mode = Mode::Idle;
  return {std::move(s), std::move(fx)};
}

/// Advances the node clock: a capture ends when its visit has gone quiet for
/// longer than the debounce window or the series timeout has elapsed.
inline Transition tick(NodeState s, Timestamp now) {
  if (s.mode == Mode::Capturing) {
    const bool visit_over = s.last_unknown_ts && now - *s.last_unknown_ts > s.config.debounce_ms;
    const bool timed_out = now - s.series_first_seen >= s.config.series_timeout_ms;
    if (visit_over || timed_out) return finalize_series(std::move(s), now);
  }
  return {std::move(s), {}};
}

inline void append(Effects& into, Effects&& from) {
  for (auto& e : from) into.push_back(std::move(e));
}

/// Recognize one frame under the current snapshot.
inline Transition handle_frame(NodeState s, const FrameEvent& ev) {
  Effects fx;
  if (s.last_ts && ev.timestamp <= *s.last_ts) {
    fx.emplace_back(Diagnostic{ErrorCode::InvalidArgument, "non-increasing frame timestamp dropped", ev.timestamp});
    return {std::move(s), std::move(fx)};
  }
  s.last_ts = ev.timestamp;
  {
    auto [next, tick_fx] = tick(std::move(s), ev.timestamp);
    s = std::move(next);
    append(fx, std::move(tick_fx));
  }
  if (!ev.landmarks) return {std::move(s), std::move(fx)};

  const ModelSnapshot& snap = *s.snapshot;
  FaceChip chip;
  facecore::ClassifyResult result;
  try {
    chip = quantize(facecore::align_face(ev.image, *ev.landmarks, snap.params.dims.chip_size));
    result = facecore::classify(facecore::embed(chip, snap.params), snap.gallery, snap.accept_threshold);
  } catch (const Error& e) {
    fx.emplace_back(Diagnostic{e.code(), e.what(), ev.timestamp});
    return {std::move(s), std::move(fx)};
  }

  if (result.known() && result.confidence > s.config.grant_floor) {
    const std::string& id = *result.label;
    if (auto it = s.last_decision_ts.find(id); it != s.last_decision_ts.end() &&
                                               ev.timestamp - it->second < s.config.debounce_ms) {
      return {std::move(s), std::move(fx)};
    }
    s.last_decision_ts[id] = ev.timestamp;
    const int level = snap.gallery.at(id).permission_level;
    const auto rule_it = snap.devices.find(s.config.device_id);
    const auto& rule = rule_it != snap.devices.end() ? rule_it->second : s.config.device;
    AccessDecision d;
    d.outcome = cloudhub::evaluate_rule(level, rule) == cloudhub::AccessVerdict::Grant
                    ? Outcome::Granted
                    : Outcome::DeniedPolicy;
    d.person = id;
    d.confidence = result.confidence;
    d.distance = result.distance;
    d.model_version = snap.version;
    d.device_id = s.config.device_id;
    d.node_id = s.config.node_id;
    d.timestamp = ev.timestamp;
    fx.emplace_back(d);
    fx.emplace_back(log_line(d));
    return {std::move(s), std::move(fx)};
  }

  // Unknown face, or recognized without enough confidence.
  const bool same_visit = s.last_unknown_ts && ev.timestamp - *s.last_unknown_ts <= s.config.debounce_ms;
  s.last_unknown_ts = ev.timestamp;
  if (s.mode == Mode::Idle) {
    if (same_visit) return {std::move(s), std::move(fx)};  // visit already escalated
    s.mode = Mode::Capturing;
    s.series_first_seen = ev.timestamp;
    s.series_chips = {std::move(chip)};
    s.series_times = {ev.timestamp};
    return {std::move(s), std::move(fx)};
  }
  if (s.series_chips.size() < s.config.series_max &&
      ev.timestamp - s.series_times.back() >= s.config.chip_interval_ms) {
    s.series_chips.push_back(std::move(chip));
    s.series_times.push_back(ev.timestamp);
  }
  if (s.series_chips.size() >= s.config.series_max) {
    auto [next, fin_fx] = finalize_series(std::move(s), ev.timestamp);
    append(fx, std::move(fin_fx));
    return {std::move(next), std::move(fx)};
  }
  return {std::move(s), std::move(fx)};
}

/// Adopts `snapshot` only if it is valid and strictly newer than the current one.
inline Transition apply_model_update(NodeState s, SnapshotPtr snapshot, Timestamp now = 0) {
  Effects fx;
  if (!snapshot) {
    fx.emplace_back(Diagnostic{ErrorCode::CorruptSnapshot, "null snapshot", now});
    return {std::move(s), std::move(fx)};
  }
  try {
    snapshot->validate();
  } catch (const Error& e) {
    fx.emplace_back(Diagnostic{ErrorCode::CorruptSnapshot, e.what(), now});
    return {std::move(s), std::move(fx)};
  }
  if (snapshot->version <= s.model_version()) {
    fx.emplace_back(Diagnostic{ErrorCode::StaleSnapshot,
                               "ignored v" + std::to_string(snapshot->version) + " while holding v" +
                                   std::to_string(s.model_version()),
                               now});
    return {std::move(s), std::move(fx)};
  }
  s.snapshot = std::move(snapshot);
  return {std::move(s), std::move(fx)};
}

}  // namespace sof::edgenode
