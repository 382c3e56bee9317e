#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/edgenode/node.hpp"
#include "sof/edgenode/snapshot.hpp"
#include "sof/error.hpp"

namespace sof::wire {

inline constexpr std::string_view kProto = "sof-wire/1";
inline constexpr std::int64_t kPingIntervalMs = 10000;

struct Hello {
  std::string node_id;
  std::uint64_t model_version = 0;
};

struct ModelUpdate {
  edgenode::SnapshotPtr snapshot;
};

struct RecognitionEvent {
  edgenode::AccessDecision decision;
};

struct EscalationMsg {
  edgenode::PhotoSeries series;
};

struct Ping {};
struct Pong {};

using Payload = std::variant<Hello, ModelUpdate, RecognitionEvent, EscalationMsg, Ping, Pong>;

struct Message {
  std::uint64_t seq = 0;
  Payload payload;
};

inline std::string type_name(const Payload& p) {
  struct V {
    std::string operator()(const Hello&) const { return "HELLO"; }
    std::string operator()(const ModelUpdate&) const { return "MODEL_UPDATE"; }
    std::string operator()(const RecognitionEvent&) const { return "RECOGNITION_EVENT"; }
    std::string operator()(const EscalationMsg&) const { return "ESCALATION"; }
    std::string operator()(const Ping&) const { return "PING"; }
    std::string operator()(const Pong&) const { return "PONG"; }
  };
  return std::visit(V{}, p);
}

/// One line of JSON, newline-terminated.
inline std::string encode(const Message& m) {
  nlohmann::json j = {{"proto", kProto}, {"seq", m.seq}, {"type", type_name(m.payload)}};
  if (const auto* h = std::get_if<Hello>(&m.payload)) {
    j["node_id"] = h->node_id;
    j["model_version"] = h->model_version;
  } else if (const auto* u = std::get_if<ModelUpdate>(&m.payload)) {
    if (!u->snapshot) fail(ErrorCode::ProtocolError, "MODEL_UPDATE without snapshot");
    j["snapshot"] = edgenode::to_json(*u->snapshot);
  } else if (const auto* r = std::get_if<RecognitionEvent>(&m.payload)) {
    j["decision"] = edgenode::to_json(r->decision);
  } else if (const auto* e = std::get_if<EscalationMsg>(&m.payload)) {
    j["series"] = edgenode::to_json(e->series);
  }
  return j.dump() + "\n";
}

inline Message decode(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ProtocolError, std::string("not JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::ProtocolError, "message must be an object");
  if (j.value("proto", "") != kProto) fail(ErrorCode::ProtocolError, "unsupported proto '" + j.value("proto", "") + "'");
  if (!j.contains("seq") || !j.at("seq").is_number_unsigned()) fail(ErrorCode::ProtocolError, "missing seq");
  Message m;
  m.seq = j.at("seq").get<std::uint64_t>();
  const auto type = j.value("type", "");
  try {
    if (type == "HELLO") {
      m.payload = Hello{j.at("node_id").get<std::string>(), j.at("model_version").get<std::uint64_t>()};
    } else if (type == "MODEL_UPDATE") {
      m.payload = ModelUpdate{std::make_shared<const edgenode::ModelSnapshot>(edgenode::snapshot_from_json(j.at("snapshot")))};
    } else if (type == "RECOGNITION_EVENT") {
      m.payload = RecognitionEvent{edgenode::decision_from_json(j.at("decision"))};
    } else if (type == "ESCALATION") {
      m.payload = EscalationMsg{edgenode::series_from_json(j.at("series"))};
    } else if (type == "PING") {
      m.payload = Ping{};
    } else if (type == "PONG") {
      m.payload = Pong{};
    } else {
      fail(ErrorCode::ProtocolError, "unknown message type '" + type + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ProtocolError, type + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ProtocolError) throw;
    fail(ErrorCode::ProtocolError, type + ": " + e.what());
  }
  return m;
}

/// The messages a node sends for the effects of one transition.
inline std::vector<Payload> node_messages(const edgenode::Effects& effects) {
  std::vector<Payload> out;
  for (const auto& e : effects) {
    if (const auto* d = std::get_if<edgenode::AccessDecision>(&e)) {
      out.push_back(RecognitionEvent{*d});
    } else if (const auto* x = std::get_if<edgenode::Escalation>(&e)) {
      out.push_back(EscalationMsg{x->series});
    }
  }
  return out;
}

/// Stamps outgoing messages with this sender's increasing sequence numbers.
class Sequencer {
 public:
  Message next(Payload p) { return {++seq_, std::move(p)}; }
  std::string encode_next(Payload p) { return encode(next(std::move(p))); }

 private:
  std::uint64_t seq_ = 0;
};

/// Rejects a peer's message whose seq does not increase.
class SeqTracker {
 public:
  void accept(const Message& m) {
    if (last_ && m.seq <= *last_) {
      fail(ErrorCode::ProtocolError,
           "seq " + std::to_string(m.seq) + " does not follow " + std::to_string(*last_));
    }
    last_ = m.seq;
  }

 private:
  std::optional<std::uint64_t> last_;
};

}  // namespace sof::wire
