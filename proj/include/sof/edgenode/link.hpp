#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>

#include "sof/edgenode/node.hpp"
#include "sof/wire/protocol.hpp"
#include "sof/wire/tcp.hpp"

namespace sof::edgenode {

/// A node connected to a hub over sof-wire. Owns the node state and forwards
/// decisions and escalations; model updates are applied between frames.
class EdgeLink {
 public:
  EdgeLink(NodeState state, wire::Socket socket, std::optional<std::filesystem::path> decision_log = std::nullopt)
      : state_(std::move(state)), stream_(std::move(socket)), log_path_(std::move(decision_log)) {
    send(wire::Hello{state_.config.node_id, state_.model_version()});
  }

  [[nodiscard]] const NodeState& state() const noexcept { return state_; }

  Effects frame(const FrameEvent& ev) { return dispatch(handle_frame(std::move(state_), ev)); }
  Effects tick(Timestamp now) { return dispatch(edgenode::tick(std::move(state_), now)); }

  /// Handles hub messages until none arrives within `timeout_ms`; returns how many were handled.
  int poll(int timeout_ms, Timestamp now) {
    int handled = 0;
    while (auto line = stream_.read_line(handled == 0 ? timeout_ms : 0)) {
      const auto m = wire::decode(*line);
      incoming_.accept(m);
      if (const auto* u = std::get_if<wire::ModelUpdate>(&m.payload)) {
        dispatch(apply_model_update(std::move(state_), u->snapshot, now));
      } else if (std::holds_alternative<wire::Ping>(m.payload)) {
        send(wire::Pong{});
      } else if (!std::holds_alternative<wire::Pong>(m.payload)) {
        fail(ErrorCode::ProtocolError, wire::type_name(m.payload) + " is node-to-hub only");
      }
      ++handled;
    }
    return handled;
  }

  void ping() { send(wire::Ping{}); }

 private:
  void send(wire::Payload p) { stream_.send(out_.encode_next(std::move(p))); }

  Effects dispatch(Transition t) {
    state_ = std::move(t.first);
    for (auto& p : wire::node_messages(t.second)) send(std::move(p));
    if (log_path_) {
      for (const auto& e : t.second) {
        if (const auto* l = std::get_if<LogLine>(&e)) {
          std::ofstream(*log_path_, std::ios::app) << l->json << "\n";
        }
      }
    }
    return std::move(t.second);
  }

  NodeState state_;
  wire::LineStream stream_;
  wire::Sequencer out_;
  wire::SeqTracker incoming_;
  std::optional<std::filesystem::path> log_path_;
};

}  // namespace sof::edgenode
