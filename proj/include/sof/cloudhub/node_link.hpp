#pragma once

#include <atomic>
#include <iostream>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sof/cloudhub/hub.hpp"
#include "sof/cloudhub/service.hpp"
#include "sof/wire/protocol.hpp"
#include "sof/wire/tcp.hpp"

namespace sof::cloudhub {

/// What the hub knows about one connected node.
struct NodeSession {
  std::string node_id;
  std::uint64_t known_version = 0;
  bool greeted = false;
  wire::SeqTracker incoming;
};

/// MODEL_UPDATE for a greeted node behind the active version.
inline std::optional<wire::Payload> catch_up(const Hub& hub, NodeSession& s) {
  if (!s.greeted || s.known_version >= hub.active_version()) return std::nullopt;
  s.known_version = hub.active_version();
  return wire::ModelUpdate{hub.snapshot_for()};
}

/// Applies one node message to the hub and returns the replies.
inline std::vector<wire::Payload> on_node_message(Hub& hub, NodeSession& s, const wire::Message& m, Timestamp now) {
  s.incoming.accept(m);
  std::vector<wire::Payload> replies;
  if (const auto* h = std::get_if<wire::Hello>(&m.payload)) {
    s.node_id = h->node_id;
    s.known_version = h->model_version;
    s.greeted = true;
    if (auto u = catch_up(hub, s)) replies.push_back(std::move(*u));
  } else if (const auto* r = std::get_if<wire::RecognitionEvent>(&m.payload)) {
    hub.record_decision(r->decision, now);
  } else if (const auto* e = std::get_if<wire::EscalationMsg>(&m.payload)) {
    hub.ingest_escalation(e->series, now);
  } else if (std::holds_alternative<wire::Ping>(m.payload)) {
    replies.push_back(wire::Pong{});
  } else if (std::holds_alternative<wire::ModelUpdate>(m.payload)) {
    fail(ErrorCode::ProtocolError, "MODEL_UPDATE is hub-to-node only");
  }
  return replies;
}

/// Accepts sof-wire connections and serves each on its own thread.
class NodeServer {
 public:
  NodeServer(HubService& service, wire::Socket listener) : service_(service), listener_(std::move(listener)) {}
  NodeServer(const NodeServer&) = delete;
  NodeServer& operator=(const NodeServer&) = delete;
  ~NodeServer() { stop(); }

  [[nodiscard]] std::uint16_t port() const { return wire::local_port(listener_); }
  [[nodiscard]] std::size_t connected() const { return connected_.load(); }

  void start() {
    if (acceptor_.joinable()) return;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    stopping_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    std::lock_guard lock(threads_mutex_);
    for (auto& t : connections_) {
      if (t.joinable()) t.join();
    }
    connections_.clear();
  }

 private:
  static constexpr int kPollMs = 50;

  void accept_loop() {
    while (!stopping_) {
      std::optional<wire::Socket> s;
      try {
        s = wire::accept_tcp(listener_, kPollMs);
      } catch (const Error& e) {
        std::clog << "node server: " << e.what() << "\n";
        continue;
      }
      if (!s) continue;
      std::lock_guard lock(threads_mutex_);
      connections_.emplace_back([this, sock = std::move(*s)]() mutable { serve(wire::LineStream(std::move(sock))); });
    }
  }

  void serve(wire::LineStream stream) {
    ++connected_;
    NodeSession session;
    wire::Sequencer out;
    auto last_ping = wall_clock_ms();
    const auto send = [&](wire::Payload p) { stream.send(out.encode_next(std::move(p))); };
    try {
      while (!stopping_) {
        if (auto line = stream.read_line(kPollMs)) {
          try {
            const auto msg = wire::decode(*line);
            const auto replies = service_.command(
                [&](Hub& hub, Timestamp now) { return on_node_message(hub, session, msg, now); });
            for (const auto& r : replies) send(r);
          } catch (const Error& e) {
            if (e.code() == ErrorCode::ProtocolError) throw;
            std::clog << "node " << session.node_id << ": " << e.what() << "\n";
          }
        }
        if (auto u = service_.command([&](Hub& hub, Timestamp) { return catch_up(hub, session); })) send(*u);
        if (const auto now = wall_clock_ms(); now - last_ping >= wire::kPingIntervalMs) {
          send(wire::Ping{});
          last_ping = now;
        }
      }
    } catch (const Error& e) {
      std::clog << "node " << (session.node_id.empty() ? "?" : session.node_id) << " disconnected: " << e.what()
                << "\n";
    }
    --connected_;
  }

  HubService& service_;
  wire::Socket listener_;
  std::atomic<bool> stopping_ = false;
  std::atomic<std::size_t> connected_ = 0;
  std::thread acceptor_;
  std::mutex threads_mutex_;
  std::list<std::thread> connections_;
};

}  // namespace sof::cloudhub
