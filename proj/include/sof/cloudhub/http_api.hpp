#pragma once

#include <chrono>
#include <filesystem>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sof/cloudhub/service.hpp"

namespace sof::cloudhub {

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::AlertNotFound:
    case ErrorCode::UnknownPerson:
    case ErrorCode::NoSuchVersion:
      return 404;
    case ErrorCode::AlertNotPending:
      return 409;
    case ErrorCode::InvalidArgument:
    case ErrorCode::ParseError:
    case ErrorCode::UnknownDevice:
      return 400;
    case ErrorCode::InsufficientIdentities:
      return 422;
    default:
      return 500;
  }
}

namespace detail {

inline void reply(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, std::string("request body: ") + e.what());
  }
}

/// Wraps a handler so hub errors become JSON error responses.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      reply(res, {{"error", std::string(to_string(e.code()))}, {"message", e.what()}}, http_status(e.code()));
    } catch (const nlohmann::json::exception& e) {
      reply(res, {{"error", "ParseError"}, {"message", e.what()}}, 400);
    }
  };
}

inline PersonSpec person_spec_from_json(const nlohmann::json& j) {
  if (j.contains("person_id")) return ExistingPerson{j.at("person_id").get<std::string>()};
  return NewPersonSpec{j.at("display_name").get<std::string>(), j.value("permission_level", 1)};
}

inline nlohmann::json model_summary(const Hub& hub, const ModelSnapshot& s) {
  nlohmann::json job = nullptr;
  for (const auto& j : hub.jobs()) {
    if (j.produced_version == s.version) job = j.job_id;
  }
  return {{"version", s.version},
          {"created_at", s.created_at},
          {"identities", s.gallery.size()},
          {"accept_threshold", s.accept_threshold},
          {"job_id", job},
          {"active", s.version == hub.active_version()}};
}

inline std::string sse_frame(const HubEvent& e) {
  return "id: " + std::to_string(e.id) + "\nevent: " + e.type + "\ndata: " + e.data.dump() + "\n\n";
}

}  // namespace detail

/// Console-facing routes over `service`. The server must not outlive it.
inline void mount_hub_api(httplib::Server& server, HubService& service) {
  using detail::guarded;
  using detail::reply;
  using Req = httplib::Request;
  using Res = httplib::Response;

  server.Get("/alerts", guarded([&](const Req& req, Res& res) {
    std::optional<AlertStatus> filter;
    if (req.has_param("status")) filter = alert_status_from_string(req.get_param_value("status"));
    reply(res, service.read([&](const Hub& hub) {
      auto out = nlohmann::json::array();
      for (const auto& [id, a] : hub.alerts()) {
        if (!filter || a.status == *filter) out.push_back(alert_summary(a));
      }
      return out;
    }));
  }));

  server.Get(R"(/alerts/([^/]+))", guarded([&](const Req& req, Res& res) {
    reply(res, service.read([&](const Hub& hub) {
      const auto& a = hub.alert(req.matches[1]);
      auto j = alert_summary(a);
      j["chip_times"] = a.series.chip_times;
      return j;
    }));
  }));

  server.Get(R"(/alerts/([^/]+)/chips/(\d+))", guarded([&](const Req& req, Res& res) {
    const auto k = std::stoul(req.matches[2]);
    const auto pgm = service.read([&](const Hub& hub) {
      const auto& chips = hub.alert(req.matches[1]).series.chips;
      if (k >= chips.size()) fail(ErrorCode::InvalidArgument, "chip index out of range");
      return encode_pnm(chips[k].image());
    });
    res.set_content(pgm, "image/x-portable-graymap");
  }));

  server.Post(R"(/alerts/([^/]+)/label)", guarded([&](const Req& req, Res& res) {
    const auto who = detail::person_spec_from_json(detail::parse_body(req));
    const std::string id = req.matches[1];
    reply(res, service.command([&](Hub& hub, Timestamp now) {
      auto [alert, job] = hub.label_alert(id, who, now);
      return nlohmann::json{{"alert", alert_summary(alert)}, {"job", to_json(job)}};
    }));
  }));

  server.Post(R"(/alerts/([^/]+)/dismiss)", guarded([&](const Req& req, Res& res) {
    const std::string id = req.matches[1];
    reply(res, service.command([&](Hub& hub, Timestamp now) { return alert_summary(hub.dismiss_alert(id, now)); }));
  }));

  server.Get("/policy", guarded([&](const Req&, Res& res) {
    reply(res, service.read([](const Hub& hub) { return to_json(hub.policy()); }));
  }));

  server.Put("/policy", guarded([&](const Req& req, Res& res) {
    auto p = policy_from_json(detail::parse_body(req));
    reply(res, service.command([&](Hub& hub, Timestamp now) {
      hub.set_policy(std::move(p), now);
      return to_json(hub.policy());
    }));
  }));

  server.Get("/persons", guarded([&](const Req&, Res& res) {
    reply(res, service.read([](const Hub& hub) { return hub.persons_json(); }));
  }));

  server.Get("/models", guarded([&](const Req&, Res& res) {
    reply(res, service.read([](const Hub& hub) {
      auto out = nlohmann::json::array();
      for (const auto& s : hub.registry()) out.push_back(detail::model_summary(hub, *s));
      return out;
    }));
  }));

  server.Get("/models/latest", guarded([&](const Req&, Res& res) {
    reply(res, service.read([](const Hub& hub) { return edgenode::to_json(*hub.snapshot_for()); }));
  }));

  server.Get(R"(/models/(\d+))", guarded([&](const Req& req, Res& res) {
    const auto v = std::stoull(req.matches[1]);
    reply(res, service.read([&](const Hub& hub) { return edgenode::to_json(*hub.snapshot_for(v)); }));
  }));

  server.Get("/jobs", guarded([&](const Req&, Res& res) {
    reply(res, service.read([](const Hub& hub) {
      auto out = nlohmann::json::array();
      for (const auto& j : hub.jobs()) out.push_back(to_json(j));
      return out;
    }));
  }));

  server.Post("/jobs", guarded([&](const Req&, Res& res) {
    reply(res, service.command([](Hub& hub, Timestamp now) { return to_json(hub.submit_manual_job(now)); }), 202);
  }));

  server.Get("/log/access", guarded([&](const Req& req, Res& res) {
    const std::size_t limit = req.has_param("limit") ? std::stoul(req.get_param_value("limit")) : 0;
    reply(res, service.read([&](const Hub& hub) {
      const auto& log = hub.access_log();
      const std::size_t from = limit == 0 || limit >= log.size() ? 0 : log.size() - limit;
      return nlohmann::json(std::vector<nlohmann::json>(log.begin() + static_cast<std::ptrdiff_t>(from), log.end()));
    }));
  }));

  // Server-sent events. A reconnecting client resumes after Last-Event-ID.
  server.Get("/events", [&](const Req& req, Res& res) {
    std::uint64_t start = service.last_event_id();
    if (req.has_header("Last-Event-ID")) {
      try {
        start = std::min<std::uint64_t>(std::stoull(req.get_header_value("Last-Event-ID")), start);
      } catch (const std::exception&) {
      }
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [&service, cursor = start, first = true](
                                                              std::size_t, httplib::DataSink& sink) mutable {
      if (first) {
        const std::string hello = "retry: 1000\n: connected\n\n";
        if (!sink.write(hello.data(), hello.size())) return false;
        first = false;
      }
      const auto events = service.wait_events(cursor, std::chrono::milliseconds(1000));
      if (service.stopping()) return false;
      std::string chunk;
      for (const auto& e : events) chunk += detail::sse_frame(e);
      if (chunk.empty()) chunk = ": keepalive\n\n";
      if (!events.empty()) cursor = events.back().id;
      return sink.write(chunk.data(), chunk.size());
    });
  });
}

/// Serves built console assets from `dir` at the site root.
inline void mount_console(httplib::Server& server, const std::filesystem::path& dir) {
  if (!server.set_mount_point("/", dir.string())) {
    fail(ErrorCode::IoFailure, "console directory not found: " + dir.string());
  }
}

}  // namespace sof::cloudhub
