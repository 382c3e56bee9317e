#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/cloudhub/hub.hpp"
#include "sof/cloudhub/node_link.hpp"
#include "sof/edgenode/node.hpp"
#include "sof/harness/corpus.hpp"
#include "sof/harness/render.hpp"
#include "sof/social/ingest.hpp"
#include "sof/wire/protocol.hpp"

namespace sof::harness {

using edgenode::Timestamp;
using json = nlohmann::json;

struct ScenarioNode {
  std::string node_id;
  std::string device_id = "front_door";
};

struct ScenarioEvent {
  Timestamp t = 0;
  std::string type;
  json body;
};

/// A scripted run. `events` are in time order; `base_dir` resolves relative corpus paths.
struct Scenario {
  std::uint64_t seed = 1;
  json hub = json::object();
  std::vector<ScenarioNode> nodes;
  std::vector<ScenarioEvent> events;
  Timestamp tick_ms = 100;
  std::filesystem::path base_dir;
};

[[noreturn]] inline void scenario_error(const std::string& what) { fail(ErrorCode::ScenarioError, what); }

inline const std::vector<std::string>& event_types() {
  static const std::vector<std::string> types = {"NODE_FRAME",   "OWNER_LABEL", "OWNER_DISMISS", "SOCIAL_INGEST",
                                                 "SET_POLICY",   "MANUAL_JOB",  "RESTART_HUB",   "EXPECT"};
  return types;
}

/// Accepts either a bare event list or {seed, hub, nodes, tick_ms, events}.
inline Scenario parse_scenario(const json& j, std::filesystem::path base_dir = {}) {
  Scenario s;
  s.base_dir = std::move(base_dir);
  const json* events = &j;
  try {
    if (j.is_object()) {
      s.seed = j.value("seed", s.seed);
      s.hub = j.value("hub", json::object());
      s.tick_ms = j.value("tick_ms", s.tick_ms);
      for (const auto& n : j.value("nodes", json::array())) {
        s.nodes.push_back({n.at("node_id").get<std::string>(), n.value("device_id", std::string("front_door"))});
      }
      events = &j.at("events");
    }
    if (!events->is_array()) scenario_error("events must be a list");
    for (const auto& e : *events) {
      ScenarioEvent ev{e.at("t").get<Timestamp>(), e.at("type").get<std::string>(), e};
      if (std::find(event_types().begin(), event_types().end(), ev.type) == event_types().end()) {
        scenario_error("unknown event type '" + ev.type + "'");
      }
      if (!s.events.empty() && ev.t < s.events.back().t) {
        scenario_error("events out of time order at t=" + std::to_string(ev.t));
      }
      s.events.push_back(std::move(ev));
    }
  } catch (const json::exception& e) {
    scenario_error(std::string("malformed scenario: ") + e.what());
  }
  if (s.tick_ms <= 0) scenario_error("tick_ms must be positive");
  if (s.nodes.empty()) s.nodes.push_back({"node-1", "front_door"});
  std::set<std::string> ids;
  for (const auto& n : s.nodes) {
    if (!ids.insert(n.node_id).second) scenario_error("duplicate node '" + n.node_id + "'");
  }
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    scenario_error(path.string() + ": " + e.what());
  }
  return parse_scenario(j, path.parent_path());
}

/// The camera frame of `name` seen at `node` at time `t`: a fresh nuisance draw, 8-bit.
inline edgenode::FrameEvent render_frame(const std::string& name, const std::string& node, Timestamp t,
                                         std::uint64_t seed) {
  Rng rng(stable_hash(name + "@" + node + "/" + std::to_string(t), seed));
  const auto rp = RenderParams::random(rng);
  auto [chip, lm] = render_chip(make_identity(name, seed), rp, rng.next());
  return {t, quantize(chip.image()), lm};
}

struct RunOptions {
  /// Persist hub state here. Scenarios that restart the hub use a scratch directory when unset.
  std::optional<std::filesystem::path> data_dir;
  /// Where generated corpora are written; a temporary directory when unset.
  std::optional<std::filesystem::path> work_dir;
};

struct ScenarioReport {
  json expectations = json::array();
  json traces = json::object();

  [[nodiscard]] bool passed() const {
    return std::all_of(expectations.begin(), expectations.end(), [](const json& e) { return e.at("pass").get<bool>(); });
  }
  [[nodiscard]] json to_json() const { return {{"expectations", expectations}, {"traces", traces}}; }
};

namespace detail {

/// Removes a directory tree on scope exit.
struct ScratchDir {
  std::filesystem::path path;
  bool owned = false;
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  explicit ScratchDir(std::optional<std::filesystem::path> given) {
    if (given) {
      path = *given;
      return;
    }
    Rng rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    path = std::filesystem::temp_directory_path() / ("sof-scenario-" + std::to_string(rng.next()));
    owned = true;
  }
  ~ScratchDir() {
    if (owned) {
      std::error_code ec;
      std::filesystem::remove_all(path, ec);
    }
  }
};

class Runner {
 public:
  Runner(const Scenario& s, const RunOptions& opt) : scenario_(s), opt_(opt), scratch_(opt.work_dir) {
    config_ = cloudhub::hub_config_from_json(s.hub, [&] {
      cloudhub::HubConfig c;
      c.seed = s.seed;
      return c;
    }());
    config_.data_dir = opt.data_dir;
    const bool restarts = std::any_of(s.events.begin(), s.events.end(), [](const auto& e) { return e.type == "RESTART_HUB"; });
    if (restarts && !config_.data_dir) config_.data_dir = scratch_.path / "hub";
    hub_.emplace(config_, 0);
    versions_.push_back({{"version", 1}, {"created_at", 0}, {"identities", 0}, {"t", 0}});
    watch_hub();
    for (const auto& n : s.nodes) {
      edgenode::NodeConfig cfg;
      cfg.node_id = n.node_id;
      cfg.device_id = n.device_id;
      auto [it, fresh] = nodes_.try_emplace(n.node_id);
      it->second.state = edgenode::make_node(cfg, hub_->snapshot_for());
    }
    connect_all();
  }

  ScenarioReport run() {
    for (std::size_t k = 0; k < scenario_.events.size(); ++k) {
      const auto& ev = scenario_.events[k];
      if (ev.t < now_) scenario_error("event at t=" + std::to_string(ev.t) + " overlaps the frames before it");
      advance_to(ev.t);
      handle(ev, k);
    }
    report_.traces["decisions"] = decisions_;
    report_.traces["diagnostics"] = diagnostics_;
    report_.traces["versions"] = versions_;
    report_.traces["ingests"] = ingests_;
    auto alerts = json::array();
    for (const auto& [id, a] : hub_->alerts()) alerts.push_back(cloudhub::alert_summary(a));
    report_.traces["alerts"] = alerts;
    return report_;
  }

 private:
  struct Slot {
    edgenode::NodeState state;
    wire::Sequencer node_out;  // node -> hub
    wire::SeqTracker node_in;
    wire::Sequencer hub_out;  // hub -> node
    cloudhub::NodeSession session;
    Timestamp last_ping = 0;
    std::optional<edgenode::AccessDecision> last_decision;
  };

  void watch_hub() {
    hub_->subscribe([this](const cloudhub::HubEvent& e) {
      if (e.type == "model_version") {
        auto v = e.data;
        v["t"] = now_;
        versions_.push_back(std::move(v));
      }
    });
  }

  void connect_all() {
    for (auto& [id, slot] : nodes_) {
      slot.session = {};
      slot.hub_out = {};
      slot.node_in = {};
      slot.last_ping = now_;
      to_hub(slot, wire::Hello{id, slot.state.model_version()});
    }
  }

  // ---- message routing: everything crosses the wire encoding ------------

  void to_hub(Slot& slot, wire::Payload p) {
    const auto msg = wire::decode(slot.node_out.encode_next(std::move(p)));
    for (auto& r : cloudhub::on_node_message(*hub_, slot.session, msg, now_)) to_node(slot, std::move(r));
  }

  void to_node(Slot& slot, wire::Payload p) {
    const auto msg = wire::decode(slot.hub_out.encode_next(std::move(p)));
    slot.node_in.accept(msg);
    if (const auto* u = std::get_if<wire::ModelUpdate>(&msg.payload)) {
      apply(slot, edgenode::apply_model_update(std::move(slot.state), u->snapshot, now_));
    } else if (std::holds_alternative<wire::Ping>(msg.payload)) {
      to_hub(slot, wire::Pong{});
    }
  }

  void apply(Slot& slot, edgenode::Transition t) {
    slot.state = std::move(t.first);
    for (const auto& e : t.second) {
      if (const auto* d = std::get_if<edgenode::AccessDecision>(&e)) {
        slot.last_decision = *d;
        decisions_.push_back(edgenode::to_json(*d));
      } else if (const auto* g = std::get_if<edgenode::Diagnostic>(&e)) {
        diagnostics_.push_back({{"node", slot.state.config.node_id},
                                {"code", std::string(to_string(g->code))},
                                {"message", g->message},
                                {"ts", g->timestamp}});
      }
    }
    for (auto& p : wire::node_messages(t.second)) to_hub(slot, std::move(p));
  }

  /// Runs every queued job at its dequeue point and pushes new versions out.
  void settle() {
    hub_->run_pending_jobs(now_);
    for (auto& [id, slot] : nodes_) {
      if (auto u = cloudhub::catch_up(*hub_, slot.session)) to_node(slot, std::move(*u));
    }
  }

  void advance_to(Timestamp t) {
    while (now_ + scenario_.tick_ms < t) step(now_ + scenario_.tick_ms);
    if (t > now_) step(t);
  }

  void step(Timestamp t) {
    now_ = t;
    for (auto& [id, slot] : nodes_) {
      apply(slot, edgenode::tick(std::move(slot.state), now_));
      if (now_ - slot.last_ping >= wire::kPingIntervalMs) {
        to_hub(slot, wire::Ping{});
        slot.last_ping = now_;
      }
    }
    settle();
  }

  // ---- events -------------------------------------------------------------

  Slot& node(const json& body) {
    const auto id = body.contains("node") ? body.at("node").get<std::string>() : nodes_.begin()->first;
    auto it = nodes_.find(id);
    if (it == nodes_.end()) scenario_error("unknown node '" + id + "'");
    return it->second;
  }

  std::string resolve_alert(const json& ref) const {
    if (ref.is_string()) {
      const auto r = ref.get<std::string>();
      if (r == "last" || r == "last_pending") {
        std::optional<std::string> found;
        for (const auto& [id, a] : hub_->alerts()) {
          if (r == "last" || a.status == cloudhub::AlertStatus::Pending) found = id;
        }
        if (!found) scenario_error("no alert matches '" + r + "'");
        return *found;
      }
      if (!hub_->alerts().contains(r)) scenario_error("no alert '" + r + "'");
      return r;
    }
    if (ref.is_object() && ref.contains("node")) {
      const auto n = ref.at("node").get<std::string>();
      const auto nth = ref.value("nth", 1);
      int seen = 0;
      for (const auto& [id, a] : hub_->alerts()) {
        if (a.node_id == n && ++seen == nth) return id;
      }
      scenario_error("node '" + n + "' has no alert #" + std::to_string(nth));
    }
    scenario_error("bad alert reference " + ref.dump());
  }

  static cloudhub::PersonSpec person_spec(const json& p) {
    if (p.contains("person_id")) return cloudhub::ExistingPerson{p.at("person_id").get<std::string>()};
    return cloudhub::NewPersonSpec{p.at("display_name").get<std::string>(), p.value("permission_level", 1)};
  }

  social::Corpus corpus_for(const json& spec, std::size_t index) {
    if (spec.is_string()) {
      auto dir = std::filesystem::path(spec.get<std::string>());
      if (dir.is_relative()) dir = scenario_.base_dir / dir;
      return social::load_corpus(dir);
    }
    const auto dir = scratch_.path / ("corpus-" + std::to_string(index));
    return generate_corpus(spec.at("identities").get<int>(), spec.at("chips").get<int>(),
                           spec.value("seed", scenario_.seed), dir);
  }

  /// Runs a hub command; when the event names `expect_error`, the command must fail with it.
  template <class F>
  void hub_command(const ScenarioEvent& ev, F&& f) {
    const auto expected = ev.body.value("expect_error", std::string{});
    try {
      f();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ScenarioError) throw;
      if (expected.empty()) scenario_error(ev.type + " at t=" + std::to_string(ev.t) + ": " + e.what());
      expect(ev, to_string(e.code()) == expected, std::string(to_string(e.code())));
      return;
    }
    if (!expected.empty()) expect(ev, false, "no error");
    settle();
  }

  void handle(const ScenarioEvent& ev, std::size_t index) {
    const auto& b = ev.body;
    try {
      if (ev.type == "NODE_FRAME") {
        auto& slot = node(b);
        const auto frames = b.value("frames", 1);
        const auto every = b.value("every_ms", Timestamp{250});
        std::string who = b.value("identity", std::string("stranger"));
        if (who == "stranger") who = "stranger#" + std::to_string(index);
        for (int k = 0; k < frames; ++k) {
          if (k > 0) advance_to(ev.t + k * every);
          auto frame = render_frame(who, slot.state.config.node_id, now_, scenario_.seed);
          if (b.value("no_face", false)) frame.landmarks.reset();
          apply(slot, edgenode::handle_frame(std::move(slot.state), frame));
        }
      } else if (ev.type == "OWNER_LABEL") {
        const auto id = resolve_alert(b.value("alert", json("last_pending")));
        const auto who = person_spec(b.at("person"));
        hub_command(ev, [&] { hub_->label_alert(id, who, now_); });
      } else if (ev.type == "OWNER_DISMISS") {
        const auto id = resolve_alert(b.value("alert", json("last_pending")));
        hub_command(ev, [&] { hub_->dismiss_alert(id, now_); });
      } else if (ev.type == "SOCIAL_INGEST") {
        const auto corpus = corpus_for(b.at("corpus"), index);
        const auto consent = b.at("consent").get<social::ConsentList>();
        hub_command(ev, [&] {
          social::CorpusSource source(corpus);
          auto result = social::ingest(source, consent, hub_->social_keys(), {config_.dims.chip_size});
          social::commit_ingest(*hub_, result, now_);
          auto r = social::to_json(result.report);
          r["t"] = now_;
          ingests_.push_back(std::move(r));
        });
      } else if (ev.type == "SET_POLICY") {
        hub_command(ev, [&] {
          auto p = b.contains("policy") ? cloudhub::policy_from_json(b.at("policy")) : hub_->policy();
          if (b.contains("devices")) {
            for (auto& [id, rule] : cloudhub::devices_from_json(b.at("devices"))) p.devices[id] = rule;
          }
          const auto persons = b.value("persons", json::object());
          for (const auto& [id, level] : persons.items()) p.persons[id] = level.get<int>();
          hub_->set_policy(std::move(p), now_);
        });
      } else if (ev.type == "MANUAL_JOB") {
        hub_command(ev, [&] { hub_->submit_manual_job(now_); });
      } else if (ev.type == "RESTART_HUB") {
        hub_.reset();
        hub_.emplace(cloudhub::Hub::load(config_));
        watch_hub();
        connect_all();
        settle();
      } else if (ev.type == "EXPECT") {
        evaluate(ev);
      }
    } catch (const json::exception& e) {
      scenario_error(ev.type + " at t=" + std::to_string(ev.t) + ": " + e.what());
    }
  }

  // ---- expectations -------------------------------------------------------

  void expect(const ScenarioEvent& ev, bool pass, const json& actual) {
    auto desc = ev.body.value("desc", std::string{});
    if (desc.empty()) {
      desc = ev.type == "EXPECT" ? ev.body.at("expect").dump() : ev.type + " fails with " + ev.body.value("expect_error", "");
    }
    report_.expectations.push_back({{"desc", desc}, {"t", ev.t}, {"pass", pass}, {"actual", actual}});
  }

  static bool matches(const json& want, const json& got) {
    for (const auto& [k, v] : want.items()) {
      if (!got.contains(k) || got.at(k) != v) return false;
    }
    return true;
  }

  void evaluate(const ScenarioEvent& ev) {
    const auto& all = ev.body.at("expect");
    if (!all.is_object() || all.empty()) scenario_error("EXPECT needs a predicate object");
    bool pass = true;
    json actual = json::object();
    for (const auto& [key, want] : all.items()) {
      json got;
      bool ok = false;
      if (key == "last_decision") {
        auto& slot = node(want);
        got = slot.last_decision ? edgenode::to_json(*slot.last_decision) : json(nullptr);
        auto w = want;
        w.erase("node");
        ok = !got.is_null() && matches(w, got);
      } else if (key == "decisions") {
        std::size_t n = 0;
        auto w = want;
        const auto count = w.at("count").get<std::size_t>();
        w.erase("count");
        if (w.contains("node")) {
          w["node_id"] = w.at("node");
          w.erase("node");
        }
        for (const auto& d : decisions_) n += matches(w, d);
        got = n;
        ok = n == count;
      } else if (key == "alerts") {
        std::size_t n = 0;
        for (const auto& [id, a] : hub_->alerts()) n += matches(want.value("where", json::object()), cloudhub::alert_summary(a));
        got = n;
        ok = n == want.at("count").get<std::size_t>();
      } else if (key == "access_log") {
        std::size_t n = 0;
        for (const auto& e : hub_->access_log()) n += matches(want.value("where", json::object()), e);
        got = n;
        ok = n == want.at("count").get<std::size_t>();
      } else if (key == "alert") {
        const auto id = resolve_alert(want.at("ref"));
        got = cloudhub::alert_summary(hub_->alert(id));
        auto w = want;
        w.erase("ref");
        ok = matches(w, got);
      } else if (key == "model_version") {
        got = hub_->active_version();
        ok = got == want;
      } else if (key == "node_version") {
        got = node(want).state.model_version();
        ok = got == want.at("version");
      } else if (key == "person_level") {
        const auto person = want.at("person").get<std::string>();
        got = hub_->persons().contains(person) ? json(hub_->level_of(person)) : json(nullptr);
        ok = got == want.at("level");
      } else if (key == "access") {
        std::optional<std::string> person;
        if (!want.at("person").is_null()) person = want.at("person").get<std::string>();
        got = cloudhub::check_access(person, want.at("device").get<std::string>(), hub_->policy()) ==
                      cloudhub::AccessVerdict::Grant
                  ? "GRANT"
                  : "DENY";
        ok = got == want.at("verdict");
      } else if (key == "job") {
        const auto& jobs = hub_->jobs();
        const auto nth = want.value("nth", static_cast<int>(jobs.size()));
        if (nth < 1 || nth > static_cast<int>(jobs.size())) {
          got = nullptr;
        } else {
          got = cloudhub::to_json(jobs[nth - 1]);
          auto w = want;
          w.erase("nth");
          ok = matches(w, got);
        }
      } else if (key == "ingest") {
        got = ingests_.empty() ? json(nullptr) : ingests_.back();
        ok = !got.is_null() && matches(want, got);
      } else if (key == "enrolled_chips") {
        std::map<std::string, std::size_t> counts;
        for (const auto& e : hub_->enrollments()) ++counts[e.person_id];
        got = counts;
        ok = matches(want, got);
      } else {
        scenario_error("unknown EXPECT predicate '" + key + "'");
      }
      actual[key] = got;
      pass = pass && ok;
    }
    expect(ev, pass, actual);
  }

  const Scenario& scenario_;
  RunOptions opt_;
  ScratchDir scratch_;
  cloudhub::HubConfig config_;
  std::optional<cloudhub::Hub> hub_;
  std::map<std::string, Slot> nodes_;
  Timestamp now_ = 0;
  json decisions_ = json::array();
  json diagnostics_ = json::array();
  json versions_ = json::array();
  json ingests_ = json::array();
  ScenarioReport report_;
};

}  // namespace detail

/// Plays `s` against an in-process hub and nodes on a simulated clock.
/// Expectation failures are report entries; malformed references throw ScenarioError.
inline ScenarioReport run_scenario(const Scenario& s, const RunOptions& opt = {}) {
  return detail::Runner(s, opt).run();
}

}  // namespace sof::harness
