#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/cloudhub/policy.hpp"
#include "sof/edgenode/node.hpp"
#include "sof/edgenode/snapshot.hpp"
#include "sof/error.hpp"
#include "sof/facecore/gallery.hpp"
#include "sof/image.hpp"
#include "sof/trainer/train.hpp"

namespace sof::cloudhub {

using edgenode::ModelSnapshot;
using edgenode::PhotoSeries;
using edgenode::SnapshotPtr;
using edgenode::Timestamp;
using facecore::Provenance;

enum class AlertStatus { Pending, Labeled, Dismissed };

inline std::string to_string(AlertStatus s) {
  switch (s) {
    case AlertStatus::Pending: return "PENDING";
    case AlertStatus::Labeled: return "LABELED";
    case AlertStatus::Dismissed: return "DISMISSED";
  }
  return "PENDING";
}

inline AlertStatus alert_status_from_string(const std::string& s) {
  if (s == "PENDING") return AlertStatus::Pending;
  if (s == "LABELED") return AlertStatus::Labeled;
  if (s == "DISMISSED") return AlertStatus::Dismissed;
  fail(ErrorCode::InvalidArgument, "unknown alert status '" + s + "'");
}

struct Alert {
  std::string alert_id;
  PhotoSeries series;
  std::string node_id;
  AlertStatus status = AlertStatus::Pending;
  Timestamp created_at = 0;
  std::optional<std::string> labeled_as;
};

enum class JobTrigger { Label, Ingest, Manual };
enum class JobState { Queued, Running, Done, Failed };

inline std::string to_string(JobTrigger t) {
  switch (t) {
    case JobTrigger::Label: return "label";
    case JobTrigger::Ingest: return "ingest";
    case JobTrigger::Manual: return "manual";
  }
  return "manual";
}

inline JobTrigger job_trigger_from_string(const std::string& s) {
  if (s == "label") return JobTrigger::Label;
  if (s == "ingest") return JobTrigger::Ingest;
  if (s == "manual") return JobTrigger::Manual;
  fail(ErrorCode::InvalidArgument, "unknown job trigger '" + s + "'");
}

inline std::string to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "QUEUED";
    case JobState::Running: return "RUNNING";
    case JobState::Done: return "DONE";
    case JobState::Failed: return "FAILED";
  }
  return "QUEUED";
}

inline JobState job_state_from_string(const std::string& s) {
  if (s == "QUEUED") return JobState::Queued;
  if (s == "RUNNING") return JobState::Running;
  if (s == "DONE") return JobState::Done;
  if (s == "FAILED") return JobState::Failed;
  fail(ErrorCode::InvalidArgument, "unknown job state '" + s + "'");
}

struct TrainingJob {
  std::string job_id;
  JobTrigger trigger = JobTrigger::Manual;
  /// Enrollment batches this job adds; empty for a manual job, which retrains on everything.
  std::vector<std::uint64_t> batches;
  std::string summary;
  JobState state = JobState::Queued;
  std::optional<std::uint64_t> produced_version;
  std::string error;
  Timestamp created_at = 0;
};

struct PersonRecord {
  std::string display_name;
  Provenance provenance = Provenance::Enrollment;
  Timestamp created_at = 0;
  bool operator==(const PersonRecord&) const = default;
};

/// One labeled chip held by the hub. `batch` groups the chips of one label or ingest.
struct Enrollment {
  std::string person_id;
  Provenance source = Provenance::Enrollment;
  std::uint64_t batch = 0;
  FaceChip chip;
};

struct ExistingPerson {
  std::string person_id;
};

struct NewPersonSpec {
  std::string display_name;
  int permission_level = 1;
};

using PersonSpec = std::variant<ExistingPerson, NewPersonSpec>;

struct HubEvent {
  std::uint64_t id = 0;
  std::string type;
  nlohmann::json data;
};

struct HubConfig {
  std::uint64_t seed = 1;
  facecore::EmbedderDims dims{};
  double accept_threshold = edgenode::kDefaultAcceptThreshold;
  trainer::TrainConfig train = [] {
    trainer::TrainConfig c;
    c.freeze_first_layer = true;
    return c;
  }();
  /// Replaces the random bootstrap weights when set.
  std::optional<facecore::EmbedderParams> bootstrap_params;
  /// Persist every change under this directory; in-memory only when unset.
  std::optional<std::filesystem::path> data_dir;
};

/// Overrides `base` with the keys present in `j`:
/// {seed, accept_threshold, dims:{chip_size, channels, hidden, embedding}, train:{...}}.
inline HubConfig hub_config_from_json(const nlohmann::json& j, HubConfig base = {}) {
  try {
    base.seed = j.value("seed", base.seed);
    base.accept_threshold = j.value("accept_threshold", base.accept_threshold);
    if (j.contains("dims")) {
      const auto& d = j.at("dims");
      base.dims.chip_size = d.value("chip_size", base.dims.chip_size);
      base.dims.channels = d.value("channels", base.dims.channels);
      base.dims.hidden = d.value("hidden", base.dims.hidden);
      base.dims.embedding = d.value("embedding", base.dims.embedding);
      facecore::EmbedderParams::validate_dims(base.dims);
    }
    if (j.contains("train")) base.train = trainer::config_from_json(j.at("train"), base.train);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("hub config: ") + e.what());
  }
  if (!(base.accept_threshold > 0.0)) fail(ErrorCode::InvalidArgument, "accept_threshold must be positive");
  return base;
}

/// Everything a training job needs, copied out so it can run without the hub.
struct JobWork {
  std::string job_id;
  SnapshotPtr base;
  trainer::LabeledChipSet enrolled;
  trainer::LabeledChipSet new_data;
  trainer::TrainConfig cfg;
  trainer::PersonDirectory directory;
};

struct JobOutput {
  std::optional<trainer::IncrementalResult> result;
  ErrorCode error_code = ErrorCode::InvalidArgument;
  std::string error;
};

inline JobOutput compute_job(const JobWork& w) {
  JobOutput out;
  try {
    out.result = trainer::incremental_update(w.base->params, w.base->gallery, w.enrolled, w.new_data, w.cfg,
                                             w.directory);
  } catch (const Error& e) {
    out.error_code = e.code();
    out.error = e.what();
  }
  return out;
}

inline std::string slugify(const std::string& name) {
  std::string out;
  for (unsigned char c : name) {
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "person" : out;
}

inline std::string numbered(const char* prefix, std::uint64_t n) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s-%04llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

inline std::string version_stem(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%06llu", static_cast<unsigned long long>(v));
  return buf;
}

inline nlohmann::json alert_summary(const Alert& a) {
  return {{"alert_id", a.alert_id},
          {"series_id", a.series.series_id},
          {"node_id", a.node_id},
          {"status", to_string(a.status)},
          {"created_at", a.created_at},
          {"first_seen", a.series.first_seen},
          {"chip_count", a.series.chips.size()},
          {"labeled_as", a.labeled_as ? nlohmann::json(*a.labeled_as) : nlohmann::json(nullptr)}};
}

inline nlohmann::json to_json(const TrainingJob& j) {
  return {{"job_id", j.job_id},
          {"trigger", to_string(j.trigger)},
          {"batches", j.batches},
          {"summary", j.summary},
          {"state", to_string(j.state)},
          {"produced_version", j.produced_version ? nlohmann::json(*j.produced_version) : nlohmann::json(nullptr)},
          {"error", j.error},
          {"created_at", j.created_at}};
}

inline TrainingJob job_from_json(const nlohmann::json& j) {
  TrainingJob t;
  t.job_id = j.at("job_id").get<std::string>();
  t.trigger = job_trigger_from_string(j.at("trigger").get<std::string>());
  t.batches = j.at("batches").get<std::vector<std::uint64_t>>();
  t.summary = j.value("summary", "");
  t.state = job_state_from_string(j.at("state").get<std::string>());
  if (!j.at("produced_version").is_null()) t.produced_version = j.at("produced_version").get<std::uint64_t>();
  t.error = j.value("error", "");
  t.created_at = j.value("created_at", Timestamp{0});
  return t;
}

/// The cloud node: single owner of alerts, enrollments, policy, jobs and the model registry.
///
/// Not thread-safe; callers serialize commands (HubService does so with a mutex).
/// Every command takes the current time so runs on a simulated clock replay exactly.
class Hub {
 public:
  using Listener = std::function<void(const HubEvent&)>;

  explicit Hub(HubConfig config, Timestamp now = 0) : config_(std::move(config)) {
    auto params = config_.bootstrap_params ? *config_.bootstrap_params
                                           : facecore::EmbedderParams::random(config_.dims, config_.seed);
    config_.dims = params.dims;
    policy_ = default_policy();
    auto snap = std::make_shared<ModelSnapshot>();
    snap->version = 1;
    snap->params = std::move(params);
    snap->accept_threshold = config_.accept_threshold;
    snap->created_at = now;
    snap->devices = policy_.devices;
    snap->validate();
    registry_.push_back(std::move(snap));
    if (config_.data_dir) {
      persist_policy();
      persist_persons();
      persist_model(*registry_.back(), nullptr);
      persist_counters();
    }
  }

  /// Restores a hub persisted under `config.data_dir`. RUNNING jobs go back to QUEUED.
  static Hub load(HubConfig config) {
    if (!config.data_dir) fail(ErrorCode::InvalidArgument, "load needs a data directory");
    const auto dir = *config.data_dir;
    if (!std::filesystem::exists(dir / "hub.json")) fail(ErrorCode::IoFailure, "no hub state under " + dir.string());
    Hub h(RestoreTag{}, std::move(config));
    h.restore(dir);
    return h;
  }

  // ---- queries -----------------------------------------------------------

  [[nodiscard]] const HubConfig& config() const noexcept { return config_; }
  [[nodiscard]] const AccessPolicy& policy() const noexcept { return policy_; }
  [[nodiscard]] const std::map<std::string, PersonRecord>& persons() const noexcept { return persons_; }
  [[nodiscard]] const std::map<std::string, Alert>& alerts() const noexcept { return alerts_; }
  [[nodiscard]] const std::vector<TrainingJob>& jobs() const noexcept { return jobs_; }
  [[nodiscard]] const std::vector<Enrollment>& enrollments() const noexcept { return enrollments_; }
  [[nodiscard]] const std::vector<nlohmann::json>& access_log() const noexcept { return access_log_; }
  [[nodiscard]] const std::vector<HubEvent>& events() const noexcept { return events_; }
  [[nodiscard]] const std::vector<SnapshotPtr>& registry() const noexcept { return registry_; }
  [[nodiscard]] std::uint64_t active_version() const noexcept { return registry_.back()->version; }
  [[nodiscard]] const std::set<std::pair<std::string, std::string>>& social_keys() const noexcept { return social_keys_; }
  std::set<std::pair<std::string, std::string>>& social_keys() noexcept { return social_keys_; }

  /// `version` nullopt means LATEST.
  [[nodiscard]] SnapshotPtr snapshot_for(std::optional<std::uint64_t> version = std::nullopt) const {
    if (!version) return registry_.back();
    if (*version < 1 || *version > registry_.size()) {
      fail(ErrorCode::NoSuchVersion, "no model version " + std::to_string(*version));
    }
    return registry_[*version - 1];
  }

  [[nodiscard]] const Alert& alert(const std::string& id) const {
    auto it = alerts_.find(id);
    if (it == alerts_.end()) fail(ErrorCode::AlertNotFound, id);
    return it->second;
  }

  [[nodiscard]] std::optional<std::string> alert_for_series(const std::string& series_id) const {
    auto it = series_alerts_.find(series_id);
    if (it == series_alerts_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] bool has_queued_job() const {
    return std::any_of(jobs_.begin(), jobs_.end(), [](const auto& j) { return j.state == JobState::Queued; });
  }

  [[nodiscard]] bool has_running_job() const {
    return std::any_of(jobs_.begin(), jobs_.end(), [](const auto& j) { return j.state == JobState::Running; });
  }

  [[nodiscard]] int level_of(const std::string& person) const { return policy_.level_of(person); }

  std::size_t subscribe(Listener l) {
    listeners_.push_back(std::move(l));
    return listeners_.size() - 1;
  }

  // ---- commands ----------------------------------------------------------

  /// Creates a PENDING alert for a new series; a series seen before returns its existing alert.
  const Alert& ingest_escalation(const PhotoSeries& series, Timestamp now) {
    edgenode::validate(series);
    if (auto existing = alert_for_series(series.series_id)) return alerts_.at(*existing);
    Alert a;
    a.alert_id = numbered("alert", ++next_alert_);
    a.series = series;
    a.node_id = series.node_id;
    a.created_at = now;
    auto& stored = alerts_.emplace(a.alert_id, std::move(a)).first->second;
    series_alerts_[series.series_id] = stored.alert_id;
    persist_alert(stored, true);
    persist_counters();
    emit("alert", alert_summary(stored));
    return stored;
  }

  /// Labels a pending alert; its chips become an enrollment batch and a job is queued.
  std::pair<Alert, TrainingJob> label_alert(const std::string& alert_id, const PersonSpec& who, Timestamp now) {
    auto it = alerts_.find(alert_id);
    if (it == alerts_.end()) fail(ErrorCode::AlertNotFound, alert_id);
    Alert& a = it->second;
    if (a.status != AlertStatus::Pending) fail(ErrorCode::AlertNotPending, alert_id + " is " + to_string(a.status));
    std::string person_id;
    if (const auto* e = std::get_if<ExistingPerson>(&who)) {
      if (!persons_.contains(e->person_id)) fail(ErrorCode::UnknownPerson, e->person_id);
      person_id = e->person_id;
    } else {
      const auto& n = std::get<NewPersonSpec>(who);
      check_level(n.permission_level);
      if (n.display_name.empty()) fail(ErrorCode::InvalidArgument, "display name required");
      person_id = unique_person_id(slugify(n.display_name));
      add_person(person_id, {n.display_name, Provenance::Escalation, now}, n.permission_level);
    }
    const auto batch = ++next_batch_;
    for (const auto& chip : a.series.chips) add_enrollment({person_id, Provenance::Escalation, batch, chip});
    a.status = AlertStatus::Labeled;
    a.labeled_as = person_id;
    persist_alert(a, false);
    persist_enrollments();
    emit("alert", alert_summary(a));
    const auto& job = enqueue_job(JobTrigger::Label, {batch}, "label " + alert_id + " as " + person_id, now);
    return {a, job};
  }

  const Alert& dismiss_alert(const std::string& alert_id, Timestamp now) {
    (void)now;
    auto it = alerts_.find(alert_id);
    if (it == alerts_.end()) fail(ErrorCode::AlertNotFound, alert_id);
    Alert& a = it->second;
    if (a.status != AlertStatus::Pending) fail(ErrorCode::AlertNotPending, alert_id + " is " + to_string(a.status));
    a.status = AlertStatus::Dismissed;
    persist_alert(a, false);
    persist_counters();
    emit("alert", alert_summary(a));
    return a;
  }

  /// Replaces the policy. Person levels only apply to persons the hub knows.
  /// A change that affects devices or known levels is pushed to nodes as a new snapshot.
  void set_policy(AccessPolicy p, Timestamp now) {
    p.validate();
    if (p == policy_) return;
    policy_ = std::move(p);
    persist_policy();
    emit("policy", to_json(policy_));
    publish_policy_snapshot(now);
  }

  void set_person_level(const std::string& person_id, int level, Timestamp now) {
    if (!persons_.contains(person_id)) fail(ErrorCode::UnknownPerson, person_id);
    check_level(level);
    auto p = policy_;
    p.persons[person_id] = level;
    set_policy(std::move(p), now);
  }

  /// Adds social records as one enrollment batch and queues an ingest job.
  /// Tag names become person ids; new persons start at level 1.
  std::optional<TrainingJob> add_social_records(const trainer::LabeledChipSet& records, Timestamp now) {
    if (records.empty()) return std::nullopt;
    const auto batch = ++next_batch_;
    for (const auto& r : records) {
      if (!persons_.contains(r.person_id)) add_person(r.person_id, {r.person_id, Provenance::Social, now}, 1);
      add_enrollment({r.person_id, Provenance::Social, batch, r.chip});
    }
    persist_enrollments();
    persist_social_keys();
    return enqueue_job(JobTrigger::Ingest, {batch}, "ingest " + std::to_string(records.size()) + " social faces", now);
  }

  const TrainingJob& submit_manual_job(Timestamp now) {
    return enqueue_job(JobTrigger::Manual, {}, "manual retrain on all enrollments", now);
  }

  /// Marks the oldest QUEUED job RUNNING and returns its inputs, unless a job is already running.
  std::optional<JobWork> begin_next_job(Timestamp now) {
    (void)now;
    if (has_running_job()) return std::nullopt;
    auto it = std::find_if(jobs_.begin(), jobs_.end(), [](const auto& j) { return j.state == JobState::Queued; });
    if (it == jobs_.end()) return std::nullopt;
    it->state = JobState::Running;
    append_joblog(*it);
    emit("job", to_json(*it));

    JobWork w;
    w.job_id = it->job_id;
    w.base = registry_.back();
    w.cfg = config_.train;
    w.cfg.seed = config_.train.seed + job_index(it->job_id);
    // New data is the job's own batches; everything enrolled before them is carried along.
    // Batches queued after this job belong to later jobs.
    const std::set<std::uint64_t> delta(it->batches.begin(), it->batches.end());
    const std::uint64_t horizon = delta.empty() ? next_batch_ : *delta.rbegin();
    for (const auto& e : enrollments_) {
      trainer::LabeledRecord r{e.chip, e.person_id, e.source};
      if (delta.empty() || delta.contains(e.batch)) {
        w.new_data.push_back(std::move(r));
      } else if (e.batch < horizon) {
        w.enrolled.push_back(std::move(r));
      }
    }
    w.directory = directory();
    if (delta.empty()) {
      // A manual job starts the gallery from scratch on everything enrolled.
      auto base = std::make_shared<ModelSnapshot>(*w.base);
      base->gallery = {};
      w.base = std::move(base);
    }
    return w;
  }

  /// Finishes a RUNNING job: appends version active+1 on success, records the cause on failure.
  const TrainingJob& complete_job(const std::string& job_id, const JobOutput& out, Timestamp now) {
    auto it = std::find_if(jobs_.begin(), jobs_.end(), [&](const auto& j) { return j.job_id == job_id; });
    if (it == jobs_.end() || it->state != JobState::Running) fail(ErrorCode::InvalidArgument, job_id + " is not running");
    if (!out.result) {
      it->state = JobState::Failed;
      it->error = std::string(to_string(out.error_code)) + ": " + out.error;
      append_joblog(*it);
      emit("job", to_json(*it));
      return *it;
    }
    auto snap = std::make_shared<ModelSnapshot>();
    snap->version = active_version() + 1;
    snap->params = out.result->params;
    snap->gallery = apply_directory(out.result->gallery);
    snap->accept_threshold = config_.accept_threshold;
    snap->created_at = now;
    snap->devices = policy_.devices;
    snap->validate();
    it->state = JobState::Done;
    it->produced_version = snap->version;
    auto cfg = config_.train;
    cfg.seed = config_.train.seed + job_index(job_id);
    const auto manifest = trainer::training_manifest(cfg, out.result->epochs, snap->version);
    publish(std::move(snap), &manifest);
    append_joblog(*it);
    emit("job", to_json(*it));
    return *it;
  }

  /// Runs queued jobs one after another on the calling thread.
  std::vector<std::string> run_pending_jobs(Timestamp now) {
    std::vector<std::string> ran;
    while (auto w = begin_next_job(now)) {
      complete_job(w->job_id, compute_job(*w), now);
      ran.push_back(w->job_id);
    }
    return ran;
  }

  /// Logs a node decision together with the hub's own verdict under the current policy.
  nlohmann::json record_decision(const edgenode::AccessDecision& d, Timestamp now) {
    auto entry = edgenode::to_json(d);
    std::string verdict;
    if (!d.person) {
      verdict = "DENY";
    } else {
      try {
        verdict = check_access(d.person, d.device_id, policy_) == AccessVerdict::Grant ? "GRANT" : "DENY";
      } catch (const Error&) {
        verdict = "UNKNOWN_DEVICE";
      }
    }
    entry["hub_verdict"] = verdict;
    entry["received_at"] = now;
    access_log_.push_back(entry);
    if (config_.data_dir) append_line(*config_.data_dir / "log" / "access.jsonl", entry.dump());
    emit("access", entry);
    return entry;
  }

  /// Directory used to name and level gallery entries.
  [[nodiscard]] trainer::PersonDirectory directory() const {
    trainer::PersonDirectory d;
    for (const auto& [id, p] : persons_) d[id] = {p.display_name, level_of(id), p.provenance};
    return d;
  }

  [[nodiscard]] nlohmann::json persons_json() const {
    nlohmann::json out = nlohmann::json::array();
    std::map<std::string, int> chips;
    for (const auto& e : enrollments_) ++chips[e.person_id];
    const auto& gallery = registry_.back()->gallery;
    for (const auto& [id, p] : persons_) {
      out.push_back({{"person_id", id},
                     {"display_name", p.display_name},
                     {"permission_level", level_of(id)},
                     {"level_name", level_name(level_of(id))},
                     {"provenance", facecore::to_string(p.provenance)},
                     {"enrolled_chips", chips[id]},
                     {"in_model", gallery.contains(id)},
                     {"created_at", p.created_at}});
    }
    return out;
  }

 private:
  struct RestoreTag {};
  Hub(RestoreTag, HubConfig config) : config_(std::move(config)) {}

  HubConfig config_;
  AccessPolicy policy_;
  std::map<std::string, PersonRecord> persons_;
  std::map<std::string, Alert> alerts_;
  std::map<std::string, std::string> series_alerts_;
  std::vector<Enrollment> enrollments_;
  std::vector<TrainingJob> jobs_;
  std::vector<SnapshotPtr> registry_;
  std::vector<nlohmann::json> access_log_;
  std::vector<HubEvent> events_;
  std::vector<Listener> listeners_;
  std::set<std::pair<std::string, std::string>> social_keys_;
  std::uint64_t next_alert_ = 0;
  std::uint64_t next_job_ = 0;
  std::uint64_t next_batch_ = 0;
  std::uint64_t next_event_ = 0;

  static std::uint64_t job_index(const std::string& job_id) {
    return std::stoull(job_id.substr(job_id.find('-') + 1));
  }

  void emit(const std::string& type, nlohmann::json data) {
    events_.push_back({++next_event_, type, std::move(data)});
    for (const auto& l : listeners_) l(events_.back());
  }

  std::string unique_person_id(const std::string& base) const {
    if (!persons_.contains(base)) return base;
    for (int k = 2;; ++k) {
      auto id = base + "-" + std::to_string(k);
      if (!persons_.contains(id)) return id;
    }
  }

  void add_person(const std::string& id, PersonRecord rec, int level) {
    persons_[id] = std::move(rec);
    policy_.persons[id] = level;
    persist_persons();
    persist_policy();
  }

  void add_enrollment(Enrollment e) {
    if (config_.data_dir) {
      const auto rel = enrollment_file(e.batch, count_in_batch(e.batch));
      write_file_atomic(*config_.data_dir / rel, encode_pnm(e.chip.image()));
    }
    enrollments_.push_back(std::move(e));
  }

  std::size_t count_in_batch(std::uint64_t batch) const {
    return static_cast<std::size_t>(
        std::count_if(enrollments_.begin(), enrollments_.end(), [&](const auto& e) { return e.batch == batch; }));
  }

  static std::string enrollment_file(std::uint64_t batch, std::size_t k) {
    return "chips/enroll/" + numbered("batch", batch) + "/" + std::to_string(k) + ".pgm";
  }

  const TrainingJob& enqueue_job(JobTrigger trigger, std::vector<std::uint64_t> batches, std::string summary,
                                 Timestamp now) {
    TrainingJob j;
    j.job_id = numbered("job", ++next_job_);
    j.trigger = trigger;
    j.batches = std::move(batches);
    j.summary = std::move(summary);
    j.created_at = now;
    jobs_.push_back(std::move(j));
    append_joblog(jobs_.back());
    persist_counters();
    emit("job", to_json(jobs_.back()));
    return jobs_.back();
  }

  /// Current names and levels win over whatever the trainer carried forward.
  facecore::IdentityGallery apply_directory(const facecore::IdentityGallery& g) const {
    facecore::IdentityGallery out;
    for (const auto& [id, entry] : g.entries()) {
      auto e = entry;
      e.permission_level = level_of(id);
      if (auto it = persons_.find(id); it != persons_.end()) {
        e.display_name = it->second.display_name;
        e.provenance = it->second.provenance;
      }
      out.put(id, std::move(e));
    }
    return out;
  }

  void publish_policy_snapshot(Timestamp now) {
    const auto& cur = *registry_.back();
    auto snap = std::make_shared<ModelSnapshot>(cur);
    snap->gallery = apply_directory(cur.gallery);
    snap->devices = policy_.devices;
    if (snap->gallery == cur.gallery && snap->devices == cur.devices) return;
    snap->version = cur.version + 1;
    snap->created_at = now;
    const nlohmann::json manifest = {{"model_version", snap->version}, {"reason", "policy"}};
    publish(std::move(snap), &manifest);
  }

  void publish(std::shared_ptr<ModelSnapshot> snap, const nlohmann::json* manifest) {
    registry_.push_back(std::move(snap));
    persist_model(*registry_.back(), manifest);
    persist_counters();
    emit("model_version", {{"version", registry_.back()->version},
                           {"created_at", registry_.back()->created_at},
                           {"identities", registry_.back()->gallery.size()}});
  }

  // ---- persistence -------------------------------------------------------

  static nlohmann::json persons_file_json(const std::map<std::string, PersonRecord>& persons) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [id, p] : persons) {
      out[id] = {{"display_name", p.display_name},
                 {"provenance", facecore::to_string(p.provenance)},
                 {"created_at", p.created_at}};
    }
    return out;
  }

  void persist_policy() const {
    if (config_.data_dir) write_file_atomic(*config_.data_dir / "policy.json", to_json(policy_).dump(2) + "\n");
  }

  void persist_persons() const {
    if (config_.data_dir) {
      write_file_atomic(*config_.data_dir / "persons.json", persons_file_json(persons_).dump(2) + "\n");
    }
  }

  void persist_counters() const {
    if (!config_.data_dir) return;
    const nlohmann::json j = {{"format", "sof-hub/1"},
                              {"seed", config_.seed},
                              {"active_version", active_version()},
                              {"next_alert", next_alert_},
                              {"next_job", next_job_},
                              {"next_batch", next_batch_}};
    write_file_atomic(*config_.data_dir / "hub.json", j.dump(2) + "\n");
  }

  void persist_alert(const Alert& a, bool with_chips) const {
    if (!config_.data_dir) return;
    const auto& dir = *config_.data_dir;
    nlohmann::json j = alert_summary(a);
    std::vector<std::string> files;
    for (std::size_t k = 0; k < a.series.chips.size(); ++k) {
      files.push_back("chips/series/" + a.series.series_id + "/" + std::to_string(k) + ".pgm");
      if (with_chips) write_file_atomic(dir / files.back(), encode_pnm(a.series.chips[k].image()));
    }
    j["chip_files"] = files;
    j["chip_times"] = a.series.chip_times;
    write_file_atomic(dir / "alerts" / (a.alert_id + ".json"), j.dump(2) + "\n");
  }

  void persist_enrollments() const {
    if (!config_.data_dir) return;
    std::string out;
    std::map<std::uint64_t, std::size_t> k;
    for (const auto& e : enrollments_) {
      const nlohmann::json j = {{"person_id", e.person_id},
                                {"source", facecore::to_string(e.source)},
                                {"batch", e.batch},
                                {"file", enrollment_file(e.batch, k[e.batch]++)}};
      out += j.dump() + "\n";
    }
    write_file_atomic(*config_.data_dir / "chips" / "enrollments.jsonl", out);
  }

  void persist_social_keys() const {
    if (!config_.data_dir) return;
    nlohmann::json j = nlohmann::json::array();
    for (const auto& [photo, tag] : social_keys_) j.push_back({photo, tag});
    write_file_atomic(*config_.data_dir / "social_keys.json", j.dump() + "\n");
  }

  void persist_model(const ModelSnapshot& s, const nlohmann::json* manifest) const {
    if (!config_.data_dir) return;
    const auto dir = *config_.data_dir / "models";
    write_file_atomic(dir / (version_stem(s.version) + ".json"), edgenode::to_json(s).dump() + "\n");
    if (manifest) write_file_atomic(dir / (version_stem(s.version) + ".manifest.json"), manifest->dump(2) + "\n");
  }

  void append_joblog(const TrainingJob& j) const {
    if (config_.data_dir) append_line(*config_.data_dir / "joblog.jsonl", to_json(j).dump());
  }

  static void append_line(const std::filesystem::path& path, const std::string& line) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) fail(ErrorCode::IoFailure, "cannot append to " + path.string());
    out << line << '\n';
    out.flush();
    if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
  }

  static std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::vector<nlohmann::json> out;
    if (!std::filesystem::exists(path)) return out;
    const auto text = read_file(path);
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) break;  // a torn final line is ignored
      if (end > start) out.push_back(nlohmann::json::parse(text.substr(start, end - start)));
      start = end + 1;
    }
    return out;
  }

  void restore(const std::filesystem::path& dir) {
    try {
      const auto counters = nlohmann::json::parse(read_file(dir / "hub.json"));
      next_alert_ = counters.at("next_alert").get<std::uint64_t>();
      next_job_ = counters.at("next_job").get<std::uint64_t>();
      next_batch_ = counters.at("next_batch").get<std::uint64_t>();
      const auto active = counters.at("active_version").get<std::uint64_t>();

      policy_ = policy_from_json(nlohmann::json::parse(read_file(dir / "policy.json")));
      const auto persons = nlohmann::json::parse(read_file(dir / "persons.json"));
      for (const auto& [id, p] : persons.items()) {
        persons_[id] = {p.at("display_name").get<std::string>(),
                        facecore::provenance_from_string(p.at("provenance").get<std::string>()),
                        p.value("created_at", Timestamp{0})};
      }
      for (std::uint64_t v = 1; v <= active; ++v) {
        const auto path = dir / "models" / (version_stem(v) + ".json");
        registry_.push_back(std::make_shared<ModelSnapshot>(
            edgenode::snapshot_from_json(nlohmann::json::parse(read_file(path)))));
        if (registry_.back()->version != v) fail(ErrorCode::CorruptSnapshot, path.string() + " has the wrong version");
      }
      config_.dims = registry_.front()->params.dims;

      for (std::uint64_t n = 1; n <= next_alert_; ++n) {
        const auto id = numbered("alert", n);
        const auto j = nlohmann::json::parse(read_file(dir / "alerts" / (id + ".json")));
        Alert a;
        a.alert_id = id;
        a.node_id = j.at("node_id").get<std::string>();
        a.status = alert_status_from_string(j.at("status").get<std::string>());
        a.created_at = j.at("created_at").get<Timestamp>();
        if (!j.at("labeled_as").is_null()) a.labeled_as = j.at("labeled_as").get<std::string>();
        a.series.series_id = j.at("series_id").get<std::string>();
        a.series.node_id = a.node_id;
        a.series.first_seen = j.at("first_seen").get<Timestamp>();
        a.series.chip_times = j.at("chip_times").get<std::vector<Timestamp>>();
        for (const auto& f : j.at("chip_files")) a.series.chips.push_back(read_chip(dir / f.get<std::string>()));
        series_alerts_[a.series.series_id] = id;
        alerts_.emplace(id, std::move(a));
      }

      for (const auto& j : read_jsonl(dir / "chips" / "enrollments.jsonl")) {
        enrollments_.push_back({j.at("person_id").get<std::string>(),
                                facecore::provenance_from_string(j.at("source").get<std::string>()),
                                j.at("batch").get<std::uint64_t>(), read_chip(dir / j.at("file").get<std::string>())});
      }

      std::map<std::string, TrainingJob> latest;
      std::vector<std::string> order;
      for (const auto& j : read_jsonl(dir / "joblog.jsonl")) {
        auto job = job_from_json(j);
        if (!latest.contains(job.job_id)) order.push_back(job.job_id);
        latest[job.job_id] = std::move(job);
      }
      for (const auto& id : order) {
        auto job = latest.at(id);
        // A job cut off mid-run never published; it runs again from the start.
        if (job.state == JobState::Running) job.state = JobState::Queued;
        jobs_.push_back(std::move(job));
      }

      if (std::filesystem::exists(dir / "social_keys.json")) {
        for (const auto& k : nlohmann::json::parse(read_file(dir / "social_keys.json"))) {
          social_keys_.insert({k.at(0).get<std::string>(), k.at(1).get<std::string>()});
        }
      }
      access_log_ = read_jsonl(dir / "log" / "access.jsonl");
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("hub state: ") + e.what());
    }
  }
};

}  // namespace sof::cloudhub
