// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "sof/cloudhub/hub.hpp"
#include "sof/edgenode/node.hpp"
#include "sof/facecore/alignment.hpp"
#include "sof/harness/corpus.hpp"
#include "sof/harness/scenario.hpp"
#include "sof/social/graph.hpp"
#include "sof/social/ingest.hpp"
#include "sof/trainer/eval.hpp"
#include "sof/trainer/train.hpp"

using namespace sof;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = SOF_SCENARIO_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  const char* name;
  double budget_s;  // wall-clock limit; exceeding it fails the criterion
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- gradient ---------------------------------------------------------------

trainer::LabeledChipSet noise_set(Rng& rng, int identities, int per_identity, int size) {
  trainer::LabeledChipSet set;
  for (int i = 0; i < identities; ++i) {
    for (int c = 0; c < per_identity; ++c) {
      Image img(size, size, 1);
      for (double& v : img.pixels()) v = rng.uniform();
      set.push_back({FaceChip(std::move(img)), "id" + std::to_string(i), facecore::Provenance::Enrollment});
    }
  }
  return set;
}

// Mean hinge over the triplets, recomputed from scratch through embed().
double hinge_loss(const facecore::EmbedderParams& p, const trainer::LabeledChipSet& set,
                  const std::vector<trainer::Triplet>& ts, double margin, double* closest_kink = nullptr) {
  double sum = 0.0, kink = INFINITY;
  for (const auto& t : ts) {
    const auto a = facecore::embed(set[t.anchor].chip, p);
    const double l = facecore::squared_distance(a, facecore::embed(set[t.positive].chip, p)) -
                     facecore::squared_distance(a, facecore::embed(set[t.negative].chip, p)) + margin;
    kink = std::min(kink, std::abs(l));
    sum += std::max(0.0, l);
  }
  if (closest_kink) *closest_kink = kink;
  return sum / static_cast<double>(ts.size());
}

Outcome gradient_check() {
  const facecore::EmbedderDims toy{8, 1, 4, 3};
  constexpr double kEps = 1e-5;
  Rng rng(2024);
  double worst = 0.0;
  int draws = 0;
  for (std::uint64_t seed = 100; draws < 20; ++seed) {
    auto params = facecore::EmbedderParams::random(toy, seed);
    for (double& b : params.b1) b = rng.uniform(-0.5, 0.5);
    for (double& b : params.b2) b = rng.uniform(-0.5, 0.5);
    const auto set = noise_set(rng, 3, 3, 8);
    const auto ts = trainer::mine_triplets(set, params, trainer::TrainConfig{});
    double kink = 0.0;
    hinge_loss(params, set, ts, 0.2, &kink);
    if (kink < 1e-3) continue;  // not differentiable at the hinge
    ++draws;
    const auto prepared = trainer::PreparedSet::from(set, toy);
    const auto analytic = trainer::loss_and_gradient(params, prepared.inputs, ts, 0.2).gradient;
    const auto tensors = [](facecore::EmbedderParams& p) { return std::array{&p.w1, &p.b1, &p.w2, &p.b2}; };
    auto g = analytic;
    for (int k = 0; k < 4; ++k) {
      for (std::size_t i = 0; i < tensors(params)[k]->size(); ++i) {
        auto plus = params, minus = params;
        (*tensors(plus)[k])[i] += kEps;
        (*tensors(minus)[k])[i] -= kEps;
        const double numeric = (hinge_loss(plus, set, ts, 0.2) - hinge_loss(minus, set, ts, 0.2)) / (2 * kEps);
        const double a = (*tensors(g)[k])[i];
        worst = std::max(worst, std::abs(a - numeric) / std::max({1e-6, std::abs(a), std::abs(numeric)}));
      }
    }
  }
  return {worst <= 1e-4, fmt("max relative error %.2e over %d draws (limit 1e-4)", worst, draws)};
}

// ---- triplet loss -----------------------------------------------------------

facecore::EmbeddingVector on_circle(double angle) {
  return facecore::EmbeddingVector::from_unit({std::cos(angle), std::sin(angle)});
}

// Point on the unit circle whose squared chord to angle 0 is d.
double chord_angle(double d) { return std::acos(1.0 - d / 2.0); }

Outcome triplet_oracle() {
  const auto a = on_circle(0.0);
  double worst = 0.0;
  worst = std::max(worst, std::abs(trainer::triplet_loss(a, a, a, 0.2) - 0.2));
  worst = std::max(worst, std::abs(trainer::triplet_loss(a, on_circle(chord_angle(0.1)), on_circle(-chord_angle(1.0)), 0.2)));
  worst = std::max(worst,
                   std::abs(trainer::triplet_loss(a, on_circle(chord_angle(0.8)), on_circle(-chord_angle(0.5)), 0.2) - 0.5));
  Rng rng(77);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = on_circle(rng.uniform(0, 7)), p = on_circle(rng.uniform(0, 7)), n = on_circle(rng.uniform(0, 7));
    const double m1 = rng.uniform(0.001, 2.0), m2 = m1 + rng.uniform(0.0, 2.0);
    const double l1 = trainer::triplet_loss(x, p, n, m1), l2 = trainer::triplet_loss(x, p, n, m2);
    violations += l1 < 0.0 || l2 < l1;
  }
  return {worst <= 1e-12 && violations == 0,
          fmt("example error %.1e (limit 1e-12), %d sign/monotonicity violations in 1000", worst, violations)};
}

// ---- learnability and incremental ------------------------------------------

const harness::Split& reference() {
  static const auto split = harness::reference_split();
  return split;
}

const trainer::TrainResult& reference_model() {
  static const auto r = trainer::train(reference().train, facecore::EmbedderParams::random({}, 1), trainer::TrainConfig{});
  return r;
}

Outcome learnability() {
  const auto& model = reference_model();
  const auto report = trainer::evaluate_set(reference().validation, model.params);
  const bool ok = model.epochs.size() <= 50 && report.auc >= 0.95 && report.mean_accuracy >= 0.90;
  return {ok, fmt("%zu epochs: AUC %.4f (min 0.95), 10-fold accuracy %.4f +- %.4f (min 0.90)", model.epochs.size(),
                  report.auc, report.mean_accuracy, report.std_accuracy)};
}

// Closed-set nearest-centroid accuracy on validation chips of `ids`.
double identification_accuracy(const facecore::EmbedderParams& p, const facecore::IdentityGallery& g,
                               const std::function<bool(const std::string&)>& ids) {
  int ok = 0, n = 0;
  for (const auto& r : reference().validation) {
    if (!ids(r.person_id)) continue;
    const auto c = facecore::classify(facecore::embed(r.chip, p), g, 4.0);
    ok += c.label && *c.label == r.person_id;
    ++n;
  }
  return static_cast<double>(ok) / n;
}

Outcome incremental() {
  const auto is_old = [](const std::string& id) { return id < harness::identity_name(15); };
  trainer::LabeledChipSet old_train, new_train;
  for (const auto& r : reference().train) (is_old(r.person_id) ? old_train : new_train).push_back(r);

  const auto base = trainer::train(old_train, facecore::EmbedderParams::random({}, 1), trainer::TrainConfig{});
  const auto g0 = trainer::build_gallery(base.params, old_train, {});
  const double auc0 = trainer::evaluate_set(reference().validation, base.params).auc;
  const double acc0 = identification_accuracy(base.params, g0, is_old);

  const auto inc = trainer::incremental_update(base.params, g0, old_train, new_train, trainer::TrainConfig{});
  const double auc1 = trainer::evaluate_set(reference().validation, inc.params).auc;
  const double acc1 = identification_accuracy(inc.params, inc.gallery, is_old);
  return {auc1 >= auc0 + 0.01 && acc0 - acc1 <= 0.02,
          fmt("AUC %.4f -> %.4f (need +0.01), old-identity accuracy %.4f -> %.4f (max drop 0.02)", auc0, auc1, acc0,
              acc1)};
}

Outcome calibration() {
  const auto report = trainer::evaluate_set(reference().validation, reference_model().params);
  const double tau = trainer::calibrate_threshold(report, 0.02);
  return {true, fmt("tau at FAR 0.02 = %.4f, shipped default %.2f", tau, edgenode::kDefaultAcceptThreshold)};
}

// ---- AUC oracle -------------------------------------------------------------

double rank_statistic(const std::vector<trainer::ScoredPair>& pairs) {
  double wins = 0, total = 0;
  for (const auto& s : pairs) {
    if (!s.same) continue;
    for (const auto& d : pairs) {
      if (d.same) continue;
      total += 1;
      wins += d.distance > s.distance ? 1.0 : d.distance == s.distance ? 0.5 : 0.0;
    }
  }
  return wins / total;
}

Outcome auc_oracle() {
  Rng rng(4242);
  double worst = 0.0;
  for (int set = 0; set < 200; ++set) {
    std::vector<trainer::ScoredPair> pairs;
    const int n = 20 + static_cast<int>(rng.index(200));
    for (int i = 0; i < n; ++i) {
      const bool same = i == 0 || (i != 1 && rng.uniform() < 0.5);
      double d = rng.uniform(0.0, 2.0) + (same ? 0.0 : rng.uniform(0.0, 1.0));
      if (set % 3 == 0) d = std::round(d * 10.0) / 10.0;  // ties
      pairs.push_back({d, same});
    }
    worst = std::max(worst, std::abs(trainer::roc_auc(pairs) - rank_statistic(pairs)));
  }
  return {worst <= 1e-9, fmt("max |trapezoid - rank statistic| %.1e over 200 sets (limit 1e-9)", worst)};
}

// ---- alignment --------------------------------------------------------------

Outcome alignment() {
  Rng rng(9001);
  const auto tmpl = facecore::template_landmarks(kDefaultChipSize);
  double worst = 0.0;
  int checked = 0;
  while (checked < 1000) {
    facecore::Landmarks lm{{rng.uniform(0, 640), rng.uniform(0, 480)},
                           {rng.uniform(0, 640), rng.uniform(0, 480)},
                           {rng.uniform(0, 640), rng.uniform(0, 480)}};
    // Non-degenerate: eyes ordered and a triangle of real area.
    const double area = std::abs((lm.right_eye.x - lm.left_eye.x) * (lm.nose_tip.y - lm.left_eye.y) -
                                 (lm.nose_tip.x - lm.left_eye.x) * (lm.right_eye.y - lm.left_eye.y)) / 2.0;
    if (lm.left_eye.x >= lm.right_eye.x || area < 1.0) continue;
    const auto t = facecore::solve_alignment(lm, kDefaultChipSize);
    for (const auto& [src, dst] : {std::pair{lm.left_eye, tmpl.left_eye}, std::pair{lm.right_eye, tmpl.right_eye},
                                   std::pair{lm.nose_tip, tmpl.nose_tip}}) {
      const auto p = t.apply(src);
      worst = std::max({worst, std::abs(p.x - dst.x), std::abs(p.y - dst.y)});
    }
    ++checked;
  }
  return {worst <= 1e-9, fmt("max landmark error %.1e px over 1000 triples (limit 1e-9)", worst)};
}

// ---- node state machine -----------------------------------------------------

struct ScriptWorld {
  static constexpr facecore::EmbedderDims kDims{32, 1, 16, 8};
  static constexpr int kFaceSize = 48;
  std::vector<std::pair<Image, facecore::Landmarks>> faces;  // 6 identities x 4 renders
  std::vector<edgenode::SnapshotPtr> snapshots;               // v1..v8, then corrupt, then null

  ScriptWorld() {
    Rng rng(515);
    for (int i = 0; i < 6; ++i) {
      const auto id = harness::make_identity("walker" + std::to_string(i), 1);
      for (int k = 0; k < 4; ++k) {
        auto [chip, lm] = harness::render_chip(id, harness::RenderParams::random(rng), rng.next(), kFaceSize);
        faces.emplace_back(quantize(chip.image()), lm);
      }
    }
    for (std::uint64_t v = 1; v <= 8; ++v) {
      auto s = std::make_shared<edgenode::ModelSnapshot>();
      s->version = v;
      s->params = facecore::EmbedderParams::random(kDims, 100 + v);
      s->accept_threshold = std::array{0.05, 0.5, 1.5}[rng.index(3)];
      for (int i = 0; i < 3; ++i) {
        const auto& [img, lm] = faces[4 * i];
        const auto e = facecore::embed(quantize(facecore::align_face(img, lm, kDims.chip_size)), s->params);
        const int level = static_cast<int>(rng.index(4));
        s->gallery = facecore::update_centroid(s->gallery, "walker" + std::to_string(i), e,
                                               facecore::NewPerson{"", level, facecore::Provenance::Enrollment});
      }
      if (rng.uniform() < 0.5) {
        s->devices["front_door"] = {"Front door", static_cast<int>(rng.index(4)), rng.uniform() < 0.3};
      }
      snapshots.push_back(std::move(s));
    }
    auto corrupt = std::make_shared<edgenode::ModelSnapshot>(*snapshots.back());
    corrupt->version = 99;
    corrupt->params.w1[0] = NAN;
    snapshots.push_back(std::move(corrupt));
    snapshots.push_back(nullptr);
  }
};

struct ScriptTally {
  std::size_t scripts = 0, steps = 0, decisions = 0, grants = 0;
  std::size_t unknown_grants = 0, regressions = 0, stale_decisions = 0;
};

void run_script(const ScriptWorld& w, std::uint64_t seed, const edgenode::NodeConfig& cfg, ScriptTally& tally) {
  Rng rng(seed);
  auto state = edgenode::make_node(cfg, w.snapshots[rng.index(3)]);
  edgenode::Timestamp t = static_cast<edgenode::Timestamp>(rng.index(1000));
  std::uint64_t last_decision_version = 0;
  const int steps = 10 + static_cast<int>(rng.index(40));
  for (int k = 0; k < steps; ++k) {
    const auto before = state.model_version();
    const double u = rng.uniform();
    edgenode::Transition tr;
    if (u < 0.6) {
      const auto& [img, lm] = w.faces[rng.index(w.faces.size())];
      t += rng.uniform() < 0.05 ? -static_cast<edgenode::Timestamp>(rng.index(500))
                                : static_cast<edgenode::Timestamp>(rng.index(2500));
      std::optional<facecore::Landmarks> seen = lm;
      if (rng.uniform() < 0.1) seen.reset();
      tr = edgenode::handle_frame(std::move(state), {t, img, seen});
    } else if (u < 0.8) {
      t += static_cast<edgenode::Timestamp>(rng.index(12000));
      tr = edgenode::tick(std::move(state), t);
    } else {
      tr = edgenode::apply_model_update(std::move(state), w.snapshots[rng.index(w.snapshots.size())], t);
    }
    state = std::move(tr.first);
    ++tally.steps;
    if (state.model_version() < before) ++tally.regressions;
    for (const auto& e : tr.second) {
      const auto* d = std::get_if<edgenode::AccessDecision>(&e);
      if (!d) continue;
      ++tally.decisions;
      if (d->model_version < last_decision_version || d->model_version != state.model_version()) ++tally.stale_decisions;
      last_decision_version = d->model_version;
      if (d->outcome != edgenode::Outcome::Granted) continue;
      ++tally.grants;
      if (!d->person || !state.snapshot->gallery.contains(*d->person)) ++tally.unknown_grants;
    }
  }
  ++tally.scripts;
}

Outcome state_machine() {
  const ScriptWorld world;
  std::vector<edgenode::NodeConfig> nodes(2);
  nodes[0].node_id = "door";
  nodes[0].device = {"Front door", 1, false};
  nodes[1].node_id = "stove";
  nodes[1].device_id = "stove";
  nodes[1].device = {"Stove", 1, true};
  ScriptTally tally;
  for (const auto& cfg : nodes) {
    for (std::uint64_t s = 0; s < 10000; ++s) run_script(world, stable_hash(cfg.node_id, s), cfg, tally);
  }

  const auto flagship = harness::load_scenario(kScenarios / "flagship.json");
  const auto first = harness::run_scenario(flagship);
  const auto second = harness::run_scenario(flagship);
  const bool flagship_ok = first.passed() && first.to_json().dump() == second.to_json().dump();

  const bool ok = tally.unknown_grants == 0 && tally.regressions == 0 && tally.stale_decisions == 0 && flagship_ok &&
                  tally.grants > 0;
  return {ok, fmt("%zu scripts, %zu steps, %zu decisions (%zu granted): %zu unknown grants, %zu version regressions, "
                  "%zu stale decisions; flagship %s (%zu expectations, identical reports %s)",
                  tally.scripts, tally.steps, tally.decisions, tally.grants, tally.unknown_grants, tally.regressions,
                  tally.stale_decisions, first.passed() ? "passed" : "FAILED", first.expectations.size(),
                  first.to_json().dump() == second.to_json().dump() ? "yes" : "no")};
}

// ---- access control ---------------------------------------------------------

Outcome acl_truth_table() {
  // The rule as stated: level >= min_level, and restricted devices need level 3. UNKNOWN is level 0.
  const auto rule = [](int level, int min_level, bool restricted) {
    return level >= min_level && !(restricted && level < 3);
  };
  int cases = 0, mismatches = 0;
  for (int min_level = 0; min_level <= 3; ++min_level) {
    for (bool restricted : {false, true}) {
      cloudhub::AccessPolicy p;
      p.devices["d"] = {"D", min_level, restricted};
      for (int level = 0; level <= 3; ++level) {
        p.persons["x"] = level;
        ++cases;
        mismatches += (cloudhub::check_access("x", "d", p) == cloudhub::AccessVerdict::Grant) !=
                      rule(level, min_level, restricted);
      }
      ++cases;
      mismatches += (cloudhub::check_access(std::nullopt, "d", p) == cloudhub::AccessVerdict::Grant) !=
                    rule(0, min_level, restricted);
    }
  }
  auto home = cloudhub::default_policy();
  home.persons["guest"] = 1;
  home.persons["child"] = 1;
  home.persons["owner"] = 3;
  const bool guest_bedroom = cloudhub::check_access("guest", "bedroom_door", home) == cloudhub::AccessVerdict::Deny;
  const bool child_stove = cloudhub::check_access("child", "stove", home) == cloudhub::AccessVerdict::Deny;
  const bool owner_stove = cloudhub::check_access("owner", "stove", home) == cloudhub::AccessVerdict::Grant;
  return {mismatches == 0 && guest_bedroom && child_stove && owner_stove,
          fmt("%d/%d cases match; guest denied bedroom door: %s; child denied stove: %s", cases - mismatches, cases,
              guest_bedroom ? "yes" : "no", child_stove ? "yes" : "no")};
}

// ---- social ingest ----------------------------------------------------------

Outcome social_ingest() {
  const auto dir = fs::temp_directory_path() / "sof-acceptance-corpus";
  fs::remove_all(dir);
  const auto corpus = harness::generate_corpus(5, 6, 21, dir);
  httplib::Server server;
  social::mount_graph(server, corpus);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  cloudhub::HubConfig cfg;
  cfg.train.epochs = 1;
  cloudhub::Hub hub(cfg, 0);
  social::HttpGraphSource source("127.0.0.1", port);
  const social::ConsentList consent{harness::identity_name(1), harness::identity_name(3)};

  auto first = social::ingest(source, consent, hub.social_keys(), {});
  social::commit_ingest(hub, first, 1000);
  const auto enrolled = hub.enrollments().size();
  auto second = social::ingest(source, consent, hub.social_keys(), {});
  social::commit_ingest(hub, second, 2000);
  auto nobody = social::ingest(source, {"someone-else"}, {}, {});

  server.stop();
  listener.join();
  fs::remove_all(dir);

  const auto& r1 = first.report;
  const bool ok = r1.photos_seen == 30 && r1.faces_ingested == 12 && r1.faces_skipped_consent == 18 &&
                  first.records.size() == 12 && r1.per_person.at(harness::identity_name(1)) == 6 &&
                  second.report.faces_ingested == 0 && second.report.duplicates_skipped == 12 &&
                  hub.enrollments().size() == enrolled && nobody.records.empty();
  return {ok, fmt("5x6 corpus, 2 consenting: %zu ingested (want 12), %zu skipped (want 18); second run %zu "
                  "ingested, %zu duplicates; no consent -> %zu records",
                  r1.faces_ingested, r1.faces_skipped_consent, second.report.faces_ingested,
                  second.report.duplicates_skipped, nobody.records.size())};
}

// ---- durability -------------------------------------------------------------

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

Outcome durability() {
  const auto with = nlohmann::json::parse(read_file(kScenarios / "restart.json"));
  auto without = with;
  auto& ev = without.at("events");
  ev.erase(std::remove_if(ev.begin(), ev.end(), [](const auto& e) { return e.at("type") == "RESTART_HUB"; }),
           ev.end());
  const auto restarts = with.at("events").size() - ev.size();

  const auto root = fs::temp_directory_path() / "sof-acceptance-durability";
  fs::remove_all(root);
  const auto a = harness::run_scenario(harness::parse_scenario(with, kScenarios), {root / "restarted", {}});
  const auto b = harness::run_scenario(harness::parse_scenario(without, kScenarios), {root / "continuous", {}});
  const auto ta = tree(root / "restarted"), tb = tree(root / "continuous");
  fs::remove_all(root);

  std::size_t differing = 0;
  for (const auto& [name, bytes] : ta) differing += !tb.contains(name) || tb.at(name) != bytes;
  differing += tb.size() > ta.size() ? tb.size() - ta.size() : 0;
  const bool core = ta.contains("persons.json") && ta.contains("policy.json") && ta.contains("hub.json") &&
                    std::any_of(ta.begin(), ta.end(), [](const auto& f) { return f.first.starts_with("alerts/"); });
  const bool ok = a.passed() && b.passed() && core && differing == 0 && a.to_json() == b.to_json();
  return {ok, fmt("%zu restarts: %zu persisted files, %zu differ; reports identical: %s; expectations pass: %s",
                  restarts, ta.size(), differing, a.to_json() == b.to_json() ? "yes" : "no",
                  a.passed() ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"gradient-correctness", 10, gradient_check},
      {"triplet-loss-oracle", 1, triplet_oracle},
      {"learnability", 300, learnability},
      {"incremental-learning", 180, incremental},
      {"auc-oracle", 1, auc_oracle},
      {"alignment-exactness", 1, alignment},
      {"state-machine-safety", 60, state_machine},
      {"acl-truth-table", 1, acl_truth_table},
      {"social-ingest", 10, social_ingest},
      {"durability", 60, durability},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = r.pass && secs <= c.budget_s;
    failed += !pass;
    std::printf("%s %-22s %s [%.2fs of %.0fs]\n", pass ? "PASS" : "FAIL", c.name, r.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
  }
  const auto info = calibration();
  std::printf("INFO %-22s %s\n", "threshold-calibration", info.detail.c_str());
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
