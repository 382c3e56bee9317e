#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sof/cloudhub/http_api.hpp"
#include "sof/cloudhub/node_link.hpp"
#include "sof/cloudhub/service.hpp"
#include "sof/edgenode/link.hpp"
#include "sof/harness/corpus.hpp"
#include "sof/harness/scenario.hpp"
#include "sof/social/graph.hpp"
#include "sof/social/ingest.hpp"
#include "sof/trainer/eval.hpp"
#include "sof/trainer/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sof;

namespace {

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, j.dump(2) + "\n");
}

/// Hub config from --config, with --seed taking precedence.
cloudhub::HubConfig load_config(const std::string& config_path, std::optional<std::uint64_t> seed,
                                cloudhub::HubConfig base = {}) {
  auto cfg = config_path.empty() ? base : cloudhub::hub_config_from_json(read_json(config_path), base);
  if (seed) cfg.seed = *seed;
  return cfg;
}

/// Every face tagged in a corpus directory, aligned and labeled by tag name.
trainer::LabeledChipSet corpus_records(const fs::path& dir, int chip_size) {
  const auto corpus = social::load_corpus(dir);
  social::ConsentList everyone;
  for (const auto& p : corpus.photos) {
    for (const auto& t : p.tags) everyone.insert(t.tag_name);
  }
  social::CorpusSource source(corpus);
  auto result = social::ingest(source, everyone, {}, {chip_size});
  if (result.report.faces_failed > 0) {
    std::clog << "warning: " << result.report.faces_failed << " faces could not be aligned\n";
  }
  return std::move(result.records);
}

std::pair<std::string, int> host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) fail(ErrorCode::InvalidArgument, "expected host:port, got '" + s + "'");
  return {s.substr(0, colon), std::stoi(s.substr(colon + 1))};
}

json eval_summary(const trainer::EvalReport& r, double far) {
  json j = {{"auc", r.auc},
            {"accuracy_mean", r.mean_accuracy},
            {"accuracy_std", r.std_accuracy},
            {"best_threshold", r.best_threshold},
            {"target_far", far}};
  try {
    j["calibrated_threshold"] = trainer::calibrate_threshold(r, far);
  } catch (const Error&) {
    j["calibrated_threshold"] = nullptr;
  }
  return j;
}

/// Blocks SIGINT/SIGTERM in every thread started after this call; `wait_for_signal` collects them.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_signal(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
}

// ---- subcommands ----------------------------------------------------------

int gen_corpus(int identities, int chips, std::uint64_t seed, const fs::path& out) {
  const auto corpus = harness::generate_corpus(identities, chips, seed, out);
  std::cout << "wrote " << corpus.photos.size() << " photos of " << identities << " identities to " << out.string()
            << "\n";
  return 0;
}

int train(const std::string& corpus, const std::string& config, std::optional<std::uint64_t> seed,
          std::optional<int> epochs, const fs::path& out) {
  cloudhub::HubConfig base;
  base.train = trainer::TrainConfig{};
  auto cfg = load_config(config, seed, base);
  if (seed) cfg.train.seed = *seed;
  if (epochs) cfg.train.epochs = *epochs;

  trainer::LabeledChipSet train_set, validation;
  if (corpus.empty()) {
    auto split = harness::reference_split();
    train_set = std::move(split.train);
    validation = std::move(split.validation);
  } else {
    train_set = corpus_records(corpus, cfg.dims.chip_size);
  }
  auto params = facecore::EmbedderParams::random(cfg.dims, cfg.seed);
  const auto data = trainer::PreparedSet::from(train_set, params.dims);
  std::vector<trainer::EpochStats> stats;
  for (int e = 0; e < cfg.train.epochs; ++e) {
    auto r = trainer::train_epoch(data, std::move(params), cfg.train, e);
    params = std::move(r.params);
    stats.push_back(r.stats);
    std::printf("epoch %3d  loss %.5f  triplets %zu\n", e + 1, r.stats.mean_loss, r.stats.triplets);
    std::fflush(stdout);
  }
  write_json(out, facecore::to_json(params));
  auto manifest = trainer::training_manifest(cfg.train, stats, 0);
  manifest["init_seed"] = cfg.seed;
  manifest["records"] = train_set.size();
  if (!validation.empty()) {
    manifest["validation"] = eval_summary(trainer::evaluate_set(validation, params), 0.02);
    std::cout << "validation " << manifest["validation"].dump() << "\n";
  }
  auto manifest_path = out;
  manifest_path.replace_extension(".manifest.json");
  write_json(manifest_path, manifest);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int eval(const fs::path& model, const std::string& corpus, double far, std::uint64_t pair_seed,
         const std::string& out) {
  const auto params = facecore::params_from_json(read_json(model));
  const auto set = corpus.empty() ? harness::reference_split().validation : corpus_records(corpus, params.dims.chip_size);
  const auto summary = eval_summary(trainer::evaluate_set(set, params, pair_seed), far);
  std::cout << summary.dump(2) << "\n";
  if (!out.empty()) write_json(out, summary);
  return 0;
}

int finetune(const fs::path& model, const fs::path& corpus, const std::string& config,
             std::optional<std::uint64_t> seed, std::optional<int> epochs, const fs::path& out) {
  cloudhub::HubConfig base;
  auto cfg = load_config(config, seed, base);
  if (seed) cfg.train.seed = *seed;
  if (epochs) cfg.train.epochs = *epochs;
  const auto params = facecore::params_from_json(read_json(model));
  const auto records = corpus_records(corpus, params.dims.chip_size);
  const auto r = trainer::incremental_update(params, {}, {}, records, cfg.train);
  write_json(out, facecore::to_json(r.params));
  std::cout << "fine-tuned " << r.epochs.size() << " epochs on " << records.size() << " records; "
            << r.gallery.size() << " identities; wrote " << out.string() << "\n";
  return 0;
}

int run_scenario(const fs::path& file, const std::string& out, const std::string& data_dir) {
  const auto scenario = harness::load_scenario(file);
  harness::RunOptions opt;
  if (!data_dir.empty()) opt.data_dir = data_dir;
  const auto report = harness::run_scenario(scenario, opt);
  for (const auto& e : report.expectations) {
    std::cout << (e.at("pass").get<bool>() ? "PASS " : "FAIL ") << "t=" << e.at("t").get<long long>() << "  "
              << e.at("desc").get<std::string>();
    if (!e.at("pass").get<bool>()) std::cout << "  actual=" << e.at("actual").dump();
    std::cout << "\n";
  }
  if (!out.empty()) write_json(out, report.to_json());
  const bool ok = report.passed();
  std::cout << (ok ? "all " : "") << report.expectations.size() << " expectations" << (ok ? " passed" : ", some failed")
            << "\n";
  return ok ? 0 : 1;
}

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  int node_port = 7070;
  std::string data_dir;
  std::string config;
  std::string model;
  std::string corpus;
  std::string console;
};

int serve(const ServeOptions& o, std::optional<std::uint64_t> seed) {
  auto cfg = load_config(o.config, seed);
  if (!o.model.empty()) cfg.bootstrap_params = facecore::params_from_json(read_json(o.model));
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  const bool resume = cfg.data_dir && fs::exists(*cfg.data_dir / "hub.json");
  const auto now = cloudhub::wall_clock_ms();
  cloudhub::HubService service(resume ? cloudhub::Hub::load(cfg) : cloudhub::Hub(cfg, now));

  std::optional<social::Corpus> corpus;
  if (!o.corpus.empty()) corpus = social::load_corpus(o.corpus);

  const auto signals = block_stop_signals();
  httplib::Server http;
  cloudhub::mount_hub_api(http, service);
  if (corpus) social::mount_graph(http, *corpus);
  // Pulls a graph through its HTTP API and hands the consented faces to the hub.
  http.Post("/social/ingest", cloudhub::detail::guarded([&](const httplib::Request& req, httplib::Response& res) {
              const auto body = cloudhub::detail::parse_body(req);
              const auto consent = body.at("consent").get<social::ConsentList>();
              auto [host, port] = body.contains("graph") ? host_port(body.at("graph").get<std::string>())
                                                         : std::pair{o.host, o.port};
              if (!body.contains("graph") && !corpus) fail(ErrorCode::InvalidArgument, "no corpus is being served");
              const auto seen = service.read([](const cloudhub::Hub& h) { return h.social_keys(); });
              const auto chip = service.read([](const cloudhub::Hub& h) { return h.config().dims.chip_size; });
              social::HttpGraphSource source(host, port);
              auto result = social::ingest(source, consent, seen, {chip});
              service.command([&](cloudhub::Hub& h, edgenode::Timestamp t) { social::commit_ingest(h, result, t); });
              cloudhub::detail::reply(res, social::to_json(result.report));
            }));
  if (!o.console.empty()) cloudhub::mount_console(http, o.console);
  if (!http.bind_to_port(o.host, o.port)) fail(ErrorCode::IoFailure, "cannot bind " + o.host + ":" + std::to_string(o.port));

  cloudhub::NodeServer nodes(service, wire::listen_tcp(o.host, static_cast<std::uint16_t>(o.node_port)));
  service.start_worker();
  nodes.start();
  std::thread listener([&] { http.listen_after_bind(); });

  const auto version = service.read([](const cloudhub::Hub& h) { return h.active_version(); });
  std::cout << "hub " << (resume ? "resumed" : "started") << " at model v" << version << "\n"
            << "  http  http://" << o.host << ":" << o.port << "/\n"
            << "  nodes " << o.host << ":" << nodes.port() << "\n";
  if (corpus) std::cout << "  graph http://" << o.host << ":" << o.port << "/photos (" << corpus->photos.size() << " photos)\n";
  std::cout.flush();

  wait_for_signal(signals);
  std::cout << "shutting down\n";
  http.stop();
  listener.join();
  nodes.stop();
  service.stop();
  return 0;
}

int serve_graph(const fs::path& dir, const std::string& host, int port) {
  const auto corpus = social::load_corpus(dir);
  const auto signals = block_stop_signals();
  httplib::Server http;
  social::mount_graph(http, corpus);
  if (!http.bind_to_port(host, port)) fail(ErrorCode::IoFailure, "cannot bind " + host + ":" + std::to_string(port));
  std::thread listener([&] { http.listen_after_bind(); });
  std::cout << "graph http://" << host << ":" << port << "/photos (" << corpus.photos.size() << " photos)\n";
  std::cout.flush();
  wait_for_signal(signals);
  http.stop();
  listener.join();
  return 0;
}

int ingest(const std::string& graph, const std::vector<std::string>& consent, int chip_size, const std::string& out) {
  auto [host, port] = host_port(graph);
  social::HttpGraphSource source(host, port);
  const auto result = social::ingest(source, {consent.begin(), consent.end()}, {}, {chip_size});
  const auto report = social::to_json(result.report);
  std::cout << report.dump(2) << "\n";
  if (!out.empty()) write_json(out, report);
  return 0;
}

/// One visit at a live hub: connects as a node, shows `identity` to the camera, prints the decision.
int visit(const std::string& hub, const std::string& node_id, const std::string& device, const std::string& identity,
          int frames, int every_ms, const std::string& config, std::optional<std::uint64_t> seed) {
  auto cfg = load_config(config, seed);
  auto [host, port] = host_port(hub);
  edgenode::NodeConfig nc;
  nc.node_id = node_id;
  nc.device_id = device;
  // The hub replaces this bootstrap with its active model right after HELLO.
  const auto bootstrap = cloudhub::Hub(cfg, 0).snapshot_for();
  edgenode::EdgeLink link(edgenode::make_node(nc, bootstrap), wire::connect_tcp(host, static_cast<std::uint16_t>(port)));
  link.poll(1000, cloudhub::wall_clock_ms());
  std::cout << node_id << " on model v" << link.state().model_version() << "\n";

  const auto decided = [](const edgenode::Effects& fx) -> std::optional<json> {
    for (const auto& e : fx) {
      if (const auto* d = std::get_if<edgenode::AccessDecision>(&e)) return edgenode::to_json(*d);
    }
    return std::nullopt;
  };
  std::optional<json> decision;
  for (int k = 0; k < frames && !decision; ++k) {
    if (k > 0) std::this_thread::sleep_for(std::chrono::milliseconds(every_ms));
    const auto t = cloudhub::wall_clock_ms();
    decision = decided(link.frame(harness::render_frame(identity, node_id, t, cfg.seed)));
    link.poll(0, t);
  }
  const auto deadline = cloudhub::wall_clock_ms() + 20000;
  while (!decision && cloudhub::wall_clock_ms() < deadline) {
    link.poll(100, cloudhub::wall_clock_ms());
    decision = decided(link.tick(cloudhub::wall_clock_ms()));
  }
  if (!decision) {
    std::clog << "no decision within 20 s\n";
    return 1;
  }
  std::cout << decision->dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Smart face door: synthetic corpora, training, scenarios and a live hub"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out, config;

  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic social corpus");
  int identities = harness::kReferenceIdentities, chips = harness::kReferenceChips;
  std::uint64_t gen_seed = harness::kReferenceSeed;
  gen->add_option("--identities", identities)->capture_default_str();
  gen->add_option("--chips", chips, "Photos per identity")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--out", out, "Corpus directory")->required();

  auto* tr = app.add_subcommand("train", "Train an embedder from random weights");
  std::string corpus;
  std::optional<int> epochs;
  tr->add_option("--corpus", corpus, "Corpus directory; the reference split when omitted");
  tr->add_option("--config", config, "JSON with dims and train settings");
  tr->add_option("--seed", seed, "Weight init and batch order seed");
  tr->add_option("--epochs", epochs);
  tr->add_option("--out", out, "Model JSON")->required();

  auto* ev = app.add_subcommand("eval", "Pair verification report and calibrated threshold");
  std::string model;
  double far = 0.02;
  std::uint64_t pair_seed = 3;
  ev->add_option("--model", model)->required();
  ev->add_option("--corpus", corpus, "Corpus directory; the reference validation split when omitted");
  ev->add_option("--far", far, "Target false-accept rate for calibration")->capture_default_str();
  ev->add_option("--pair-seed", pair_seed)->capture_default_str();
  ev->add_option("--out", out);

  auto* ft = app.add_subcommand("finetune", "Continue training a model on a corpus");
  ft->add_option("--model", model)->required();
  ft->add_option("--corpus", corpus)->required();
  ft->add_option("--config", config);
  ft->add_option("--seed", seed);
  ft->add_option("--epochs", epochs);
  ft->add_option("--out", out)->required();

  auto* rs = app.add_subcommand("run-scenario", "Play a scenario; exit 0 iff every expectation passes");
  std::string scenario_file, data_dir;
  rs->add_option("file", scenario_file)->required()->check(CLI::ExistingFile);
  rs->add_option("--out", out, "Report JSON");
  rs->add_option("--data-dir", data_dir, "Keep the hub's persisted state here");

  auto* sv = app.add_subcommand("serve", "Run a hub with its HTTP API, node listener, mock graph and console");
  ServeOptions so;
  sv->add_option("--host", so.host)->capture_default_str();
  sv->add_option("--port", so.port, "HTTP port")->capture_default_str();
  sv->add_option("--node-port", so.node_port, "sof-wire port")->capture_default_str();
  sv->add_option("--data-dir", so.data_dir, "Persist here; resumes when state exists");
  sv->add_option("--config", so.config, "Hub config JSON");
  sv->add_option("--seed", seed);
  sv->add_option("--model", so.model, "Bootstrap weights from `sof train`");
  sv->add_option("--corpus", so.corpus, "Serve this corpus as the mock social graph");
  sv->add_option("--console", so.console, "Directory of built console assets");

  auto* sg = app.add_subcommand("serve-graph", "Serve a corpus as a mock social graph");
  std::string host = "127.0.0.1";
  int port = 8090;
  sg->add_option("--corpus", corpus)->required();
  sg->add_option("--host", host)->capture_default_str();
  sg->add_option("--port", port)->capture_default_str();

  auto* in = app.add_subcommand("ingest", "Page through a graph server and report what would be ingested");
  std::string graph;
  std::vector<std::string> consent;
  int chip_size = kDefaultChipSize;
  in->add_option("--graph", graph, "host:port")->required();
  in->add_option("--consent", consent, "Tag names that consented")->required()->delimiter(',');
  in->add_option("--chip-size", chip_size)->capture_default_str();
  in->add_option("--out", out);

  auto* vi = app.add_subcommand("visit", "Show an identity to a node connected to a live hub");
  std::string hub = "127.0.0.1:7070", node_id = "cli-node", device = "front_door", identity;
  int frames = 4, every_ms = 400;
  vi->add_option("--hub", hub, "Hub sof-wire host:port")->capture_default_str();
  vi->add_option("--node", node_id)->capture_default_str();
  vi->add_option("--device", device)->capture_default_str();
  vi->add_option("--identity", identity, "Synthetic identity name")->required();
  vi->add_option("--frames", frames)->capture_default_str();
  vi->add_option("--every-ms", every_ms)->capture_default_str();
  vi->add_option("--config", config, "Hub config JSON, for dims");
  vi->add_option("--seed", seed, "Renderer seed; must match the one identities were enrolled under");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_corpus(identities, chips, gen_seed, out);
    if (*tr) return train(corpus, config, seed, epochs, out);
    if (*ev) return eval(model, corpus, far, pair_seed, out);
    if (*ft) return finetune(model, corpus, config, seed, epochs, out);
    if (*rs) return run_scenario(scenario_file, out, data_dir);
    if (*sv) return serve(so, seed);
    if (*sg) return serve_graph(corpus, host, port);
    if (*in) return ingest(graph, consent, chip_size, out);
    if (*vi) return visit(hub, node_id, device, identity, frames, every_ms, config, seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
