#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "sof/harness/corpus.hpp"
#include "sof/social/ingest.hpp"
#include "sof/wire/tcp.hpp"
#include "support.hpp"

using namespace sof;
using namespace sof::social;
using sof::testing::code_of;
using sof::testing::TempDir;
using sof::testing::tree;

namespace {

/// Photos with hand-chosen tags; every image is a rendered face of its first tag.
Corpus write_corpus(const std::filesystem::path& dir, const std::vector<std::vector<std::string>>& tags_per_photo) {
  std::filesystem::create_directories(dir);
  std::vector<SocialPhoto> photos;
  for (std::size_t k = 0; k < tags_per_photo.size(); ++k) {
    const auto id = "ph" + std::to_string(100 + k);
    SocialPhoto p{id, "img/" + id + ".pgm", {}, static_cast<std::int64_t>(k)};
    const auto f = sof::testing::render_face(tags_per_photo[k].empty() ? "nobody" : tags_per_photo[k][0], k);
    for (const auto& t : tags_per_photo[k]) p.tags.push_back({t, f.landmarks});
    std::filesystem::create_directories((dir / p.file).parent_path());
    write_file(dir / p.file, encode_pnm(quantize(f.image)));
    photos.push_back(std::move(p));
  }
  write_file(dir / "photos.jsonl", photos_jsonl(photos));
  return load_corpus(dir);
}

std::vector<std::vector<std::string>> tags(std::size_t n, const std::vector<std::string>& each) {
  return std::vector<std::vector<std::string>>(n, each);
}

struct LiveGraph {
  httplib::Server server;
  int port = 0;
  std::thread thread;
  explicit LiveGraph(const Corpus& c) {
    mount_graph(server, c);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LiveGraph() {
    server.stop();
    thread.join();
  }
};

}  // namespace

TEST(Graph, PagesOfTenTenFive) {
  TempDir dir("graph25");
  const auto c = write_corpus(dir.path, tags(25, {"amy"}));
  std::vector<std::size_t> sizes;
  std::set<std::string> ids;
  std::optional<std::string> cursor;
  do {
    const auto page = page_of(c, cursor, 10);
    sizes.push_back(page.data.size());
    for (const auto& r : page.data) EXPECT_TRUE(ids.insert(r.photo_id).second);
    cursor = page.next;
  } while (cursor);
  EXPECT_EQ(sizes, (std::vector<std::size_t>{10, 10, 5}));
  EXPECT_EQ(ids.size(), 25u);
}

TEST(Graph, ExactMultipleEndsWithoutCursor) {
  TempDir dir("graph20");
  const auto c = write_corpus(dir.path, tags(20, {"amy"}));
  const auto second = page_of(c, page_of(c, std::nullopt, 10).next, 10);
  EXPECT_EQ(second.data.size(), 10u);
  EXPECT_FALSE(second.next.has_value());
}

TEST(Graph, EmptyCorpusIsOneEmptyTerminalPage) {
  TempDir dir("graph0");
  const auto c = write_corpus(dir.path, {});
  const auto page = page_of(c, std::nullopt, 10);
  EXPECT_TRUE(page.data.empty());
  EXPECT_FALSE(page.next.has_value());
}

TEST(Graph, StoredCursorReplaysIdenticalPage) {
  TempDir dir("graphcur");
  const auto c = write_corpus(dir.path, tags(25, {"amy"}));
  const auto cursor = page_of(c, std::nullopt, 10).next;
  EXPECT_EQ(page_of(c, cursor, 10), page_of(c, cursor, 10));
  EXPECT_EQ(code_of([&] { page_of(c, std::string("nope"), 10); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { page_of(c, std::nullopt, 0); }), ErrorCode::InvalidArgument);
}

TEST(Graph, PageJsonRoundTrip) {
  TempDir dir("graphjson");
  const auto c = write_corpus(dir.path, {{"amy", "bob"}, {"bob"}, {}});
  const auto page = page_of(c, std::nullopt, 2);
  EXPECT_EQ(page_from_json(to_json(page)), page);
  EXPECT_FALSE(to_json(page_of(c, page.next, 2))["paging"].contains("next"));
}

TEST(Graph, CorruptCorpusRejected) {
  TempDir dir("graphbad");
  std::filesystem::create_directories(dir.path);
  write_file(dir.path / "photos.jsonl", "{\"photo_id\":\"a\",\"file\":\"x.pgm\",\"tags\":[]}\n");
  EXPECT_EQ(code_of([&] { load_corpus(dir.path); }), ErrorCode::CorruptCorpus);  // missing image
  write_file(dir.path / "x.pgm", encode_pnm(Image(4, 4, 1)));
  write_file(dir.path / "photos.jsonl", "{\"photo_id\":\"a\",\"file\":\"x.pgm\",\"tags\":[]}\nnot json\n");
  EXPECT_EQ(code_of([&] { load_corpus(dir.path); }), ErrorCode::CorruptCorpus);
  write_file(dir.path / "photos.jsonl",
             "{\"photo_id\":\"a\",\"file\":\"x.pgm\",\"tags\":[]}\n{\"photo_id\":\"a\",\"file\":\"x.pgm\",\"tags\":[]}\n");
  EXPECT_EQ(code_of([&] { load_corpus(dir.path); }), ErrorCode::CorruptCorpus);
  write_file(dir.path / "photos.jsonl",
             "{\"photo_id\":\"a\",\"file\":\"x.pgm\",\"tags\":[{\"tag_name\":\"t\",\"landmarks\":{\"le\":[1]}}]}\n");
  EXPECT_EQ(code_of([&] { load_corpus(dir.path); }), ErrorCode::CorruptCorpus);
}

TEST(Ingest, TwoConsentedIdentitiesTimesTen) {
  TempDir dir("ing20");
  std::vector<std::vector<std::string>> t;
  for (int k = 0; k < 10; ++k) {
    t.push_back({"amy"});
    t.push_back({"bob"});
    t.push_back({"cyd"});
  }
  const auto c = write_corpus(dir.path, t);
  CorpusSource src(c);
  const auto r = ingest(src, {"amy", "bob"}, {}, {32, 7});
  EXPECT_EQ(r.records.size(), 20u);
  EXPECT_EQ(r.report.faces_ingested, 20u);
  EXPECT_EQ(r.report.per_person, (std::map<std::string, std::size_t>{{"amy", 10}, {"bob", 10}}));
  EXPECT_EQ(r.report.faces_skipped_consent, 10u);
  EXPECT_EQ(r.report.photos_seen, 30u);
  EXPECT_EQ(r.report.pages, 5u);
  for (const auto& rec : r.records) {
    EXPECT_TRUE(rec.person_id == "amy" || rec.person_id == "bob");
    EXPECT_EQ(rec.source, facecore::Provenance::Social);
    EXPECT_EQ(rec.chip.size(), 32);
  }
  // Records come out in (photo, tag) order.
  EXPECT_EQ(r.keys.front(), (TagKey{"ph100", "amy"}));
  EXPECT_EQ(r.keys[1], (TagKey{"ph101", "bob"}));
}

TEST(Ingest, ConsentExcludingEveryoneYieldsNothing) {
  TempDir dir("ingnone");
  const auto c = write_corpus(dir.path, {{"amy", "bob"}, {"amy"}, {"cyd"}});
  CorpusSource src(c);
  const auto r = ingest(src, {"zed"}, {});
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.report.faces_skipped_consent, 4u);
  EXPECT_EQ(r.report.tags_seen, 4u);
  EXPECT_EQ(code_of([&] { ingest(src, {}, {}); }), ErrorCode::InvalidArgument);
}

TEST(Ingest, MultiTagPhotoYieldsOneRecordPerConsentedTag) {
  TempDir dir("ingmulti");
  const auto c = write_corpus(dir.path, {{"amy", "bob", "cyd"}});
  CorpusSource src(c);
  const auto r = ingest(src, {"amy", "cyd"}, {});
  ASSERT_EQ(r.keys.size(), 2u);
  EXPECT_EQ(r.keys[0].second, "amy");
  EXPECT_EQ(r.keys[1].second, "cyd");
  EXPECT_EQ(r.report.faces_skipped_consent, 1u);
}

TEST(Ingest, BadLandmarksAreCountedAndSkipped) {
  TempDir dir("ingbad");
  auto c = write_corpus(dir.path, {{"amy"}, {"amy"}, {"amy"}});
  c.photos[1].tags[0].landmarks.right_eye = c.photos[1].tags[0].landmarks.left_eye;  // degenerate
  c.photos[2].tags[0].landmarks.nose_tip = {500, 500};                                // off the image
  CorpusSource src(c);
  const auto r = ingest(src, {"amy"}, {});
  EXPECT_EQ(r.report.faces_ingested, 1u);
  EXPECT_EQ(r.report.faces_failed, 2u);
}

TEST(Ingest, SecondRunIntoSameHubAddsNothing) {
  TempDir dir("ingtwice");
  const auto c = write_corpus(dir.path, tags(6, {"amy"}));
  cloudhub::HubConfig cfg;
  cfg.dims = {32, 1, 16, 8};
  cloudhub::Hub hub(cfg);
  CorpusSource src(c);
  auto first = ingest(src, {"amy"}, hub.social_keys(), {32});
  const auto job = commit_ingest(hub, first, 10);
  ASSERT_TRUE(job.has_value());
  EXPECT_EQ(job->trigger, cloudhub::JobTrigger::Ingest);
  EXPECT_EQ(hub.enrollments().size(), 6u);
  EXPECT_EQ(hub.level_of("amy"), 1);

  auto second = ingest(src, {"amy"}, hub.social_keys(), {32});
  EXPECT_EQ(second.report.duplicates_skipped, first.report.faces_ingested);
  EXPECT_EQ(second.report.faces_ingested, 0u);
  EXPECT_FALSE(commit_ingest(hub, second, 20).has_value());
  EXPECT_EQ(hub.enrollments().size(), 6u);

  // Two ingests racing on the same keys: the later commit drops them.
  cloudhub::Hub other(cfg);
  auto a = ingest(src, {"amy"}, other.social_keys(), {32});
  auto b = ingest(src, {"amy"}, other.social_keys(), {32});
  commit_ingest(other, a, 1);
  EXPECT_FALSE(commit_ingest(other, b, 2).has_value());
  EXPECT_EQ(b.report.duplicates_skipped, 6u);
  EXPECT_EQ(b.report.faces_ingested, 0u);
}

TEST(Ingest, OverHttpMatchesInProcess) {
  TempDir dir("inghttp");
  const auto c = write_corpus(dir.path, {{"amy"}, {"bob", "amy"}, {"bob"}, {"cyd"}});
  LiveGraph g(c);
  HttpGraphSource http("127.0.0.1", g.port);
  CorpusSource local(c);
  const auto a = ingest(http, {"amy", "bob"}, {}, {32, 2});
  const auto b = ingest(local, {"amy", "bob"}, {}, {32, 2});
  EXPECT_EQ(a.keys, b.keys);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) EXPECT_EQ(a.records[k].chip, b.records[k].chip);
  EXPECT_EQ(to_json(a.report), to_json(b.report));
}

TEST(Ingest, UnreachableServerFailsAfterRetries) {
  int port;
  {
    const auto probe = wire::listen_tcp("127.0.0.1", 0);
    port = wire::local_port(probe);
  }
  HttpGraphSource http("127.0.0.1", port, std::chrono::milliseconds(1));
  EXPECT_EQ(code_of([&] { ingest(http, {"amy"}, {}); }), ErrorCode::ServerUnreachable);
}

TEST(Ingest, ServerErrorsAreRetriedThenSucceed) {
  TempDir dir("ingretry");
  const auto c = write_corpus(dir.path, tags(3, {"amy"}));
  httplib::Server server;
  int failures = 2;
  server.set_pre_routing_handler([&](const httplib::Request&, httplib::Response& res) {
    if (failures > 0) {
      --failures;
      res.status = 503;
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });
  mount_graph(server, c);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  HttpGraphSource http("127.0.0.1", port, std::chrono::milliseconds(1));
  EXPECT_EQ(ingest(http, {"amy"}, {}).report.faces_ingested, 3u);
  server.stop();
  t.join();
}

TEST(Corpus, GeneratedCountsAndDeterminism) {
  TempDir a("gen-a"), b("gen-b");
  const auto c = harness::generate_corpus(5, 10, 7, a.path);
  harness::generate_corpus(5, 10, 7, b.path);
  EXPECT_EQ(c.photos.size(), 50u);
  std::set<std::string> names;
  std::size_t n_tags = 0;
  for (const auto& p : c.photos) {
    n_tags += p.tags.size();
    for (const auto& t : p.tags) names.insert(t.tag_name);
  }
  EXPECT_EQ(n_tags, 50u);
  EXPECT_EQ(names.size(), 5u);
  EXPECT_EQ(tree(a.path), tree(b.path));
  EXPECT_EQ(load_corpus(a.path).photos, c.photos);
  EXPECT_EQ(code_of([&] { harness::generate_corpus(1, 10, 7, a.path); }), ErrorCode::InvalidArgument);
}

TEST(Corpus, GeneratedCorpusIngestsEveryConsentedFace) {
  TempDir dir("gen-ingest");
  const auto c = harness::generate_corpus(5, 10, 7, dir.path);
  CorpusSource src(c);
  const auto r = ingest(src, {"person00", "person03"}, {});
  EXPECT_EQ(r.report.faces_ingested, 20u);
  EXPECT_EQ(r.report.faces_skipped_consent, 30u);
  EXPECT_EQ(r.report.faces_failed, 0u);
  // The ingested chip equals the in-memory reference record, quantized.
  const auto ref = harness::labeled_set(1, 10, 7);
  EXPECT_EQ(r.records[0].chip, quantize(ref[0].chip));
}
