#pragma once

#include <chrono>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sof/cloudhub/hub.hpp"
#include "sof/facecore/alignment.hpp"
#include "sof/social/graph.hpp"
#include "sof/trainer/triplet.hpp"

namespace sof::social {

using ConsentList = std::set<std::string>;
using TagKey = std::pair<std::string, std::string>;  // (photo_id, tag_name)

/// Where ingest reads photos from.
class GraphSource {
 public:
  virtual ~GraphSource() = default;
  virtual GraphPage page(const std::optional<std::string>& after, std::size_t limit) = 0;
  virtual Image image(const PhotoRef& ref) = 0;
};

/// Reads a corpus directly, bypassing HTTP.
class CorpusSource final : public GraphSource {
 public:
  explicit CorpusSource(const Corpus& corpus) : corpus_(corpus) {}
  GraphPage page(const std::optional<std::string>& after, std::size_t limit) override {
    return page_of(corpus_, after, limit);
  }
  Image image(const PhotoRef& ref) override {
    for (const auto& p : corpus_.photos) {
      if (p.photo_id == ref.photo_id) return corpus_.image(p);
    }
    fail(ErrorCode::CorruptCorpus, "no photo " + ref.photo_id);
  }

 private:
  const Corpus& corpus_;
};

/// Talks to a graph server. Transport failures and 5xx replies are retried
/// three times with doubling backoff before ServerUnreachable.
class HttpGraphSource final : public GraphSource {
 public:
  HttpGraphSource(std::string host, int port, std::chrono::milliseconds backoff = std::chrono::milliseconds(200))
      : host_(std::move(host)), port_(port), backoff_(backoff) {}

  GraphPage page(const std::optional<std::string>& after, std::size_t limit) override {
    std::string path = "/photos?limit=" + std::to_string(limit);
    if (after) path += "&after=" + httplib::detail::encode_query_param(*after);
    const auto body = get(path);
    try {
      return page_from_json(nlohmann::json::parse(body));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::ProtocolError, std::string("graph page is not JSON: ") + e.what());
    }
  }

  Image image(const PhotoRef& ref) override { return decode_pnm(get(ref.image_url)); }

 private:
  static constexpr int kRetries = 3;

  std::string get(const std::string& path) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(2, 0);
    client.set_read_timeout(10, 0);
    auto delay = backoff_;
    std::string last_error;
    for (int attempt = 0; attempt <= kRetries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
      auto res = client.Get(path);
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        fail(ErrorCode::ProtocolError, "GET " + path + ": HTTP " + std::to_string(res->status) + " " + res->body);
      }
      return res->body;
    }
    fail(ErrorCode::ServerUnreachable,
         host_ + ":" + std::to_string(port_) + " after " + std::to_string(kRetries) + " retries: " + last_error);
  }

  std::string host_;
  int port_;
  std::chrono::milliseconds backoff_;
};

struct IngestReport {
  std::size_t photos_seen = 0;
  std::size_t tags_seen = 0;
  std::size_t faces_ingested = 0;
  std::size_t faces_skipped_consent = 0;
  std::size_t duplicates_skipped = 0;
  std::size_t faces_failed = 0;  // alignment errors
  std::size_t pages = 0;
  std::map<std::string, std::size_t> per_person;
};

inline nlohmann::json to_json(const IngestReport& r) {
  return {{"photos_seen", r.photos_seen},
          {"tags_seen", r.tags_seen},
          {"faces_ingested", r.faces_ingested},
          {"faces_skipped_consent", r.faces_skipped_consent},
          {"duplicates_skipped", r.duplicates_skipped},
          {"faces_failed", r.faces_failed},
          {"pages", r.pages},
          {"per_person", r.per_person}};
}

struct IngestResult {
  trainer::LabeledChipSet records;
  std::vector<TagKey> keys;  // parallel to records
  IngestReport report;
};

struct IngestOptions {
  int chip_size = kDefaultChipSize;
  std::size_t page_limit = kDefaultPageLimit;
};

inline bool inside(const Landmarks& lm, const Image& img) {
  for (const auto& p : {lm.left_eye, lm.right_eye, lm.nose_tip}) {
    if (!(p.x >= 0 && p.y >= 0 && p.x <= img.width() - 1 && p.y <= img.height() - 1)) return false;
  }
  return true;
}

/// Pages through `source` and turns every consented, not yet seen tag into an
/// aligned record with social provenance, in (photo, tag) order.
inline IngestResult ingest(GraphSource& source, const ConsentList& consent, const std::set<TagKey>& seen,
                           const IngestOptions& opt = {}) {
  if (consent.empty()) fail(ErrorCode::InvalidArgument, "consent list is empty");
  IngestResult out;
  auto& rep = out.report;
  std::set<TagKey> taken = seen;
  std::set<std::string> delivered;
  std::optional<std::string> cursor;
  do {
    const auto page = source.page(cursor, opt.page_limit);
    ++rep.pages;
    for (const auto& ref : page.data) {
      if (!delivered.insert(ref.photo_id).second) fail(ErrorCode::ProtocolError, "photo " + ref.photo_id + " delivered twice");
      ++rep.photos_seen;
      std::optional<Image> pixels;
      for (const auto& tag : ref.tags) {
        ++rep.tags_seen;
        if (!consent.contains(tag.tag_name)) {
          ++rep.faces_skipped_consent;
          continue;
        }
        TagKey key{ref.photo_id, tag.tag_name};
        if (taken.contains(key)) {
          ++rep.duplicates_skipped;
          continue;
        }
        if (!pixels) pixels = source.image(ref);
        if (!inside(tag.landmarks, *pixels)) {
          ++rep.faces_failed;
          continue;
        }
        try {
          auto chip = quantize(facecore::align_face(*pixels, tag.landmarks, opt.chip_size));
          out.records.push_back({std::move(chip), tag.tag_name, facecore::Provenance::Social});
        } catch (const Error& e) {
          if (e.code() != ErrorCode::DegenerateLandmarks && e.code() != ErrorCode::InvalidArgument) throw;
          ++rep.faces_failed;
          continue;
        }
        taken.insert(key);
        out.keys.push_back(std::move(key));
        ++rep.faces_ingested;
        ++rep.per_person[tag.tag_name];
      }
    }
    if (page.next && page.next == cursor) fail(ErrorCode::ProtocolError, "graph cursor did not advance");
    cursor = page.next;
  } while (cursor);
  return out;
}

/// Hands ingested faces to the hub as one enrollment batch. Keys another
/// ingest committed in the meantime are dropped and counted as duplicates.
inline std::optional<cloudhub::TrainingJob> commit_ingest(cloudhub::Hub& hub, IngestResult& result,
                                                         edgenode::Timestamp now) {
  trainer::LabeledChipSet fresh;
  for (std::size_t k = 0; k < result.records.size(); ++k) {
    if (hub.social_keys().insert(result.keys[k]).second) {
      fresh.push_back(result.records[k]);
    } else {
      ++result.report.duplicates_skipped;
      --result.report.faces_ingested;
      --result.report.per_person[result.records[k].person_id];
    }
  }
  return hub.add_social_records(fresh, now);
}

}  // namespace sof::social
