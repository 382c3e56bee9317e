#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sof/social/corpus.hpp"

namespace sof::social {

inline constexpr std::size_t kDefaultPageLimit = 25;
inline constexpr std::size_t kMaxPageLimit = 100;

/// A photo as listed by the graph endpoint; the pixels are fetched separately.
struct PhotoRef {
  std::string photo_id;
  std::vector<SocialTag> tags;
  std::int64_t uploaded_at = 0;
  std::string image_url;
  bool operator==(const PhotoRef&) const = default;
};

struct GraphPage {
  std::vector<PhotoRef> data;
  std::optional<std::string> next;  // absent on the terminal page
  bool operator==(const GraphPage&) const = default;
};

inline std::string image_url(const std::string& photo_id) { return "/photos/" + photo_id + "/image"; }

/// Pages over the corpus in file order. The cursor is the last photo_id of
/// the previous page, so a stored cursor always replays the same page.
inline GraphPage page_of(const Corpus& corpus, const std::optional<std::string>& after, std::size_t limit) {
  if (limit == 0 || limit > kMaxPageLimit) fail(ErrorCode::InvalidArgument, "limit must be 1.." + std::to_string(kMaxPageLimit));
  std::size_t start = 0;
  if (after) {
    auto it = std::find_if(corpus.photos.begin(), corpus.photos.end(), [&](const auto& p) { return p.photo_id == *after; });
    if (it == corpus.photos.end()) fail(ErrorCode::InvalidArgument, "unknown cursor '" + *after + "'");
    start = static_cast<std::size_t>(it - corpus.photos.begin()) + 1;
  }
  GraphPage page;
  const std::size_t end = std::min(corpus.photos.size(), start + limit);
  for (std::size_t k = start; k < end; ++k) {
    const auto& p = corpus.photos[k];
    page.data.push_back({p.photo_id, p.tags, p.uploaded_at, image_url(p.photo_id)});
  }
  if (end < corpus.photos.size()) page.next = corpus.photos[end - 1].photo_id;
  return page;
}

inline nlohmann::json to_json(const GraphPage& page) {
  auto data = nlohmann::json::array();
  for (const auto& r : page.data) {
    auto tags = nlohmann::json::array();
    for (const auto& t : r.tags) tags.push_back({{"tag_name", t.tag_name}, {"landmarks", to_json(t.landmarks)}});
    data.push_back({{"photo_id", r.photo_id}, {"tags", tags}, {"uploaded_at", r.uploaded_at}, {"image_url", r.image_url}});
  }
  nlohmann::json paging = nlohmann::json::object();
  if (page.next) paging["next"] = *page.next;
  return {{"data", data}, {"paging", paging}};
}

inline GraphPage page_from_json(const nlohmann::json& j) {
  GraphPage page;
  try {
    for (const auto& d : j.at("data")) {
      PhotoRef r;
      r.photo_id = d.at("photo_id").get<std::string>();
      r.uploaded_at = d.value("uploaded_at", std::int64_t{0});
      r.image_url = d.at("image_url").get<std::string>();
      for (const auto& t : d.at("tags")) r.tags.push_back({t.at("tag_name").get<std::string>(), landmarks_from_json(t.at("landmarks"))});
      page.data.push_back(std::move(r));
    }
    if (j.at("paging").contains("next")) page.next = j.at("paging").at("next").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ProtocolError, std::string("graph page: ") + e.what());
  }
  return page;
}

/// Mock graph routes: GET /photos?after=&limit= and GET /photos/{id}/image.
/// The corpus is immutable and must outlive the server.
inline void mount_graph(httplib::Server& server, const Corpus& corpus) {
  server.Get("/photos", [&corpus](const httplib::Request& req, httplib::Response& res) {
    try {
      std::optional<std::string> after;
      if (req.has_param("after")) after = req.get_param_value("after");
      std::size_t limit = kDefaultPageLimit;
      if (req.has_param("limit")) {
        try {
          limit = std::stoul(req.get_param_value("limit"));
        } catch (const std::exception&) {
          fail(ErrorCode::InvalidArgument, "limit must be a number");
        }
      }
      res.set_content(to_json(page_of(corpus, after, limit)).dump(), "application/json");
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump(),
                      "application/json");
    }
  });
  server.Get(R"(/photos/([^/]+)/image)", [&corpus](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    auto it = std::find_if(corpus.photos.begin(), corpus.photos.end(), [&](const auto& p) { return p.photo_id == id; });
    if (it == corpus.photos.end()) {
      res.status = 404;
      return;
    }
    try {
      res.set_content(read_file(corpus.dir / it->file), "image/x-portable-anymap");
    } catch (const Error& e) {
      res.status = 500;
      res.set_content(e.what(), "text/plain");
    }
  });
}

}  // namespace sof::social
