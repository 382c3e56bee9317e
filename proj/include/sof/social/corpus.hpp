#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/error.hpp"
#include "sof/facecore/alignment.hpp"
#include "sof/image.hpp"

namespace sof::social {

using facecore::Landmarks;

struct SocialTag {
  std::string tag_name;
  Landmarks landmarks;
  bool operator==(const SocialTag&) const = default;
};

/// One corpus record. `file` is relative to the corpus directory.
struct SocialPhoto {
  std::string photo_id;
  std::string file;
  std::vector<SocialTag> tags;
  std::int64_t uploaded_at = 0;
  bool operator==(const SocialPhoto&) const = default;
};

inline nlohmann::json to_json(const Landmarks& lm) {
  return {{"le", {lm.left_eye.x, lm.left_eye.y}},
          {"re", {lm.right_eye.x, lm.right_eye.y}},
          {"nose", {lm.nose_tip.x, lm.nose_tip.y}}};
}

inline Landmarks landmarks_from_json(const nlohmann::json& j) {
  auto pt = [&](const char* key) {
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2) fail(ErrorCode::CorruptCorpus, std::string("landmark '") + key + "' must be [x,y]");
    return facecore::Point{a.at(0).get<double>(), a.at(1).get<double>()};
  };
  return {pt("le"), pt("re"), pt("nose")};
}

inline nlohmann::json to_json(const SocialPhoto& p) {
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& t : p.tags) tags.push_back({{"tag_name", t.tag_name}, {"landmarks", to_json(t.landmarks)}});
  return {{"photo_id", p.photo_id}, {"file", p.file}, {"tags", tags}, {"uploaded_at", p.uploaded_at}};
}

inline SocialPhoto photo_from_json(const nlohmann::json& j) {
  try {
    SocialPhoto p;
    p.photo_id = j.at("photo_id").get<std::string>();
    p.file = j.value("file", std::string{});
    p.uploaded_at = j.value("uploaded_at", std::int64_t{0});
    for (const auto& t : j.at("tags")) p.tags.push_back({t.at("tag_name").get<std::string>(), landmarks_from_json(t.at("landmarks"))});
    if (p.photo_id.empty()) fail(ErrorCode::CorruptCorpus, "empty photo_id");
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptCorpus, std::string("malformed photo record: ") + e.what());
  }
}

/// photos.jsonl plus the image files it references.
struct Corpus {
  std::filesystem::path dir;
  std::vector<SocialPhoto> photos;

  Image image(const SocialPhoto& p) const { return read_pnm(dir / p.file); }
};

inline Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.dir = dir;
  const auto text = read_file(dir / "photos.jsonl");
  std::set<std::string> ids;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      fail(ErrorCode::CorruptCorpus, "photos.jsonl line " + std::to_string(line_no) + " is not JSON");
    }
    auto p = photo_from_json(j);
    if (!ids.insert(p.photo_id).second) fail(ErrorCode::CorruptCorpus, "duplicate photo_id " + p.photo_id);
    if (p.file.empty()) fail(ErrorCode::CorruptCorpus, "photo " + p.photo_id + " has no file");
    if (!std::filesystem::is_regular_file(dir / p.file)) {
      fail(ErrorCode::CorruptCorpus, "photo " + p.photo_id + ": missing " + p.file);
    }
    c.photos.push_back(std::move(p));
  }
  return c;
}

inline std::string photos_jsonl(const std::vector<SocialPhoto>& photos) {
  std::string out;
  for (const auto& p : photos) out += to_json(p).dump() + "\n";
  return out;
}

}  // namespace sof::social
