#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include <gtest/gtest.h>

#include "sof/edgenode/node.hpp"
#include "sof/harness/render.hpp"

namespace sof::testing {

struct Face {
  Image image;
  facecore::Landmarks landmarks;
};

inline Face render_face(const std::string& name, std::uint64_t variant, int size = kDefaultChipSize) {
  Rng rng(stable_hash(name, variant));
  auto [chip, lm] = harness::render_chip(harness::make_identity(name, 1), harness::RenderParams::random(rng), rng.next(), size);
  return {chip.image(), lm};
}

/// The embedding a node computes for `face` under `params`.
inline facecore::EmbeddingVector node_embedding(const Face& face, const facecore::EmbedderParams& params) {
  return facecore::embed(quantize(facecore::align_face(face.image, face.landmarks, params.dims.chip_size)), params);
}

inline edgenode::SnapshotPtr make_snapshot(std::uint64_t version, facecore::EmbedderParams params,
                                           facecore::IdentityGallery gallery = {},
                                           double tau = edgenode::kDefaultAcceptThreshold) {
  auto s = std::make_shared<edgenode::ModelSnapshot>();
  s->version = version;
  s->params = std::move(params);
  s->gallery = std::move(gallery);
  s->accept_threshold = tau;
  return s;
}

inline facecore::IdentityGallery enroll(facecore::IdentityGallery g, const std::string& id, const Face& face,
                                        const facecore::EmbedderParams& params, int level = 1) {
  return facecore::update_centroid(g, id, node_embedding(face, params),
                                   facecore::NewPerson{id, level, facecore::Provenance::Enrollment});
}

inline ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("sof-test-" + name)) {
    std::filesystem::remove_all(path);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() { std::filesystem::remove_all(path); }
};

/// Relative path -> contents of every file under `root`.
inline std::map<std::string, std::string> tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

}  // namespace sof::testing
