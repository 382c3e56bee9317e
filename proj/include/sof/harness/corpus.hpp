#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sof/facecore/alignment.hpp"
#include "sof/harness/render.hpp"
#include "sof/social/corpus.hpp"
#include "sof/trainer/triplet.hpp"

namespace sof::harness {

inline std::string identity_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "person%02d", i);
  return buf;
}

/// The photo a corpus holds for chip `c` of `name`, as stored on disk (8-bit).
struct CorpusPhoto {
  Image image;
  facecore::Landmarks landmarks;
};

inline CorpusPhoto corpus_photo(const std::string& name, int c, std::uint64_t seed) {
  const auto id = make_identity(name, seed);
  Rng rng(stable_hash(name + "/" + std::to_string(c), seed));
  const auto rp = RenderParams::random(rng);
  auto [chip, lm] = render_chip(id, rp, rng.next());
  return {quantize(chip.image()), lm};
}

/// Writes photos.jsonl and images/ for n identities x chips photos, one tag each.
inline social::Corpus generate_corpus(int n_identities, int chips_per_identity, std::uint64_t seed,
                                      const std::filesystem::path& out_dir) {
  if (n_identities < 2 || chips_per_identity < 2) fail(ErrorCode::InvalidArgument, "need >= 2 identities and >= 2 chips");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  social::Corpus corpus;
  corpus.dir = out_dir;
  std::int64_t k = 0;
  for (int c = 0; c < chips_per_identity; ++c) {
    for (int i = 0; i < n_identities; ++i, ++k) {
      const auto name = identity_name(i);
      auto photo = corpus_photo(name, c, seed);
      char id[32];
      std::snprintf(id, sizeof id, "p%05lld", static_cast<long long>(k));
      social::SocialPhoto p{id, std::string("images/") + id + ".pgm", {{name, photo.landmarks}}, 1000 * k};
      write_file(out_dir / p.file, encode_pnm(photo.image));
      corpus.photos.push_back(std::move(p));
    }
  }
  write_file(out_dir / "photos.jsonl", social::photos_jsonl(corpus.photos));
  return corpus;
}

/// Aligned training records for the same chips `generate_corpus` writes, built in memory.
inline trainer::LabeledChipSet labeled_set(int n_identities, int chips_per_identity, std::uint64_t seed,
                                           int first_identity = 0) {
  trainer::LabeledChipSet out;
  for (int i = first_identity; i < first_identity + n_identities; ++i) {
    const auto name = identity_name(i);
    for (int c = 0; c < chips_per_identity; ++c) {
      auto photo = corpus_photo(name, c, seed);
      out.push_back({facecore::align_face(photo.image, photo.landmarks), name, facecore::Provenance::Social});
    }
  }
  return out;
}

/// Chip-level 80/20 split: the last fifth of each identity's chips is validation.
struct Split {
  trainer::LabeledChipSet train;
  trainer::LabeledChipSet validation;
};

inline Split split_by_chip(const trainer::LabeledChipSet& set, int chips_per_identity) {
  Split s;
  const int cut = chips_per_identity - chips_per_identity / 5;
  for (std::size_t k = 0; k < set.size(); ++k) {
    (static_cast<int>(k % chips_per_identity) < cut ? s.train : s.validation).push_back(set[k]);
  }
  return s;
}

inline constexpr int kReferenceIdentities = 20;
inline constexpr int kReferenceChips = 30;
inline constexpr std::uint64_t kReferenceSeed = 1;

/// The reference corpus (20 identities x 30 chips, seed 1), split 80/20 by chip.
inline Split reference_split() {
  return split_by_chip(labeled_set(kReferenceIdentities, kReferenceChips, kReferenceSeed), kReferenceChips);
}

}  // namespace sof::harness
