#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>

#include "sof/facecore/alignment.hpp"
#include "sof/image.hpp"
#include "sof/rng.hpp"

namespace sof::harness {

inline constexpr int kLatentDims = 16;
inline constexpr double kDefaultExpression = 0.25;

struct SyntheticIdentity {
  std::string identity_id;
  std::array<double, kLatentDims> latent{};
};

/// Latent drawn uniformly from [-1,1]^16, keyed by (name, seed).
inline SyntheticIdentity make_identity(const std::string& name, std::uint64_t seed) {
  SyntheticIdentity id;
  id.identity_id = name;
  Rng rng(stable_hash(name, seed));
  for (double& v : id.latent) v = rng.uniform(-1.0, 1.0);
  return id;
}

/// Nuisance parameters of one rendering.
struct RenderParams {
  double pose_dx = 0.0;  // [-6, 6] px
  double pose_dy = 0.0;
  double gain = 1.0;  // [0.7, 1.3]
  double bias = 0.0;  // [-0.1, 0.1]
  double noise_sigma = 0.02;
  double expression = 0.0;  // std-dev of the per-render latent jitter

  static RenderParams clean() { return {0.0, 0.0, 1.0, 0.0, 0.0, 0.0}; }

  /// Integer pose shifts keep alignment exact up to the chip border.
  static RenderParams random(Rng& rng, double noise_sigma = 0.02, double expression = kDefaultExpression) {
    RenderParams rp;
    rp.pose_dx = static_cast<double>(static_cast<int>(rng.index(13))) - 6.0;
    rp.pose_dy = static_cast<double>(static_cast<int>(rng.index(13))) - 6.0;
    rp.gain = rng.uniform(0.7, 1.3);
    rp.bias = rng.uniform(-0.1, 0.1);
    rp.noise_sigma = noise_sigma;
    rp.expression = expression;
    return rp;
  }
};

namespace detail {

struct Wave {
  double fx, fy;
};

/// Fixed spatial frequencies (cycles per chip), one per latent coordinate.
inline const std::array<Wave, kLatentDims>& waves() {
  static const std::array<Wave, kLatentDims> table = [] {
    std::array<Wave, kLatentDims> t{};
    Rng rng(0x50F5EEDull);
    for (auto& w : t) {
      const double mag = rng.uniform(0.6, 3.0);
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      w = {mag * std::cos(ang), mag * std::sin(ang)};
    }
    return t;
  }();
  return table;
}

inline constexpr double kWaveAmplitude = 0.04;

inline double blob(double x, double y, facecore::Point c, double sigma) {
  const double dx = x - c.x, dy = y - c.y;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

}  // namespace detail

/// Procedural face: low-frequency sinusoids phase-keyed by the latent, dark
/// eye and nose blobs at the posed landmark positions, then gain/bias and
/// Gaussian noise. Returns the chip and the true landmark positions.
inline std::pair<FaceChip, facecore::Landmarks> render_chip(const SyntheticIdentity& id, const RenderParams& rp,
                                                            std::uint64_t seed, int size = kDefaultChipSize) {
  const auto tmpl = facecore::template_landmarks(size);
  const facecore::Landmarks lm{{tmpl.left_eye.x + rp.pose_dx, tmpl.left_eye.y + rp.pose_dy},
                               {tmpl.right_eye.x + rp.pose_dx, tmpl.right_eye.y + rp.pose_dy},
                               {tmpl.nose_tip.x + rp.pose_dx, tmpl.nose_tip.y + rp.pose_dy}};
  const auto& waves = detail::waves();
  Rng noise(seed);
  std::array<double, kLatentDims> latent = id.latent;
  if (rp.expression > 0.0) {
    for (double& z : latent) z += rp.expression * noise.normal();
  }
  Image img(size, size, 1);
  const double s = size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x - rp.pose_dx) / s, v = (y - rp.pose_dy) / s;
      double val = 0.5;
      for (int k = 0; k < kLatentDims; ++k) {
        const double phase = 2.0 * std::numbers::pi * (waves[k].fx * u + waves[k].fy * v) + std::numbers::pi * latent[k];
        val += detail::kWaveAmplitude * std::sin(phase);
      }
      val -= 0.30 * (detail::blob(x, y, lm.left_eye, 3.0) + detail::blob(x, y, lm.right_eye, 3.0));
      val -= 0.15 * detail::blob(x, y, lm.nose_tip, 4.0);
      val = rp.gain * val + rp.bias;
      if (rp.noise_sigma > 0.0) val += rp.noise_sigma * noise.normal();
      img.at(x, y) = std::clamp(val, 0.0, 1.0);
    }
  }
  return {FaceChip(std::move(img)), lm};
}

}  // namespace sof::harness
