#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/error.hpp"
#include "sof/image.hpp"
#include "sof/rng.hpp"

namespace sof::facecore {

inline constexpr int kPoolSize = 4;
inline constexpr double kMinEmbeddingNorm = 1e-8;
inline constexpr std::string_view kEmbedderFormat = "sof-embedder/1";

/// Unit-norm point on the embedding hypersphere.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  /// L2-normalizes `raw`; throws NumericalUnderflow when its norm is below 1e-8.
  static EmbeddingVector normalized(std::vector<double> raw) {
    double sq = 0.0;
    for (double v : raw) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) fail(ErrorCode::InvalidArgument, "non-finite embedding");
    if (norm < kMinEmbeddingNorm) fail(ErrorCode::NumericalUnderflow, "embedding norm below 1e-8");
    for (double& v : raw) v /= norm;
    EmbeddingVector e;
    e.values_ = std::move(raw);
    return e;
  }

  /// Adopts values that are already unit norm (checked to 1e-6).
  static EmbeddingVector from_unit(std::vector<double> values) {
    double sq = 0.0;
    for (double v : values) {
      if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "non-finite embedding");
      sq += v * v;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) fail(ErrorCode::InvalidArgument, "embedding is not unit norm");
    EmbeddingVector e;
    e.values_ = std::move(values);
    return e;
  }

  [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<double> values_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::ShapeMismatch, "embedding dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double squared_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  return squared_distance(a.values(), b.values());
}

struct EmbedderDims {
  int chip_size = kDefaultChipSize;  // S
  int channels = 1;                  // C
  int hidden = 256;                  // H
  int embedding = 128;               // D

  [[nodiscard]] int pooled_side() const noexcept { return chip_size / kPoolSize; }
  [[nodiscard]] int input_size() const noexcept { return pooled_side() * pooled_side() * channels; }

  bool operator==(const EmbedderDims&) const = default;
};

/// Weights of the pool -> dense(H) -> tanh -> dense(D) -> L2-normalize network.
/// Matrices are row-major: w1 is H x P, w2 is D x H. The same layout holds gradients.
struct EmbedderParams {
  EmbedderDims dims;
  std::vector<double> w1, b1, w2, b2;

  static EmbedderParams zeros(const EmbedderDims& d) {
    validate_dims(d);
    EmbedderParams p;
    p.dims = d;
    p.w1.assign(static_cast<std::size_t>(d.hidden) * d.input_size(), 0.0);
    p.b1.assign(d.hidden, 0.0);
    p.w2.assign(static_cast<std::size_t>(d.embedding) * d.hidden, 0.0);
    p.b2.assign(d.embedding, 0.0);
    return p;
  }

  /// Gaussian weights scaled by 1/sqrt(fan_in), zero biases.
  static EmbedderParams random(const EmbedderDims& d, std::uint64_t seed) {
    EmbedderParams p = zeros(d);
    Rng rng(seed);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d.input_size()));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(d.hidden));
    for (double& w : p.w1) w = rng.normal() * s1;
    for (double& w : p.w2) w = rng.normal() * s2;
    return p;
  }

  static void validate_dims(const EmbedderDims& d) {
    if (d.chip_size <= 0 || d.chip_size % kPoolSize != 0) {
      fail(ErrorCode::ShapeMismatch, "chip size must be a positive multiple of the pool size");
    }
    if ((d.channels != 1 && d.channels != 3) || d.hidden <= 0 || d.embedding <= 0) {
      fail(ErrorCode::ShapeMismatch, "invalid embedder dimensions");
    }
  }

  /// Throws ShapeMismatch / InvalidArgument when tensors disagree with dims or hold NaN/Inf.
  void validate() const {
    validate_dims(dims);
    if (w1.size() != static_cast<std::size_t>(dims.hidden) * dims.input_size() ||
        b1.size() != static_cast<std::size_t>(dims.hidden) ||
        w2.size() != static_cast<std::size_t>(dims.embedding) * dims.hidden ||
        b2.size() != static_cast<std::size_t>(dims.embedding)) {
      fail(ErrorCode::ShapeMismatch, "embedder tensors do not match dims");
    }
    for (const auto* t : {&w1, &b1, &w2, &b2}) {
      for (double v : *t) {
        if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "non-finite embedder weight");
      }
    }
  }

  [[nodiscard]] std::size_t parameter_count() const noexcept {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }

  bool operator==(const EmbedderParams&) const = default;
};

/// 4x4 average pool, flattened (row, column, channel).
inline std::vector<double> pool(const FaceChip& chip, const EmbedderDims& dims) {
  if (chip.size() != dims.chip_size || chip.channels() != dims.channels) {
    fail(ErrorCode::ShapeMismatch, "chip shape does not match embedder input");
  }
  const Image& img = chip.image();
  const int side = dims.pooled_side();
  const int c = dims.channels;
  std::vector<double> out(static_cast<std::size_t>(side) * side * c, 0.0);
  constexpr double inv = 1.0 / (kPoolSize * kPoolSize);
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int dy = 0; dy < kPoolSize; ++dy) {
          for (int dx = 0; dx < kPoolSize; ++dx) s += img.at(px * kPoolSize + dx, py * kPoolSize + dy, ch);
        }
        out[(static_cast<std::size_t>(py) * side + px) * c + ch] = s * inv;
      }
    }
  }
  return out;
}

/// Intermediate activations kept for backpropagation.
struct ForwardPass {
  std::vector<double> input;   // pooled chip, P
  std::vector<double> hidden;  // tanh(w1 x + b1), H
  std::vector<double> raw;     // w2 h + b2, D
  double norm = 0.0;
  std::vector<double> output;  // raw / norm
};

inline ForwardPass forward_pooled(std::vector<double> input, const EmbedderParams& params) {
  const auto& d = params.dims;
  if (input.size() != static_cast<std::size_t>(d.input_size())) {
    fail(ErrorCode::ShapeMismatch, "pooled input size mismatch");
  }
  ForwardPass f;
  f.input = std::move(input);
  const std::size_t n_in = f.input.size();
  f.hidden.resize(d.hidden);
  for (int h = 0; h < d.hidden; ++h) {
    const double* row = params.w1.data() + static_cast<std::size_t>(h) * n_in;
    double s = params.b1[h];
    for (std::size_t i = 0; i < n_in; ++i) s += row[i] * f.input[i];
    f.hidden[h] = std::tanh(s);
  }
  f.raw.resize(d.embedding);
  double sq = 0.0;
  for (int k = 0; k < d.embedding; ++k) {
    const double* row = params.w2.data() + static_cast<std::size_t>(k) * d.hidden;
    double s = params.b2[k];
    for (int h = 0; h < d.hidden; ++h) s += row[h] * f.hidden[h];
    f.raw[k] = s;
    sq += s * s;
  }
  f.norm = std::sqrt(sq);
  if (!std::isfinite(f.norm)) fail(ErrorCode::InvalidArgument, "non-finite activation");
  if (f.norm < kMinEmbeddingNorm) fail(ErrorCode::NumericalUnderflow, "pre-normalization norm below 1e-8");
  f.output.resize(d.embedding);
  for (int k = 0; k < d.embedding; ++k) f.output[k] = f.raw[k] / f.norm;
  return f;
}

inline ForwardPass forward(const FaceChip& chip, const EmbedderParams& params) {
  return forward_pooled(pool(chip, params.dims), params);
}

inline EmbeddingVector embed(const FaceChip& chip, const EmbedderParams& params) {
  return EmbeddingVector::from_unit(forward(chip, params).output);
}

// ---------------------------------------------------------------------------
// Canonical JSON form.

inline nlohmann::json to_json(const EmbedderParams& p) {
  return {{"format", kEmbedderFormat},
          {"dims", {{"S", p.dims.chip_size}, {"C", p.dims.channels}, {"H", p.dims.hidden}, {"D", p.dims.embedding}}},
          {"w1", p.w1},
          {"b1", p.b1},
          {"w2", p.w2},
          {"b2", p.b2}};
}

inline EmbedderParams params_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kEmbedderFormat) {
      fail(ErrorCode::ParseError, "unsupported embedder format");
    }
    EmbedderParams p;
    const auto& d = j.at("dims");
    p.dims = {d.at("S").get<int>(), d.at("C").get<int>(), d.at("H").get<int>(), d.at("D").get<int>()};
    p.w1 = j.at("w1").get<std::vector<double>>();
    p.b1 = j.at("b1").get<std::vector<double>>();
    p.w2 = j.at("w2").get<std::vector<double>>();
    p.b2 = j.at("b2").get<std::vector<double>>();
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("embedder params: ") + e.what());
  }
}

inline std::string serialize(const EmbedderParams& p) { return to_json(p).dump(); }

inline EmbedderParams deserialize_params(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, e.what());
  }
  return params_from_json(j);
}

}  // namespace sof::facecore
