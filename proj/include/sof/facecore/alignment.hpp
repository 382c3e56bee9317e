#pragma once

#include <array>
#include <cmath>
#include <utility>

#include "sof/error.hpp"
#include "sof/image.hpp"

namespace sof::facecore {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Source-frame positions of the three alignment anchors.
struct Landmarks {
  Point left_eye;
  Point right_eye;
  Point nose_tip;
  bool operator==(const Landmarks&) const = default;
};

inline constexpr double kMinLandmarkArea = 1e-6;

/// Canonical anchor positions as fractions of the chip side.
inline constexpr Point kTemplateLeftEye{0.30, 0.35};
inline constexpr Point kTemplateRightEye{0.70, 0.35};
inline constexpr Point kTemplateNose{0.50, 0.62};

inline Landmarks template_landmarks(int chip_size) {
  const double s = chip_size;
  return {{kTemplateLeftEye.x * s, kTemplateLeftEye.y * s},
          {kTemplateRightEye.x * s, kTemplateRightEye.y * s},
          {kTemplateNose.x * s, kTemplateNose.y * s}};
}

inline double triangle_area(const Landmarks& lm) {
  const double ax = lm.right_eye.x - lm.left_eye.x, ay = lm.right_eye.y - lm.left_eye.y;
  const double bx = lm.nose_tip.x - lm.left_eye.x, by = lm.nose_tip.y - lm.left_eye.y;
  return 0.5 * std::abs(ax * by - ay * bx);
}

/// Throws DegenerateLandmarks unless every coordinate is finite, the eyes are
/// ordered left-to-right and the triangle has non-negligible area.
inline void validate(const Landmarks& lm) {
  for (const Point& p : {lm.left_eye, lm.right_eye, lm.nose_tip}) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) fail(ErrorCode::DegenerateLandmarks, "non-finite landmark");
  }
  if (!(lm.left_eye.x < lm.right_eye.x)) fail(ErrorCode::DegenerateLandmarks, "left eye must be left of right eye");
  if (!(triangle_area(lm) > kMinLandmarkArea)) fail(ErrorCode::DegenerateLandmarks, "landmarks are collinear");
}

/// 2x3 affine map [[m00 m01 t0] [m10 m11 t1]] from source to chip coordinates.
struct AffineTransform {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  [[nodiscard]] Point apply(Point p) const noexcept {
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
  }
  [[nodiscard]] double determinant() const noexcept { return m[0] * m[4] - m[1] * m[3]; }

  [[nodiscard]] AffineTransform inverse() const {
    const double det = determinant();
    if (det == 0.0 || !std::isfinite(det)) fail(ErrorCode::DegenerateLandmarks, "singular affine transform");
    const double a = m[4] / det, b = -m[1] / det, c = -m[3] / det, d = m[0] / det;
    return {{a, b, -(a * m[2] + b * m[5]), c, d, -(c * m[2] + d * m[5])}};
  }
};

namespace detail {

// Gaussian elimination with partial pivoting on a 3x3 system.
inline std::array<double, 3> solve3(std::array<std::array<double, 4>, 3> a) {
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (a[pivot][col] == 0.0) fail(ErrorCode::DegenerateLandmarks, "singular landmark system");
    std::swap(a[col], a[pivot]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int k = col; k < 4; ++k) a[r][k] -= f * a[col][k];
    }
  }
  std::array<double, 3> x{};
  for (int r = 2; r >= 0; --r) {
    double s = a[r][3];
    for (int k = r + 1; k < 3; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace detail

/// Exact affine map taking the three landmarks onto the chip template.
///
/// The 6x6 system is block diagonal (the x and y rows share the matrix
/// [x y 1]), so it is solved as two 3x3 systems, each followed by one round of
/// iterative refinement to keep the landmark residual at round-off level.
/// Coordinates are centered on the landmark centroid first for conditioning.
inline AffineTransform solve_alignment(const Landmarks& lm, int chip_size) {
  validate(lm);
  if (chip_size <= 0) fail(ErrorCode::InvalidArgument, "chip size must be positive");
  const Landmarks dst = template_landmarks(chip_size);
  const std::array<Point, 3> src{lm.left_eye, lm.right_eye, lm.nose_tip};
  const std::array<Point, 3> tgt{dst.left_eye, dst.right_eye, dst.nose_tip};
  const Point c{(src[0].x + src[1].x + src[2].x) / 3.0, (src[0].y + src[1].y + src[2].y) / 3.0};

  auto solve_row = [&](auto target_of) {
    std::array<std::array<double, 4>, 3> sys{};
    for (int i = 0; i < 3; ++i) sys[i] = {src[i].x - c.x, src[i].y - c.y, 1.0, target_of(tgt[i])};
    auto x = detail::solve3(sys);
    for (int i = 0; i < 3; ++i) {
      sys[i][3] = target_of(tgt[i]) - (x[0] * sys[i][0] + x[1] * sys[i][1] + x[2]);
    }
    const auto dx = detail::solve3(sys);
    for (int i = 0; i < 3; ++i) x[i] += dx[i];
    return x;
  };
  const auto rx = solve_row([](Point p) { return p.x; });
  const auto ry = solve_row([](Point p) { return p.y; });
  // Undo centering: u = a (x - cx) + b (y - cy) + t.
  AffineTransform t{{rx[0], rx[1], rx[2] - rx[0] * c.x - rx[1] * c.y,
                     ry[0], ry[1], ry[2] - ry[0] * c.x - ry[1] * c.y}};
  for (double v : t.m) {
    if (!std::isfinite(v)) fail(ErrorCode::DegenerateLandmarks, "non-finite alignment");
  }
  if (t.determinant() == 0.0) fail(ErrorCode::DegenerateLandmarks, "singular alignment");
  return t;
}

/// Bilinear sample with zero padding; pixel (i,j) sits at coordinate (i,j).
inline double sample_bilinear(const Image& img, double x, double y, int c) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](int xi, int yi) -> double {
    if (xi < 0 || yi < 0 || xi >= img.width() || yi >= img.height()) return 0.0;
    return img.at(xi, yi, c);
  };
  double v = 0.0;
  if (ax == 0.0 && ay == 0.0) return px(x0, y0);
  v += (1 - ax) * (1 - ay) * px(x0, y0);
  v += ax * (1 - ay) * px(x0 + 1, y0);
  v += (1 - ax) * ay * px(x0, y0 + 1);
  v += ax * ay * px(x0 + 1, y0 + 1);
  return v;
}

inline FaceChip warp_to_chip(const Image& image, const AffineTransform& to_chip, int chip_size) {
  const AffineTransform to_src = to_chip.inverse();
  Image out(chip_size, chip_size, image.channels());
  for (int v = 0; v < chip_size; ++v) {
    for (int u = 0; u < chip_size; ++u) {
      const Point s = to_src.apply({static_cast<double>(u), static_cast<double>(v)});
      for (int c = 0; c < image.channels(); ++c) {
        out.at(u, v, c) = std::clamp(sample_bilinear(image, s.x, s.y, c), 0.0, 1.0);
      }
    }
  }
  return FaceChip(std::move(out));
}

inline bool inside(const Image& img, Point p) {
  return p.x >= 0 && p.y >= 0 && p.x <= img.width() - 1 && p.y <= img.height() - 1;
}

/// Warps `image` so the landmarks land on the canonical template of a
/// `chip_size` square chip.
inline FaceChip align_face(const Image& image, const Landmarks& lm, int chip_size = kDefaultChipSize) {
  if (image.empty()) fail(ErrorCode::InvalidArgument, "empty image");
  const AffineTransform t = solve_alignment(lm, chip_size);
  for (const Point& p : {lm.left_eye, lm.right_eye, lm.nose_tip}) {
    if (!inside(image, p)) fail(ErrorCode::InvalidArgument, "landmark outside image bounds");
  }
  return warp_to_chip(image, t, chip_size);
}

}  // namespace sof::facecore
