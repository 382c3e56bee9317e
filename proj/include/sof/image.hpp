#pragma once

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sof/error.hpp"

namespace sof {

/// Row-major, channel-interleaved intensity image with values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
      fail(ErrorCode::InvalidArgument, "image dimensions must be positive with 1 or 3 channels");
    }
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  Image(int width, int height, int channels, std::vector<double> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3) ||
        data_.size() != static_cast<std::size_t>(width) * height * channels) {
      fail(ErrorCode::ShapeMismatch, "image buffer does not match dimensions");
    }
  }

  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] int channels() const noexcept { return channels_; }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  [[nodiscard]] double at(int x, int y, int c = 0) const {
    return data_[index(x, y, c)];
  }
  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }

  [[nodiscard]] std::span<const double> pixels() const noexcept { return data_; }
  [[nodiscard]] std::span<double> pixels() noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  [[nodiscard]] std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline constexpr int kDefaultChipSize = 96;

/// Aligned, fixed-size face crop fed to the embedder.
class FaceChip {
 public:
  FaceChip() = default;
  explicit FaceChip(Image image) : image_(std::move(image)) {
    if (image_.width() != image_.height()) {
      fail(ErrorCode::ShapeMismatch, "face chip must be square");
    }
    for (double v : image_.pixels()) {
      if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::InvalidArgument, "face chip values must lie in [0,1]");
    }
  }

  [[nodiscard]] int size() const noexcept { return image_.width(); }
  [[nodiscard]] int channels() const noexcept { return image_.channels(); }
  [[nodiscard]] const Image& image() const noexcept { return image_; }
  [[nodiscard]] std::span<const double> pixels() const noexcept { return image_.pixels(); }

  bool operator==(const FaceChip&) const = default;

 private:
  Image image_;
};

inline std::uint8_t to_byte(double v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Snaps every value onto the 8-bit grid used by the on-disk and wire formats.
inline Image quantize(const Image& img) {
  Image out = img;
  for (double& v : out.pixels()) v = to_byte(v) / 255.0;
  return out;
}

inline FaceChip quantize(const FaceChip& chip) { return FaceChip(quantize(chip.image())); }

inline std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> out;
  out.reserve(img.size());
  for (double v : img.pixels()) out.push_back(to_byte(v));
  return out;
}

inline Image from_bytes(int width, int height, int channels, std::span<const std::uint8_t> bytes) {
  std::vector<double> data;
  data.reserve(bytes.size());
  for (auto b : bytes) data.push_back(b / 255.0);
  return Image(width, height, channels, std::move(data));
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6), 8-bit.

inline std::string encode_pnm(const Image& img) {
  std::ostringstream os;
  os << (img.channels() == 1 ? "P5" : "P6") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  auto bytes = to_bytes(img);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  return os.str();
}

inline Image decode_pnm(std::string_view buf) {
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    return std::string(buf.substr(start, pos - start));
  };
  const std::string magic = next_token();
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    fail(ErrorCode::ParseError, "unsupported image magic '" + magic + "'");
  }
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token());
    height = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    fail(ErrorCode::ParseError, "malformed PNM header");
  }
  if (maxval != 255 || width <= 0 || height <= 0) fail(ErrorCode::ParseError, "only 8-bit PNM is supported");
  ++pos;  // single whitespace byte after maxval
  const std::size_t n = static_cast<std::size_t>(width) * height * channels;
  if (buf.size() < pos + n) fail(ErrorCode::ParseError, "truncated PNM payload");
  auto raw = std::span(reinterpret_cast<const std::uint8_t*>(buf.data() + pos), n);
  return from_bytes(width, height, channels, raw);
}

inline void write_pnm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  const auto data = encode_pnm(img);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

/// Write to a sibling temp file and rename over the target, creating parent directories.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, data);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot rename into " + path.string() + ": " + ec.message());
}

inline Image read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path)); }

inline FaceChip read_chip(const std::filesystem::path& path) { return FaceChip(read_pnm(path)); }

}  // namespace sof
