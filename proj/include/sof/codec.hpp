#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sof/error.hpp"
#include "sof/image.hpp"

namespace sof {

inline std::string base64_encode(std::span<const std::uint8_t> in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const std::size_t rest = in.size() - i; rest > 0) {
    std::uint32_t v = in[i] << 16;
    if (rest == 2) v |= in[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) fail(ErrorCode::ParseError, "base64 length must be a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    std::array<int, 4> v{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      if (in[i + k] == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        v[k] = value(in[i + k]);
        if (v[k] < 0 || pad > 0) fail(ErrorCode::ParseError, "invalid base64");
      }
    }
    const std::uint32_t x = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(x >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(x >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(x));
  }
  return out;
}

/// Chips travel as 8-bit pixels: {w, h, c, data: base64}.
inline nlohmann::json chip_to_json(const FaceChip& chip) {
  const Image& img = chip.image();
  return {{"w", img.width()}, {"h", img.height()}, {"c", img.channels()}, {"data", base64_encode(to_bytes(img))}};
}

inline FaceChip chip_from_json(const nlohmann::json& j) {
  try {
    const auto bytes = base64_decode(j.at("data").get<std::string>());
    return FaceChip(from_bytes(j.at("w").get<int>(), j.at("h").get<int>(), j.at("c").get<int>(), bytes));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("chip: ") + e.what());
  }
}

}  // namespace sof
