#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "sof/facecore/embedder.hpp"
#include "sof/rng.hpp"

using namespace sof;
using namespace sof::facecore;

namespace {

FaceChip random_chip(Rng& rng, int size = 96, int channels = 1) {
  Image img(size, size, channels);
  for (double& v : img.pixels()) v = rng.uniform();
  return FaceChip(std::move(img));
}

double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Embed, OutputIsUnitNorm) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    EmbedderDims dims{8, 1, 5, 4};
    auto params = EmbedderParams::random(dims, trial);
    for (double& b : params.b1) b = rng.uniform(-1, 1);
    for (double& b : params.b2) b = rng.uniform(-1, 1);
    const auto e = embed(random_chip(rng, 8), params);
    EXPECT_NEAR(norm(e.values()), 1.0, 1e-6);
  }
}

TEST(Embed, DefaultShapeIsDeterministic) {
  Rng rng(2);
  const auto params = EmbedderParams::random({}, 7);
  ASSERT_EQ(params.dims.input_size(), 24 * 24);
  const FaceChip chip = random_chip(rng);
  const auto a = embed(chip, params);
  const auto b = embed(chip, params);
  EXPECT_EQ(a.dim(), 128u);
  EXPECT_TRUE(std::memcmp(a.values().data(), b.values().data(), 128 * sizeof(double)) == 0);
}

TEST(Embed, ZeroWeightsReturnNormalizedOutputBias) {
  auto p = EmbedderParams::zeros({8, 1, 3, 4});
  p.b1 = {0.5, -0.25, 1.0};
  p.b2 = {3.0, 0.0, -4.0, 0.0};
  Rng rng(4);
  const auto e = embed(random_chip(rng, 8), p);
  EXPECT_NEAR(e[0], 0.6, 1e-15);
  EXPECT_NEAR(e[1], 0.0, 1e-15);
  EXPECT_NEAR(e[2], -0.8, 1e-15);
  EXPECT_NEAR(e[3], 0.0, 1e-15);
}

TEST(Embed, HandComputedTwoLayerPass) {
  // w1 = 0 so the hidden layer is tanh(b1) for every input; values computed by hand
  // as normalize(w2 tanh(b1) + b2).
  auto p = EmbedderParams::zeros({8, 1, 3, 4});
  p.b1 = {0.5, -0.25, 1.0};
  p.w2 = {1, 0, 0, 0, 2, 0, 0, 0, -1, 1, 1, 1};
  p.b2 = {0.1, 0.0, 0.2, -0.3};
  Rng rng(6);
  const auto e = embed(random_chip(rng, 8), p);
  EXPECT_NEAR(e[0], 0.4870396676519985, 1e-12);
  EXPECT_NEAR(e[1], -0.4244136739049887, 1e-12);
  EXPECT_NEAR(e[2], -0.4865865194459508, 1e-12);
  EXPECT_NEAR(e[3], 0.5881317493805075, 1e-12);
}

TEST(Embed, AllZeroParamsUnderflow) {
  const auto p = EmbedderParams::zeros({8, 1, 3, 4});
  Rng rng(8);
  try {
    embed(random_chip(rng, 8), p);
    FAIL() << "expected NumericalUnderflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NumericalUnderflow);
  }
}

TEST(Embed, ShapeMismatch) {
  Rng rng(9);
  const auto p = EmbedderParams::random({8, 1, 3, 4}, 1);
  try {
    embed(random_chip(rng, 12), p);
    FAIL() << "expected ShapeMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  EXPECT_THROW(embed(random_chip(rng, 8, 3), p), Error);
}

TEST(Embed, ThreeChannelInput) {
  Rng rng(10);
  const auto p = EmbedderParams::random({16, 3, 6, 5}, 2);
  EXPECT_EQ(p.dims.input_size(), 4 * 4 * 3);
  EXPECT_NEAR(norm(embed(random_chip(rng, 16, 3), p).values()), 1.0, 1e-12);
}

TEST(Pool, AveragesFourByFourBlocks) {
  Image img(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img.at(x, y) = (x < 4 ? 0.0 : 1.0) * (y < 4 ? 0.25 : 1.0);
  const auto pooled = pool(FaceChip(img), {8, 1, 1, 1});
  ASSERT_EQ(pooled.size(), 4u);
  EXPECT_DOUBLE_EQ(pooled[0], 0.0);
  EXPECT_DOUBLE_EQ(pooled[1], 0.25);
  EXPECT_DOUBLE_EQ(pooled[2], 0.0);
  EXPECT_DOUBLE_EQ(pooled[3], 1.0);
}

TEST(EmbedderParamsJson, RoundTripIsBitExact) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto p = EmbedderParams::random({16, 1, 7, 5}, seed);
    p.b1[0] = 1.0 / 3.0;
    p.b2[1] = -2.2250738585072014e-308;
    p.w2[3] = 5e-324;
    const auto q = deserialize_params(serialize(p));
    EXPECT_EQ(q.dims, p.dims);
    EXPECT_TRUE(bit_equal(q.w1, p.w1));
    EXPECT_TRUE(bit_equal(q.b1, p.b1));
    EXPECT_TRUE(bit_equal(q.w2, p.w2));
    EXPECT_TRUE(bit_equal(q.b2, p.b2));
    EXPECT_EQ(serialize(q), serialize(p));
  }
}

TEST(EmbedderParamsJson, CarriesFormatTagAndRejectsOthers) {
  const auto j = to_json(EmbedderParams::random({8, 1, 2, 2}, 1));
  EXPECT_EQ(j.at("format"), "sof-embedder/1");
  EXPECT_EQ(j.at("dims").at("S"), 8);
  auto bad = j;
  bad["format"] = "sof-embedder/0";
  EXPECT_THROW(params_from_json(bad), Error);
  auto wrong_shape = j;
  wrong_shape["b1"] = std::vector<double>{1.0};
  EXPECT_THROW(params_from_json(wrong_shape), Error);
}
