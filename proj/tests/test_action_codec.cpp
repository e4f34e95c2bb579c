#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dualpol/action_codec.hpp"
#include "dualpol/rng.hpp"

using namespace dualpol;
using namespace dualpol::codec;

// Independent oracle: find the bin whose [lo, hi) interval contains a by
// scanning all 256 edges.
static int brute_force_bin(double a) {
  if (a <= -1.0) return 0;
  if (a >= 1.0) return kNumBins - 1;
  for (int i = 0; i < kNumBins; ++i) {
    double lo = -1.0 + 2.0 * i / kNumBins;
    double hi = -1.0 + 2.0 * (i + 1) / kNumBins;
    if (a >= lo && a < hi) return i;
  }
  return kNumBins - 1;
}

TEST_CASE("tokenize boundary and center values") {
  CHECK(tokenize(-1.0) == 0);
  CHECK(tokenize(1.0) == 255);
  CHECK(tokenize(0.0) == 128);
  CHECK(tokenize(0.0) == brute_force_bin(0.0));
  CHECK(tokenize(-5.0) == 0);   // clamps
  CHECK(tokenize(7.0) == 255);  // clamps
  CHECK_THROWS_AS(tokenize(std::nan("")), CodecError);
}

TEST_CASE("detokenize returns bin centers") {
  CHECK(detokenize(0) == doctest::Approx(-0.99609375).epsilon(1e-12));
  CHECK(detokenize(255) == doctest::Approx(0.99609375).epsilon(1e-12));
  CHECK(detokenize(0) == doctest::Approx(-detokenize(255)).epsilon(1e-12));
  CHECK_THROWS_AS(detokenize(kSep), CodecError);
  CHECK_THROWS_AS(detokenize(-1), CodecError);
  CHECK_THROWS_AS(detokenize(300), CodecError);
}

TEST_CASE("dense grid roundtrip error and monotonicity") {
  int prev = 0;
  for (int i = 0; i <= 4096; ++i) {
    double a = -1.0 + 2.0 * i / 4096.0;
    int idx = tokenize(a);
    CHECK(idx == brute_force_bin(a));
    CHECK(std::abs(detokenize(idx) - a) <= 1.0 / 256 + 1e-12);
    CHECK(idx >= prev);
    prev = idx;
  }
}

TEST_CASE("serialize lengths and SEP placement") {
  ActionChunk c1(1);
  CHECK(serialize_chunk(c1).size() == 7);
  ActionChunk c2(2);
  auto t2 = serialize_chunk(c2);
  CHECK(t2.size() == 15);
  CHECK(t2[7] == kSep);
  ActionChunk c8(8);
  CHECK(serialize_chunk(c8).size() == 63);
}

TEST_CASE("deserialize inverts serialize on quantized chunks") {
  Rng rng(7);
  for (int k = 1; k <= 16; ++k) {
    ActionChunk c(k);
    for (auto& x : c.values.v) x = float(rng.uniform(-1.0, 1.0));
    auto round1 = deserialize_chunk(serialize_chunk(c));
    // quantized chunks are a fixed point
    auto round2 = deserialize_chunk(serialize_chunk(round1));
    for (int64_t i = 0; i < c.values.size(); ++i) {
      CHECK(std::abs(round1.values.v[i] - c.values.v[i]) <= 1.0f / 256 + 1e-6f);
      CHECK(round1.values.v[i] == round2.values.v[i]);
    }
  }
}

TEST_CASE("zero chunk serializes to bin-128 centers") {
  ActionChunk c(3);
  auto back = deserialize_chunk(serialize_chunk(c));
  for (auto x : back.values.v) CHECK(x == doctest::Approx(0.00390625));
}

TEST_CASE("malformed sequences are rejected with position info") {
  CHECK_THROWS_AS(deserialize_chunk({}), CodecError);
  // SEP at a bin position (position 3)
  std::vector<uint16_t> bad(15, 100);
  bad[7] = kSep;
  bad[3] = kSep;
  try {
    deserialize_chunk(bad);
    FAIL("expected parse error");
  } catch (const CodecError& e) {
    CHECK(std::string(e.what()).find("position 3") != std::string::npos);
  }
  // bin token where SEP belongs
  std::vector<uint16_t> bad2(15, 100);
  CHECK_THROWS_AS(deserialize_chunk(bad2), CodecError);
  // BOS inside a step
  std::vector<uint16_t> bad3(7, 100);
  bad3[2] = kBos;
  CHECK_THROWS_AS(deserialize_chunk(bad3), CodecError);
  // length not matching the grammar
  CHECK_THROWS_AS(deserialize_chunk(std::vector<uint16_t>(9, 100)), CodecError);
}

TEST_CASE("chunk construction clamps and validates") {
  Tensor<float> v(2, 7);
  v.at(0, 0) = 3.0f;
  v.at(1, 6) = -2.5f;
  ActionChunk c(std::move(v));
  CHECK(c.values.at(0, 0) == 1.0f);
  CHECK(c.values.at(1, 6) == -1.0f);
  Tensor<float> badshape(2, 6);
  CHECK_THROWS_AS(ActionChunk{std::move(badshape)}, CodecError);
}
