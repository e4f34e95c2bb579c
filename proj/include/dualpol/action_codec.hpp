#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dualpol/tensor.hpp"

// Mapping between continuous 7-DoF action chunks and discrete token
// sequences: 256 uniform bins over [-1, 1] plus reserved control tokens.

namespace dualpol::codec {

constexpr int kNumBins = 256;
constexpr int kActionDims = 7;
constexpr uint16_t kSep = 256;
constexpr uint16_t kBos = 257;
constexpr uint16_t kEos = 258;
constexpr int kVocabSize = 259;

struct CodecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Continuous (k x 7) action chunk, entries clamped to [-1, 1].
struct ActionChunk {
  Tensor<float> values;  // k x 7

  ActionChunk() = default;
  explicit ActionChunk(int k) : values(k, kActionDims) {}
  explicit ActionChunk(Tensor<float> v);

  int length() const { return values.rows; }
};

// a in [-1,1] -> bin index 0..255 (out-of-range inputs clamp)
int tokenize(double a);

// bin index -> bin center
double detokenize(int index);

// k*7 bin tokens with a SEP between consecutive time steps
std::vector<uint16_t> serialize_chunk(const ActionChunk& chunk);

// inverse of serialize_chunk; throws CodecError naming the offending position
ActionChunk deserialize_chunk(const std::vector<uint16_t>& tokens);

// token count for a chunk of length k
inline int serialized_length(int k) { return k * kActionDims + (k - 1); }

// true at positions that hold a bin token (as opposed to SEP)
inline bool is_bin_position(int pos) { return pos % (kActionDims + 1) != kActionDims; }

}  // namespace dualpol::codec
