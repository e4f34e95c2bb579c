#include "dualpol/action_codec.hpp"

#include <cmath>
#include <string>

namespace dualpol::codec {

ActionChunk::ActionChunk(Tensor<float> v) : values(std::move(v)) {
  if (values.rows < 1 || values.cols != kActionDims)
    throw CodecError("ActionChunk must be k x 7 with k >= 1");
  for (auto& x : values.v) {
    if (!std::isfinite(x)) throw CodecError("non-finite action value");
    if (x < -1.f) x = -1.f;
    if (x > 1.f) x = 1.f;
  }
}

int tokenize(double a) {
  if (!std::isfinite(a)) throw CodecError("non-finite action value");
  if (a < -1.0) a = -1.0;
  if (a > 1.0) a = 1.0;
  int idx = int(std::floor((a + 1.0) / 2.0 * kNumBins));
  if (idx < 0) idx = 0;
  if (idx > kNumBins - 1) idx = kNumBins - 1;
  return idx;
}

double detokenize(int index) {
  if (index < 0 || index >= kNumBins)
    throw CodecError("reserved or out-of-range token index " + std::to_string(index));
  return -1.0 + (double(index) + 0.5) * (2.0 / kNumBins);
}

std::vector<uint16_t> serialize_chunk(const ActionChunk& chunk) {
  std::vector<uint16_t> out;
  out.reserve(size_t(serialized_length(chunk.length())));
  for (int t = 0; t < chunk.length(); ++t) {
    if (t > 0) out.push_back(kSep);
    for (int d = 0; d < kActionDims; ++d)
      out.push_back(uint16_t(tokenize(chunk.values.at(t, d))));
  }
  return out;
}

ActionChunk deserialize_chunk(const std::vector<uint16_t>& tokens) {
  if (tokens.empty()) throw CodecError("empty token sequence");
  if ((tokens.size() + 1) % (kActionDims + 1) != 0)
    throw CodecError("sequence length " + std::to_string(tokens.size()) +
                     " does not match k*7 + (k-1)");
  int k = int((tokens.size() + 1) / (kActionDims + 1));
  ActionChunk chunk(k);
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (is_bin_position(int(i))) {
      if (tokens[i] >= kNumBins)
        throw CodecError("reserved token inside a step at position " + std::to_string(i));
      int t = int(i) / (kActionDims + 1);
      int d = int(i) % (kActionDims + 1);
      chunk.values.at(t, d) = float(detokenize(tokens[i]));
    } else if (tokens[i] != kSep) {
      throw CodecError("expected SEP at position " + std::to_string(i));
    }
  }
  return chunk;
}

}  // namespace dualpol::codec
