#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dualpol/nn.hpp"
#include "dualpol/tensor.hpp"

// Versioned binary bundles for model state: 4-byte magic, version, kind tag,
// config snapshot, schedule/codec descriptors, named float32 arrays, CRC32
// footer. Serialization is canonical, so save -> load -> save is
// byte-identical.

namespace dualpol::ckpt {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct KindError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CorruptionError : CheckpointError {
  using CheckpointError::CheckpointError;
};

constexpr uint16_t kBundleVersion = 1;

struct Bundle {
  std::string kind;         // "generalist" | "specialist"
  std::string config_text;  // serialized run configuration snapshot
  std::string schedule_kind = "squared_cosine";
  uint32_t schedule_timesteps = 100;
  uint16_t codec_bins = 256;  // action codec descriptor
  uint16_t codec_dims = 7;
  std::vector<std::pair<std::string, Tensor<float>>> arrays;

  const Tensor<float>* find(const std::string& name) const {
    for (auto& [n, t] : arrays)
      if (n == name) return &t;
    return nullptr;
  }
};

std::string serialize_bundle(const Bundle& b);
Bundle parse_bundle(const std::string& bytes);

void save_bundle(const Bundle& b, const std::string& path);
// expect_kind "" skips the kind check.
Bundle load_bundle(const std::string& path, const std::string& expect_kind = "");

template <class T>
void store_params(Bundle& b, const nn::ParamStore<T>& ps) {
  for (auto& [name, p] : ps.items)
    b.arrays.emplace_back(name, p->val.template cast<float>());
}

// Restores every parameter in the store; missing arrays or shape mismatches
// are errors (a bundle from a differently shaped model must not half-load).
template <class T>
void load_params(const Bundle& b, nn::ParamStore<T>& ps) {
  for (auto& [name, p] : ps.items) {
    const Tensor<float>* t = b.find(name);
    if (!t) throw CheckpointError("bundle is missing array: " + name);
    if (t->rows != p->val.rows || t->cols != p->val.cols)
      throw CheckpointError("shape mismatch for array: " + name);
    p->val = t->template cast<T>();
  }
}

}  // namespace dualpol::ckpt
