#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dualpol/action_codec.hpp"
#include "dualpol/env.hpp"
#include "dualpol/nn.hpp"

// Slow autoregressive policy: a decoder-only transformer over
// [image patches, instruction, BOS, action tokens] that emits a discretized
// action chunk by greedy decoding plus the hidden states the fast policy
// conditions on. Decoding deliberately re-runs the full forward pass per
// token (no key/value cache): this is the expensive path whose latency the
// executor charges for.

namespace dualpol::gen {

struct GeneralistConfig {
  int image_h = 64, image_w = 64;
  int patch = 8;
  int d_model = 128, layers = 4, heads = 4, mlp_ratio = 4;
  int k_g = 8;
  int lead = 8;  // predict-ahead offset the model is trained with
  bool task_latents_include_visual = true;
  uint64_t init_seed = 1;

  int n_patches() const { return (image_h / patch) * (image_w / patch); }
  int patch_dim() const { return patch * patch * 3; }
  // visual patches + instruction token; BOS sits just after the prompt
  int prompt_len() const { return n_patches() + 1; }
  int chunk_tokens() const { return codec::serialized_length(k_g); }
  int max_seq() const { return prompt_len() + 1 + chunk_tokens(); }

  void validate() const {
    if (image_h % patch != 0 || image_w % patch != 0)
      throw std::invalid_argument("image size must be divisible by patch size");
    if (d_model % heads != 0) throw std::invalid_argument("d_model must divide by heads");
    if (k_g < 1) throw std::invalid_argument("k_g must be >= 1");
    if (lead < 0) throw std::invalid_argument("lead must be >= 0");
  }
};

// Last episode tick whose lead-shifted chunk target still fits: targets for
// tick t are the actions at [t + lead, t + lead + k_g).
inline int last_usable_tick(int episode_len, int k_g, int lead) {
  return episode_len - lead - k_g;
}

template <class T>
struct GeneralistOutput {
  std::vector<int> discrete_chunk;     // serialized token sequence
  codec::ActionChunk continuous_chunk; // deserialize(discrete_chunk)
  Tensor<T> task_latents;              // prompt-position hidden states
  Tensor<T> action_latents;            // action-token-position hidden states
  int grammar_repairs = 0;
  int staleness = 0;  // ticks since the observation; filled in by the executor
};

template <class T>
class GeneralistModel {
 public:
  explicit GeneralistModel(GeneralistConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    patch_embed_ = nn::Linear<T>(params, "patch_embed", cfg_.patch_dim(), cfg_.d_model, rng);
    instr_emb_ = nn::Embedding<T>(params, "instr_emb", env::kNumInstructions, cfg_.d_model, rng);
    tok_emb_ = nn::Embedding<T>(params, "tok_emb", codec::kVocabSize, cfg_.d_model, rng);
    pos_emb_ = params.add("pos_emb",
                          Tensor<T>::randn(cfg_.max_seq(), cfg_.d_model, rng, T(0.02)));
    for (int l = 0; l < cfg_.layers; ++l)
      blocks_.emplace_back(params, "block" + std::to_string(l), cfg_.d_model, cfg_.heads,
                           cfg_.mlp_ratio, rng);
    ln_f_ = nn::LayerNorm<T>(params, "ln_f", cfg_.d_model);
    head_ = nn::Linear<T>(params, "head", cfg_.d_model, codec::kVocabSize, rng);
  }

  const GeneralistConfig& config() const { return cfg_; }

  // Patch grid flattened row-major; pixels mapped to [-1, 1].
  Tensor<T> patches(const env::Observation& obs) const {
    if (obs.height != cfg_.image_h || obs.width != cfg_.image_w)
      throw std::invalid_argument("observation size does not match model config");
    int ph = cfg_.image_h / cfg_.patch, pw = cfg_.image_w / cfg_.patch;
    Tensor<T> out(ph * pw, cfg_.patch_dim());
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px) {
        T* dst = out.row(py * pw + px);
        int di = 0;
        for (int y = 0; y < cfg_.patch; ++y)
          for (int x = 0; x < cfg_.patch; ++x)
            for (int c = 0; c < 3; ++c) {
              size_t src = (size_t(py * cfg_.patch + y) * size_t(obs.width) +
                            size_t(px * cfg_.patch + x)) * 3 + size_t(c);
              dst[di++] = T(obs.rgb[src]) / T(127.5) - T(1);
            }
      }
    return out;
  }

  // Forward over prompt + BOS + given action-token prefix. Returns logits for
  // every position and the final-layer hidden states (post final norm).
  struct Forward {
    ag::Ref<T> logits, hidden;
    int bos_index = 0;  // row predicting the first action token
  };
  Forward forward(ag::Graph<T>& g, const env::Observation& obs,
                  const std::vector<int>& action_prefix) const {
    auto vis = ag::matmul(g, g.constant(patches(obs)), patch_embed_.W);
    vis = ag::add_rowvec(g, vis, patch_embed_.b);
    auto ins = instr_emb_(g, {obs.instruction_id});
    std::vector<int> toks;
    toks.reserve(action_prefix.size() + 1);
    toks.push_back(codec::kBos);
    for (int t : action_prefix) {
      if (t < 0 || t >= codec::kVocabSize) throw std::invalid_argument("token out of range");
      toks.push_back(t);
    }
    auto act = tok_emb_(g, toks);
    auto x = ag::concat_rows<T>(g, {vis, ins, act});
    int n = int(x->val.rows);
    if (n > cfg_.max_seq()) throw std::invalid_argument("sequence exceeds model capacity");
    x = ag::add(g, x, ag::slice_rows(g, pos_emb_, 0, n));
    Tensor<T> mask = nn::causal_mask<T>(n);
    for (auto& b : blocks_) x = b(g, x, &mask);
    auto hidden = ln_f_(g, x);
    Forward f;
    f.hidden = hidden;
    f.logits = head_(g, hidden);
    f.bos_index = cfg_.prompt_len();
    return f;
  }

  // Teacher-forced next-token loss summed over the serialized chunk.
  ag::Ref<T> nll_loss(ag::Graph<T>& g, const env::Observation& obs,
                      const std::vector<int>& targets) const {
    const int n_a = cfg_.chunk_tokens();
    if (int(targets.size()) != n_a)
      throw std::invalid_argument("target length " + std::to_string(targets.size()) +
                                  " does not match chunk tokens " + std::to_string(n_a));
    std::vector<int> prefix(targets.begin(), targets.end() - 1);
    auto f = forward(g, obs, prefix);
    auto pred = ag::slice_rows(g, f.logits, f.bos_index, f.bos_index + n_a);
    return ag::cross_entropy_sum(g, pred, targets);
  }

  // Greedy decode with grammar repair: at separator positions only SEP is
  // legal; at bin positions only bins are. Off-grammar argmaxes are replaced
  // by the best legal token and counted.
  GeneralistOutput<T> decode_chunk(const env::Observation& obs) const {
    const int n_a = cfg_.chunk_tokens();
    GeneralistOutput<T> out;
    std::vector<int> toks;
    for (int i = 0; i < n_a; ++i) {
      ag::Graph<T> g;
      auto f = forward(g, obs, toks);
      const T* logit = f.logits->val.row(f.logits->val.rows - 1);
      int best_all = 0;
      for (int v = 1; v < codec::kVocabSize; ++v)
        if (logit[v] > logit[best_all]) best_all = v;
      int chosen;
      if (codec::is_bin_position(i)) {
        chosen = 0;
        for (int v = 1; v < codec::kNumBins; ++v)
          if (logit[v] > logit[chosen]) chosen = v;
      } else {
        chosen = codec::kSep;
      }
      if (best_all != chosen) ++out.grammar_repairs;
      toks.push_back(chosen);
    }
    // one more pass with the full chunk as input to read out the latents
    ag::Graph<T> g;
    auto f = forward(g, obs, toks);
    const Tensor<T>& h = f.hidden->val;
    int task_lo = cfg_.task_latents_include_visual ? 0 : cfg_.n_patches();
    out.task_latents = Tensor<T>(cfg_.prompt_len() - task_lo, cfg_.d_model);
    for (int r = task_lo; r < cfg_.prompt_len(); ++r)
      std::copy(h.row(r), h.row(r) + cfg_.d_model, out.task_latents.row(r - task_lo));
    out.action_latents = Tensor<T>(n_a, cfg_.d_model);
    for (int r = 0; r < n_a; ++r) {
      const T* src = h.row(cfg_.prompt_len() + 1 + r);
      std::copy(src, src + cfg_.d_model, out.action_latents.row(r));
    }
    if (!out.task_latents.all_finite() || !out.action_latents.all_finite())
      throw std::runtime_error("non-finite latents");
    out.discrete_chunk = toks;
    std::vector<uint16_t> u(toks.begin(), toks.end());
    out.continuous_chunk = codec::deserialize_chunk(u);
    return out;
  }

  // Identical inference path; `lead` is a training-time target shift, so this
  // only validates it. lead=0 is plain next-chunk decoding.
  GeneralistOutput<T> predict_ahead(const env::Observation& obs, int lead) const {
    if (lead < 0) throw std::invalid_argument("lead must be >= 0");
    return decode_chunk(obs);
  }

  nn::ParamStore<T> params;

 private:
  GeneralistConfig cfg_;
  nn::Linear<T> patch_embed_;
  nn::Embedding<T> instr_emb_, tok_emb_;
  ag::Ref<T> pos_emb_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::LayerNorm<T> ln_f_;
  nn::Linear<T> head_;
};

}  // namespace dualpol::gen
