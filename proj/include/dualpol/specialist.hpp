#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dualpol/diffusion.hpp"
#include "dualpol/executor.hpp"
#include "dualpol/nn.hpp"

// Fast diffusion-transformer policy. Stacked blocks with causal
// self-attention over the k_s action tokens (rotary positions), conditioning
// through cross-attention (default), FiLM, or in-context tokens, and
// adaLN-zero modulation regressed from proprioception plus the diffusion
// timestep. The noised action is concatenated with the slow policy's
// (window-aligned) discrete actions at the input; missing or dropped
// condition sources are replaced by learned null embeddings.

namespace dualpol::spec {

enum class CondMethod { XAttn, FiLM, InContext };

inline CondMethod cond_method_from_string(const std::string& s) {
  if (s == "xattn") return CondMethod::XAttn;
  if (s == "film") return CondMethod::FiLM;
  if (s == "in_context") return CondMethod::InContext;
  throw std::invalid_argument("unknown conditioning method: " + s);
}

inline std::string to_string(CondMethod m) {
  switch (m) {
    case CondMethod::XAttn: return "xattn";
    case CondMethod::FiLM: return "film";
    case CondMethod::InContext: return "in_context";
  }
  return "?";
}

struct VitConfig {
  int image_h = 64, image_w = 64, channels = 3;
  int patch = 8;
  int layers = 6, hidden = 256, heads = 8, mlp_ratio = 4;

  int n_patches() const { return (image_h / patch) * (image_w / patch); }
  int patch_dim() const { return patch * patch * channels; }
};

struct SpecialistConfig {
  int layers = 6, heads = 8, hidden = 256, mlp_ratio = 4;
  int k_s = 8;
  int resampler_queries = 8;
  VitConfig rgb_vit;
  VitConfig depth_vit{64, 64, 1, 8, 6, 256, 8, 4};
  bool use_rgb = true, use_depth = false;
  bool rgb_frozen = true;  // stands in for a frozen pretrained encoder
  int d_g = 128;           // width of the slow policy's latents
  CondMethod method = CondMethod::XAttn;
  diffusion::PredictionHead head = diffusion::PredictionHead::Sample;
  // per-source enables (conditioning ablations)
  bool use_task_latents = true, use_action_latents = true;
  bool use_discrete_chunk = true, use_proprio = true;
  uint64_t init_seed = 1;

  void validate() const {
    if (layers < 1 || heads < 1 || hidden < 1 || mlp_ratio < 1 || k_s < 1 ||
        resampler_queries < 1)
      throw std::invalid_argument("specialist dimensions must be positive");
    if (hidden % heads != 0) throw std::invalid_argument("hidden must divide by heads");
    if (use_rgb && (rgb_vit.image_h % rgb_vit.patch || rgb_vit.image_w % rgb_vit.patch))
      throw std::invalid_argument("rgb image size must be divisible by patch");
    if (use_depth && (depth_vit.image_h % depth_vit.patch || depth_vit.image_w % depth_vit.patch))
      throw std::invalid_argument("depth image size must be divisible by patch");
  }

  // Architecture-table configuration of the full-scale model (224x224 RGB,
  // patch 16). Reported parameter total: about 16.2M.
  static SpecialistConfig table_defaults() {
    SpecialistConfig c;
    c.rgb_vit = VitConfig{224, 224, 3, 16, 6, 256, 8, 4};
    c.use_depth = false;
    c.d_g = 256;
    return c;
  }
};

// Patchify an interleaved C-channel image into (n_patches x patch*patch*C),
// values pre-mapped to [-1, 1] by the caller-provided scale/offset.
template <class T>
Tensor<T> patchify(const float* img, const VitConfig& vc) {
  int ph = vc.image_h / vc.patch, pw = vc.image_w / vc.patch;
  Tensor<T> out(ph * pw, vc.patch_dim());
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px) {
      T* dst = out.row(py * pw + px);
      int di = 0;
      for (int y = 0; y < vc.patch; ++y)
        for (int x = 0; x < vc.patch; ++x)
          for (int c = 0; c < vc.channels; ++c) {
            size_t src = (size_t(py * vc.patch + y) * size_t(vc.image_w) +
                          size_t(px * vc.patch + x)) * size_t(vc.channels) + size_t(c);
            dst[di++] = T(img[src]);
          }
    }
  return out;
}

template <class T>
struct VitEncoder {
  VitConfig vc;
  nn::Linear<T> patch_embed;
  ag::Ref<T> pos;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> ln;

  VitEncoder() = default;
  VitEncoder(nn::ParamStore<T>& ps, const std::string& name, VitConfig cfg, Rng& rng,
             bool trainable)
      : vc(cfg),
        patch_embed(ps, name + ".patch", cfg.patch_dim(), cfg.hidden, rng, false, trainable),
        ln(ps, name + ".ln", cfg.hidden, trainable) {
    pos = ps.add(name + ".pos", Tensor<T>::randn(cfg.n_patches(), cfg.hidden, rng, T(0.02)),
                 trainable);
    for (int l = 0; l < cfg.layers; ++l)
      blocks.emplace_back(ps, name + ".b" + std::to_string(l), cfg.hidden, cfg.heads,
                          cfg.mlp_ratio, rng, false, trainable);
  }

  ag::Ref<T> operator()(ag::Graph<T>& g, const Tensor<T>& patch_matrix) const {
    auto x = ag::add(g, patch_embed(g, g.constant(patch_matrix)), pos);
    for (auto& b : blocks) x = b(g, x);
    return ln(g, x);
  }
};

// One-layer attention pooling: a fixed number of learned queries against the
// encoder tokens, followed by an MLP.
template <class T>
struct Resampler {
  ag::Ref<T> queries;
  nn::Linear<T> kv_proj;
  nn::MultiHeadAttention<T> attn;
  nn::LayerNorm<T> ln;
  nn::Mlp<T> mlp;

  Resampler() = default;
  Resampler(nn::ParamStore<T>& ps, const std::string& name, int n_queries, int in_width,
            int hidden, int heads, int mlp_ratio, Rng& rng) {
    queries = ps.add(name + ".q", Tensor<T>::randn(n_queries, hidden, rng, T(0.02)));
    kv_proj = nn::Linear<T>(ps, name + ".kv", in_width, hidden, rng);
    attn = nn::MultiHeadAttention<T>(ps, name + ".attn", hidden, heads, rng);
    ln = nn::LayerNorm<T>(ps, name + ".ln", hidden);
    mlp = nn::Mlp<T>(ps, name + ".mlp", hidden, hidden * mlp_ratio, rng);
  }

  ag::Ref<T> operator()(ag::Graph<T>& g, ag::Ref<T> tokens) const {
    auto kv = kv_proj(g, tokens);
    auto x = ag::add(g, queries, attn(g, queries, kv));
    return ag::add(g, x, mlp(g, ln(g, x)));
  }
};

template <class T>
struct ConditionSet {
  ag::Ref<T> ctx;           // (n_ctx x hidden) cross-attention context
  ag::Ref<T> aligned_chunk; // (k_s x 7) retained discrete actions + pad rows
  ag::Ref<T> proprio_feat;  // (1 x hidden) proprio MLP output or null
  bool has_task = false, has_action = false, has_chunk = false, has_proprio = false;
  int retained_steps = 0;   // chunk rows that are real (not pad)
};

struct TrainItem {
  codec::ActionChunk a0;
  env::Observation obs;
  const exec::GeneralistResult* gen = nullptr;  // may be null
  int tau_s = 0;
};

struct TrainStats {
  double loss = 0;
  int dropped = 0;  // items whose latent+proprio conditions were nulled
  int items = 0;
};

inline bool should_drop(Rng& rng, double p) { return rng.uniform(0.0, 1.0) < p; }

template <class T>
class SpecialistModel {
 public:
  explicit SpecialistModel(SpecialistConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    const int h = cfg_.hidden;
    if (cfg_.use_rgb) {
      rgb_vit_ = VitEncoder<T>(params, "rgb_vit", cfg_.rgb_vit, rng, !cfg_.rgb_frozen);
      rgb_resampler_ = Resampler<T>(params, "rgb_rs", cfg_.resampler_queries,
                                    cfg_.rgb_vit.hidden, h, cfg_.heads, cfg_.mlp_ratio, rng);
    }
    if (cfg_.use_depth) {
      depth_vit_ = VitEncoder<T>(params, "depth_vit", cfg_.depth_vit, rng, true);
      depth_resampler_ = Resampler<T>(params, "depth_rs", cfg_.resampler_queries,
                                      cfg_.depth_vit.hidden, h, cfg_.heads, cfg_.mlp_ratio, rng);
    }
    task_proj_ = nn::Linear<T>(params, "task_proj", cfg_.d_g, h, rng);
    action_proj_ = nn::Linear<T>(params, "action_proj", cfg_.d_g, h, rng);
    null_task_ = params.add("null_task", Tensor<T>::randn(1, h, rng, T(0.02)));
    null_action_ = params.add("null_action", Tensor<T>::randn(1, h, rng, T(0.02)));
    null_proprio_ = params.add("null_proprio", Tensor<T>::randn(1, h, rng, T(0.02)));
    pad_action_ = params.add("pad_action", Tensor<T>::randn(1, codec::kActionDims, rng, T(0.02)));
    input_embed_ = nn::Linear<T>(params, "input_embed", 2 * codec::kActionDims, h, rng);
    proprio_fc1_ = nn::Linear<T>(params, "proprio_fc1", codec::kActionDims, h, rng);
    proprio_fc2_ = nn::Linear<T>(params, "proprio_fc2", h, h, rng);
    t_proj_ = nn::Linear<T>(params, "t_proj", h, h, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      std::string n = "dit" + std::to_string(l);
      Block b;
      b.self_attn = nn::MultiHeadAttention<T>(params, n + ".self", h, cfg_.heads, rng,
                                              /*rotary=*/true);
      b.cross_attn = nn::MultiHeadAttention<T>(params, n + ".cross", h, cfg_.heads, rng);
      b.mlp = nn::Mlp<T>(params, n + ".mlp", h, h * cfg_.mlp_ratio, rng);
      // adaLN-zero: gamma/beta/alpha for each of the three sublayers
      b.mod = nn::Linear<T>(params, n + ".mod", h, 9 * h, rng, /*zero_init=*/true);
      b.film = nn::Linear<T>(params, n + ".film", h, 2 * h, rng, /*zero_init=*/true);
      blocks_.push_back(std::move(b));
    }
    final_mod_ = nn::Linear<T>(params, "final_mod", cfg_.hidden, 2 * cfg_.hidden, rng,
                               /*zero_init=*/true);
    head_ = nn::Linear<T>(params, "head", cfg_.hidden, codec::kActionDims, rng);
  }

  const SpecialistConfig& config() const { return cfg_; }
  int64_t param_count() const { return params.param_count(); }

  // Per-modality resampled token groups (always resampler_queries rows each).
  std::vector<ag::Ref<T>> encode_sensory(ag::Graph<T>& g, const env::Observation& obs,
                                         const std::vector<std::string>& modalities) const {
    std::vector<ag::Ref<T>> groups;
    for (const auto& m : modalities) {
      if (m == "rgb") {
        if (!cfg_.use_rgb) throw std::invalid_argument("rgb encoder not configured");
        if (obs.height != cfg_.rgb_vit.image_h || obs.width != cfg_.rgb_vit.image_w)
          throw std::invalid_argument("rgb observation size mismatch");
        std::vector<float> px(obs.rgb.size());
        for (size_t i = 0; i < px.size(); ++i) px[i] = float(obs.rgb[i]) / 127.5f - 1.0f;
        groups.push_back(rgb_resampler_(g, rgb_vit_(g, patchify<T>(px.data(), cfg_.rgb_vit))));
      } else if (m == "depth") {
        if (!cfg_.use_depth) throw std::invalid_argument("depth encoder not configured");
        if (obs.depth.empty()) throw std::invalid_argument("observation has no depth channel");
        std::vector<float> px(obs.depth.size());
        for (size_t i = 0; i < px.size(); ++i) px[i] = obs.depth[i] * 2.0f - 1.0f;
        groups.push_back(
            depth_resampler_(g, depth_vit_(g, patchify<T>(px.data(), cfg_.depth_vit))));
      } else {
        throw std::invalid_argument("unknown sensory modality: " + m);
      }
    }
    return groups;
  }

  std::vector<std::string> default_modalities() const {
    std::vector<std::string> m;
    if (cfg_.use_rgb) m.push_back("rgb");
    if (cfg_.use_depth) m.push_back("depth");
    return m;
  }

  // Assembles the conditioning context: resampled sensory tokens, projected
  // slow-policy latents (or nulls), the window-aligned discrete chunk, and
  // the proprio feature. drop_* null out sources for guidance training.
  ConditionSet<T> build_conditions(ag::Graph<T>& g, const env::Observation& obs,
                                   const exec::GeneralistResult* gen, int tau_s,
                                   bool drop_latents = false, bool drop_proprio = false) const {
    ConditionSet<T> c;
    std::vector<ag::Ref<T>> parts = encode_sensory(g, obs, default_modalities());

    bool task_ok = gen && cfg_.use_task_latents && !drop_latents && gen->task_latents.rows > 0;
    bool act_ok =
        gen && cfg_.use_action_latents && !drop_latents && gen->action_latents.rows > 0;
    if (task_ok) {
      parts.push_back(task_proj_(g, g.constant(gen->task_latents.template cast<T>())));
      c.has_task = true;
    } else {
      parts.push_back(null_task_);
    }
    if (act_ok) {
      parts.push_back(action_proj_(g, g.constant(gen->action_latents.template cast<T>())));
      c.has_action = true;
    } else {
      parts.push_back(null_action_);
    }
    c.ctx = ag::concat_rows(g, parts);

    // discrete-action alignment: retained suffix covers the first steps,
    // learned pad fills the rest
    int retained = 0;
    Tensor<T> chunk_rows;
    if (gen && cfg_.use_discrete_chunk && gen->chunk.length() > 0) {
      auto win = exec::shifted_window(gen->chunk, std::min(tau_s, gen->chunk.length()));
      retained = std::min(win.length(), cfg_.k_s);
      chunk_rows = Tensor<T>(retained, codec::kActionDims);
      for (int i = 0; i < retained; ++i)
        for (int d = 0; d < codec::kActionDims; ++d)
          chunk_rows.at(i, d) = T(win.values.at(i, d));
      c.has_chunk = retained > 0;
    }
    c.retained_steps = retained;
    std::vector<ag::Ref<T>> chunk_parts;
    if (retained > 0) chunk_parts.push_back(g.constant(chunk_rows));
    if (retained < cfg_.k_s)
      chunk_parts.push_back(
          ag::gather_rows(g, pad_action_, std::vector<int>(size_t(cfg_.k_s - retained), 0)));
    c.aligned_chunk = chunk_parts.size() == 1 ? chunk_parts[0] : ag::concat_rows(g, chunk_parts);

    if (cfg_.use_proprio && !drop_proprio) {
      Tensor<T> pr(1, codec::kActionDims);
      for (int d = 0; d < codec::kActionDims; ++d) pr.v[size_t(d)] = T(obs.proprio[size_t(d)]);
      c.proprio_feat = proprio_fc2_(g, ag::gelu(g, proprio_fc1_(g, g.constant(pr))));
      c.has_proprio = true;
    } else {
      c.proprio_feat = null_proprio_;
    }
    return c;
  }

  // One denoising evaluation: predicts the clean chunk (sample head) or the
  // noise (noise head) for a_t at timestep t.
  ag::Ref<T> denoise(ag::Graph<T>& g, const Tensor<T>& a_t, int t,
                     const ConditionSet<T>& cond) const {
    if (a_t.rows != cfg_.k_s || a_t.cols != codec::kActionDims)
      throw std::invalid_argument("denoise: a_t must be k_s x 7");
    const int h = cfg_.hidden;
    auto x = input_embed_(
        g, ag::concat_cols<T>(g, {g.constant(a_t), cond.aligned_chunk}));

    auto mod_in = ag::add(g, cond.proprio_feat,
                          t_proj_(g, g.constant(nn::sinusoidal_embedding<T>(t, h))));
    auto mod_vec = ag::silu(g, mod_in);

    Tensor<T> ones_row(1, h);
    ones_row.fill(T(1));
    auto one = g.constant(ones_row);
    auto modulate = [&](ag::Ref<T> y, ag::Ref<T> gamma, ag::Ref<T> beta) {
      auto scaled = ag::mul_rowvec(g, ag::layernorm_rows(g, y), ag::add(g, gamma, one));
      return ag::add_rowvec(g, scaled, beta);
    };

    Tensor<T> causal = nn::causal_mask<T>(cfg_.k_s);
    std::vector<int> act_pos(size_t(cfg_.k_s));
    for (int i = 0; i < cfg_.k_s; ++i) act_pos[size_t(i)] = i;

    for (auto& b : blocks_) {
      auto m9 = b.mod(g, mod_vec);
      auto piece = [&](int i) { return ag::slice_cols(g, m9, i * h, (i + 1) * h); };
      auto g1 = piece(0), b1 = piece(1), a1 = piece(2);
      auto g2 = piece(3), b2 = piece(4), a2 = piece(5);
      auto g3 = piece(6), b3 = piece(7), a3 = piece(8);

      if (cfg_.method == CondMethod::InContext) {
        // conditions prepended as extra attendable tokens
        auto z = ag::concat_rows<T>(g, {cond.ctx, modulate(x, g1, b1)});
        int n_ctx = int(cond.ctx->val.rows);
        int n = n_ctx + cfg_.k_s;
        Tensor<T> mask(n, n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            if (j >= n_ctx && (i < n_ctx || j > i)) mask.at(i, j) = T(-1e9);
        std::vector<int> pos(size_t(n), 0);
        for (int i = n_ctx; i < n; ++i) pos[size_t(i)] = i - n_ctx;
        auto y = b.self_attn(g, z, z, &mask, &pos, &pos);
        y = ag::slice_rows(g, y, n_ctx, n);
        x = ag::add(g, x, ag::mul_rowvec(g, y, a1));
      } else {
        auto y = b.self_attn(g, modulate(x, g1, b1), modulate(x, g1, b1), &causal, &act_pos,
                             &act_pos);
        x = ag::add(g, x, ag::mul_rowvec(g, y, a1));
      }

      if (cfg_.method == CondMethod::XAttn) {
        auto y = b.cross_attn(g, modulate(x, g2, b2), cond.ctx);
        x = ag::add(g, x, ag::mul_rowvec(g, y, a2));
      } else if (cfg_.method == CondMethod::FiLM) {
        auto pooled = ag::mean_rows(g, cond.ctx);
        auto fb = b.film(g, pooled);
        auto fg = ag::slice_cols(g, fb, 0, h);
        auto fs = ag::slice_cols(g, fb, h, 2 * h);
        x = ag::add_rowvec(g, ag::mul_rowvec(g, x, ag::add(g, fg, one)), fs);
      }

      auto y = b.mlp(g, modulate(x, g3, b3));
      x = ag::add(g, x, ag::mul_rowvec(g, y, a3));
    }

    auto fm = final_mod_(g, mod_vec);
    auto gf = ag::slice_cols(g, fm, 0, h);
    auto bf = ag::slice_cols(g, fm, h, 2 * h);
    auto out = modulate(x, gf, bf);
    return head_(g, out);
  }

  // Denoising objective: t ~ U(1,T), eps ~ N(0,I) per item, mean squared
  // error against the head's target, averaged over all elements. Latent and
  // proprio conditions are nulled with the guidance drop probability.
  TrainStats training_step(ag::Graph<T>& g, const std::vector<TrainItem>& batch,
                           const diffusion::NoiseSchedule& sched,
                           const diffusion::GuidanceConfig& guidance, Rng& rng,
                           ag::Ref<T>* loss_out = nullptr) const {
    if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
    TrainStats stats;
    ag::Ref<T> total;
    for (const auto& item : batch) {
      if (item.a0.length() != cfg_.k_s)
        throw std::invalid_argument("training_step: chunk length must equal k_s");
      int t = int(rng.randint(1, uint64_t(sched.T)));
      Tensor<T> a0 = item.a0.values.template cast<T>();
      Tensor<T> eps = Tensor<T>::randn(cfg_.k_s, codec::kActionDims, rng);
      Tensor<T> a_t = diffusion::forward_diffuse(sched, a0, t, eps);
      bool drop = should_drop(rng, guidance.drop_probability);
      if (drop) ++stats.dropped;
      auto cond = build_conditions(g, item.obs, item.gen, item.tau_s, drop, drop);
      auto pred = denoise(g, a_t, t, cond);
      const Tensor<T>& target = cfg_.head == diffusion::PredictionHead::Sample ? a0 : eps;
      auto l = ag::mse_mean(g, pred, target);
      total = total ? ag::add(g, total, l) : l;
      ++stats.items;
    }
    auto loss = ag::scale(g, total, T(1) / T(batch.size()));
    stats.loss = double(loss->val.v[0]);
    if (loss_out) *loss_out = loss;
    return stats;
  }

  // Guided DDIM rollout: conditions are built once per multistep denoise.
  codec::ActionChunk sample(const env::Observation& obs, const exec::GeneralistResult* gen,
                            int tau_s, const diffusion::NoiseSchedule& sched, int steps,
                            const diffusion::GuidanceConfig& guidance, Rng& rng) const {
    ag::Graph<T> cg;
    auto cond = build_conditions(cg, obs, gen, tau_s);
    auto uncond = build_conditions(cg, obs, gen, tau_s, /*drop_latents=*/true,
                                   /*drop_proprio=*/true);
    bool guided = guidance.w_g != 1.0 && (cond.has_task || cond.has_action || cond.has_proprio);

    diffusion::DenoiseFn fn = [&](const Tensor<float>& a_t, int t) {
      ag::Graph<T> g;
      Tensor<T> at = a_t.template cast<T>();
      Tensor<float> pc = denoise(g, at, t, cond)->val.template cast<float>();
      Tensor<float> out = pc;
      if (guided) {
        ag::Graph<T> gu;
        Tensor<float> pu = denoise(gu, at, t, uncond)->val.template cast<float>();
        out = diffusion::cfg_combine(pc, pu, guidance.w_g);
      }
      if (cfg_.head == diffusion::PredictionHead::Noise)
        out = diffusion::x0_from_eps(sched, a_t, t, out);
      return out;
    };
    return diffusion::ddim_sample(sched, fn, cfg_.k_s, steps, rng);
  }

  nn::ParamStore<T> params;

 private:
  struct Block {
    nn::MultiHeadAttention<T> self_attn, cross_attn;
    nn::Mlp<T> mlp;
    nn::Linear<T> mod, film;
  };

  SpecialistConfig cfg_;
  VitEncoder<T> rgb_vit_, depth_vit_;
  Resampler<T> rgb_resampler_, depth_resampler_;
  nn::Linear<T> task_proj_, action_proj_;
  ag::Ref<T> null_task_, null_action_, null_proprio_, pad_action_;
  nn::Linear<T> input_embed_;
  nn::Linear<T> proprio_fc1_, proprio_fc2_, t_proj_;
  std::vector<Block> blocks_;
  nn::Linear<T> final_mod_;
  nn::Linear<T> head_;
};

}  // namespace dualpol::spec
