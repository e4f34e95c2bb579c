#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dualpol/autograd.hpp"

namespace dualpol::nn {

using ag::Graph;
using ag::Ref;

template <class T>
struct ParamStore {
  std::vector<std::pair<std::string, Ref<T>>> items;

  Ref<T> add(const std::string& name, Tensor<T> v, bool trainable = true) {
    auto p = ag::make_param(std::move(v), trainable);
    items.emplace_back(name, p);
    return p;
  }

  Ref<T> find(const std::string& name) const {
    for (auto& [n, p] : items)
      if (n == name) return p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, p] : items)
      if (p->grad.rows != 0) p->grad.fill(T(0));
  }

  int64_t param_count() const {
    int64_t c = 0;
    for (auto& [n, p] : items) c += p->val.size();
    return c;
  }
};

template <class T>
struct Linear {
  Ref<T> W, b;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
         bool zero_init = false, bool trainable = true) {
    Tensor<T> w = zero_init ? Tensor<T>(in, out)
                            : Tensor<T>::randn(in, out, rng, T(0.02));
    W = ps.add(name + ".W", std::move(w), trainable);
    b = ps.add(name + ".b", Tensor<T>(1, out), trainable);
  }

  Ref<T> operator()(Graph<T>& g, Ref<T> x) const {
    return ag::add_rowvec(g, ag::matmul(g, x, W), b);
  }
};

template <class T>
struct Embedding {
  Ref<T> E;

  Embedding() = default;
  Embedding(ParamStore<T>& ps, const std::string& name, int vocab, int dim, Rng& rng,
            bool trainable = true) {
    E = ps.add(name + ".E", Tensor<T>::randn(vocab, dim, rng, T(0.02)), trainable);
  }

  Ref<T> operator()(Graph<T>& g, std::vector<int> idx) const {
    return ag::gather_rows(g, E, std::move(idx));
  }
};

template <class T>
struct LayerNorm {
  Ref<T> w, b;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, int dim, bool trainable = true) {
    Tensor<T> ones(1, dim);
    ones.fill(T(1));
    w = ps.add(name + ".w", std::move(ones), trainable);
    b = ps.add(name + ".b", Tensor<T>(1, dim), trainable);
  }

  Ref<T> operator()(Graph<T>& g, Ref<T> x) const {
    return ag::add_rowvec(g, ag::mul_rowvec(g, ag::layernorm_rows(g, x), w), b);
  }
};

// Causal mask for self-attention: -1e9 above the diagonal.
template <class T>
Tensor<T> causal_mask(int n) {
  Tensor<T> m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m.at(i, j) = T(-1e9);
  return m;
}

template <class T>
struct MultiHeadAttention {
  Linear<T> Wq, Wk, Wv, Wo;
  int heads = 1, dim = 0;
  bool use_rotary = false;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& ps, const std::string& name, int d, int h, Rng& rng,
                     bool rotary = false, bool trainable = true)
      : Wq(ps, name + ".q", d, d, rng, false, trainable),
        Wk(ps, name + ".k", d, d, rng, false, trainable),
        Wv(ps, name + ".v", d, d, rng, false, trainable),
        Wo(ps, name + ".o", d, d, rng, false, trainable),
        heads(h),
        dim(d),
        use_rotary(rotary) {}

  // mask: optional [Tq x Tk] additive mask. pos_*: absolute positions for rotary.
  Ref<T> operator()(Graph<T>& g, Ref<T> xq, Ref<T> xkv, const Tensor<T>* mask = nullptr,
                    const std::vector<int>* pos_q = nullptr,
                    const std::vector<int>* pos_k = nullptr) const {
    auto q = Wq(g, xq), k = Wk(g, xkv), v = Wv(g, xkv);
    int dh = dim / heads;
    T inv_sqrt = T(1) / std::sqrt(T(dh));
    std::vector<Ref<T>> outs;
    std::vector<int> default_pos;
    if (use_rotary && !pos_q) {
      default_pos.resize(size_t(std::max(xq->val.rows, xkv->val.rows)));
      for (size_t i = 0; i < default_pos.size(); ++i) default_pos[i] = int(i);
    }
    for (int h = 0; h < heads; ++h) {
      auto qh = ag::slice_cols(g, q, h * dh, (h + 1) * dh);
      auto kh = ag::slice_cols(g, k, h * dh, (h + 1) * dh);
      auto vh = ag::slice_cols(g, v, h * dh, (h + 1) * dh);
      if (use_rotary) {
        std::vector<int> pq(pos_q ? *pos_q
                                  : std::vector<int>(default_pos.begin(),
                                                     default_pos.begin() + xq->val.rows));
        std::vector<int> pk(pos_k ? *pos_k
                                  : std::vector<int>(default_pos.begin(),
                                                     default_pos.begin() + xkv->val.rows));
        qh = ag::rotary(g, qh, std::move(pq));
        kh = ag::rotary(g, kh, std::move(pk));
      }
      auto scores = ag::scale(g, ag::matmul(g, qh, ag::transpose(g, kh)), inv_sqrt);
      if (mask) scores = ag::add_const(g, scores, *mask);
      auto probs = ag::softmax_rows(g, scores);
      outs.push_back(ag::matmul(g, probs, vh));
    }
    return Wo(g, ag::concat_cols(g, outs));
  }
};

template <class T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(ParamStore<T>& ps, const std::string& name, int d, int hidden, Rng& rng,
      bool zero_out = false, bool trainable = true)
      : fc1(ps, name + ".fc1", d, hidden, rng, false, trainable),
        fc2(ps, name + ".fc2", hidden, d, rng, zero_out, trainable) {}

  Ref<T> operator()(Graph<T>& g, Ref<T> x) const { return fc2(g, ag::gelu(g, fc1(g, x))); }
};

// Pre-LN transformer block (used by the generalist decoder and the ViT encoders).
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Mlp<T> mlp;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& ps, const std::string& name, int d, int h, int mlp_ratio,
                   Rng& rng, bool rotary = false, bool trainable = true)
      : ln1(ps, name + ".ln1", d, trainable),
        ln2(ps, name + ".ln2", d, trainable),
        attn(ps, name + ".attn", d, h, rng, rotary, trainable),
        mlp(ps, name + ".mlp", d, d * mlp_ratio, rng, false, trainable) {}

  Ref<T> operator()(Graph<T>& g, Ref<T> x, const Tensor<T>* mask = nullptr) const {
    auto h1 = ln1(g, x);
    x = ag::add(g, x, attn(g, h1, h1, mask));
    return ag::add(g, x, mlp(g, ln2(g, x)));
  }
};

// Sinusoidal embedding of a diffusion timestep (constant w.r.t. parameters).
template <class T>
Tensor<T> sinusoidal_embedding(int t, int dim) {
  Tensor<T> e(1, dim);
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    e.v[i] = T(std::sin(double(t) * freq));
    e.v[half + i] = T(std::cos(double(t) * freq));
  }
  return e;
}

template <class T>
struct AdamW {
  struct Slot {
    Ref<T> p;
    Tensor<T> m, v;
  };
  std::vector<Slot> slots;
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  int64_t step_count = 0;

  explicit AdamW(const ParamStore<T>& ps, double lr_ = 1e-4, double wd = 0.0)
      : lr(lr_), weight_decay(wd) {
    for (auto& [n, p] : ps.items)
      if (p->requires_grad)
        slots.push_back({p, Tensor<T>(p->val.rows, p->val.cols),
                         Tensor<T>(p->val.rows, p->val.cols)});
  }

  void step(double lr_now = -1.0) {
    if (lr_now < 0) lr_now = lr;
    ++step_count;
    double bc1 = 1.0 - std::pow(beta1, double(step_count));
    double bc2 = 1.0 - std::pow(beta2, double(step_count));
    for (auto& s : slots) {
      if (s.p->grad.rows == 0) continue;
      for (int64_t i = 0; i < s.p->val.size(); ++i) {
        double gr = double(s.p->grad.v[i]);
        double m = beta1 * double(s.m.v[i]) + (1.0 - beta1) * gr;
        double v = beta2 * double(s.v.v[i]) + (1.0 - beta2) * gr * gr;
        s.m.v[i] = T(m);
        s.v.v[i] = T(v);
        double upd = (m / bc1) / (std::sqrt(v / bc2) + eps);
        s.p->val.v[i] = T(double(s.p->val.v[i]) -
                          lr_now * (upd + weight_decay * double(s.p->val.v[i])));
      }
    }
  }
};

// Cosine-annealed learning rate with linear warmup.
inline double cosine_lr(double base, int64_t step, int64_t warmup, int64_t total) {
  if (warmup > 0 && step < warmup) return base * double(step + 1) / double(warmup);
  if (total <= warmup) return base;
  double p = double(step - warmup) / double(total - warmup);
  if (p > 1.0) p = 1.0;
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * p));
}

}  // namespace dualpol::nn
