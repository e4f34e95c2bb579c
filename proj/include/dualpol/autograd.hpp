#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualpol/kernels.hpp"
#include "dualpol/tensor.hpp"

// Tape-based reverse-mode autodiff over 2D tensors. A Graph records the
// nodes created during one forward pass; parameters live outside the
// graph and persist across passes. Backward walks the tape in reverse
// creation order.

namespace dualpol::ag {

using dualpol::Tensor;

template <class T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;  // lazily sized
  bool requires_grad = false;
  bool is_param = false;
  std::function<void(Node<T>&)> back;  // accumulates into parents

  Tensor<T>& g() {
    if (grad.rows == 0) grad = Tensor<T>(val.rows, val.cols);
    return grad;
  }
};

template <class T>
using Ref = std::shared_ptr<Node<T>>;

template <class T>
Ref<T> make_param(Tensor<T> v, bool trainable = true) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(v);
  n->requires_grad = trainable;
  n->is_param = true;
  return n;
}

template <class T>
class Graph {
 public:
  Ref<T> make(Tensor<T> v, std::initializer_list<Ref<T>> parents,
              std::function<void(Node<T>&)> back = nullptr) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(v);
    for (auto& p : parents)
      if (p && p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->back = std::move(back);
    tape_.push_back(n);
    return n;
  }

  Ref<T> constant(Tensor<T> v) { return make(std::move(v), {}); }

  void backward(const Ref<T>& root) {
    if (root->val.size() != 1) throw std::runtime_error("backward root must be scalar");
    root->g().v[0] = T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.requires_grad && n.back && n.grad.rows != 0) n.back(n);
    }
  }

  size_t size() const { return tape_.size(); }

 private:
  std::vector<Ref<T>> tape_;
};

namespace detail {
template <class T>
inline void acc(Tensor<T>& dst, const Tensor<T>& src) {
  for (int64_t i = 0; i < dst.size(); ++i) dst.v[i] += src.v[i];
}
}  // namespace detail

template <class T>
Ref<T> matmul(Graph<T>& g, Ref<T> a, Ref<T> b) {
  if (a->val.cols != b->val.rows) throw std::runtime_error("matmul shape mismatch");
  Tensor<T> out(a->val.rows, b->val.cols);
  kern::gemm_nn(a->val.data(), b->val.data(), out.data(), a->val.rows, a->val.cols, b->val.cols);
  return g.make(std::move(out), {a, b}, [a, b](Node<T>& n) {
    int m = a->val.rows, k = a->val.cols, c = b->val.cols;
    if (a->requires_grad)
      kern::gemm_nt_acc(n.grad.data(), b->val.data(), a->g().data(), m, c, k);
    if (b->requires_grad)
      kern::gemm_tn_acc(a->val.data(), n.grad.data(), b->g().data(), k, m, c);
  });
}

template <class T>
Ref<T> add(Graph<T>& g, Ref<T> a, Ref<T> b) {
  Tensor<T> out = a->val;
  detail::acc(out, b->val);
  return g.make(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) detail::acc(a->g(), n.grad);
    if (b->requires_grad) detail::acc(b->g(), n.grad);
  });
}

template <class T>
Ref<T> sub(Graph<T>& g, Ref<T> a, Ref<T> b) {
  Tensor<T> out = a->val;
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] -= b->val.v[i];
  return g.make(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) detail::acc(a->g(), n.grad);
    if (b->requires_grad)
      for (int64_t i = 0; i < n.grad.size(); ++i) b->g().v[i] -= n.grad.v[i];
  });
}

template <class T>
Ref<T> mul(Graph<T>& g, Ref<T> a, Ref<T> b) {
  Tensor<T> out = a->val;
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] *= b->val.v[i];
  return g.make(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad)
      for (int64_t i = 0; i < n.grad.size(); ++i) a->g().v[i] += n.grad.v[i] * b->val.v[i];
    if (b->requires_grad)
      for (int64_t i = 0; i < n.grad.size(); ++i) b->g().v[i] += n.grad.v[i] * a->val.v[i];
  });
}

template <class T>
Ref<T> scale(Graph<T>& g, Ref<T> a, T s) {
  Tensor<T> out = a->val;
  for (auto& x : out.v) x *= s;
  return g.make(std::move(out), {a}, [a, s](Node<T>& n) {
    if (!a->requires_grad) return;
    for (int64_t i = 0; i < n.grad.size(); ++i) a->g().v[i] += n.grad.v[i] * s;
  });
}

// out[i,j] = a[i,j] + r[0,j]
template <class T>
Ref<T> add_rowvec(Graph<T>& g, Ref<T> a, Ref<T> r) {
  Tensor<T> out = a->val;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) += r->val.v[j];
  return g.make(std::move(out), {a, r}, [a, r](Node<T>& n) {
    if (a->requires_grad) detail::acc(a->g(), n.grad);
    if (r->requires_grad)
      for (int i = 0; i < n.grad.rows; ++i)
        for (int j = 0; j < n.grad.cols; ++j) r->g().v[j] += n.grad.at(i, j);
  });
}

// out[i,j] = a[i,j] * r[0,j]
template <class T>
Ref<T> mul_rowvec(Graph<T>& g, Ref<T> a, Ref<T> r) {
  Tensor<T> out = a->val;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) *= r->val.v[j];
  return g.make(std::move(out), {a, r}, [a, r](Node<T>& n) {
    if (a->requires_grad)
      for (int i = 0; i < n.grad.rows; ++i)
        for (int j = 0; j < n.grad.cols; ++j) a->g().at(i, j) += n.grad.at(i, j) * r->val.v[j];
    if (r->requires_grad)
      for (int i = 0; i < n.grad.rows; ++i)
        for (int j = 0; j < n.grad.cols; ++j) r->g().v[j] += n.grad.at(i, j) * a->val.at(i, j);
  });
}

template <class T>
Ref<T> transpose(Graph<T>& g, Ref<T> a) {
  Tensor<T> out(a->val.cols, a->val.rows);
  for (int i = 0; i < a->val.rows; ++i)
    for (int j = 0; j < a->val.cols; ++j) out.at(j, i) = a->val.at(i, j);
  return g.make(std::move(out), {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    for (int i = 0; i < n.grad.rows; ++i)
      for (int j = 0; j < n.grad.cols; ++j) a->g().at(j, i) += n.grad.at(i, j);
  });
}

template <class T>
Ref<T> softmax_rows(Graph<T>& g, Ref<T> a) {
  Tensor<T> out(a->val.rows, a->val.cols);
  kern::softmax_rows(a->val.data(), out.data(), a->val.rows, a->val.cols);
  auto node = g.make(std::move(out), {a}, nullptr);
  if (node->requires_grad) {
    Tensor<T> probs = node->val;
    node->back = [a, probs](Node<T>& n) {
      for (int i = 0; i < n.grad.rows; ++i) {
        const T* p = probs.row(i);
        const T* dy = n.grad.row(i);
        T dot = 0;
        for (int j = 0; j < n.grad.cols; ++j) dot += dy[j] * p[j];
        T* dx = a->g().row(i);
        for (int j = 0; j < n.grad.cols; ++j) dx[j] += p[j] * (dy[j] - dot);
      }
    };
  }
  return node;
}

template <class T>
Ref<T> layernorm_rows(Graph<T>& g, Ref<T> a, T eps = T(1e-5)) {
  int m = a->val.rows, c = a->val.cols;
  Tensor<T> out(m, c);
  Tensor<T> inv_std(m, 1);
  for (int i = 0; i < m; ++i) {
    const T* x = a->val.row(i);
    T mean = 0;
    for (int j = 0; j < c; ++j) mean += x[j];
    mean /= T(c);
    T var = 0;
    for (int j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= T(c);
    T inv = T(1) / std::sqrt(var + eps);
    inv_std.v[i] = inv;
    for (int j = 0; j < c; ++j) out.at(i, j) = (x[j] - mean) * inv;
  }
  auto node = g.make(std::move(out), {a}, nullptr);
  if (node->requires_grad) {
    Tensor<T> y = node->val;
    node->back = [a, y, inv_std, c](Node<T>& n) {
      for (int i = 0; i < n.grad.rows; ++i) {
        const T* yi = y.row(i);
        const T* dy = n.grad.row(i);
        T sum_dy = 0, sum_dyy = 0;
        for (int j = 0; j < c; ++j) {
          sum_dy += dy[j];
          sum_dyy += dy[j] * yi[j];
        }
        T inv = inv_std.v[i];
        T* dx = a->g().row(i);
        for (int j = 0; j < c; ++j)
          dx[j] += inv * (dy[j] - sum_dy / T(c) - yi[j] * sum_dyy / T(c));
      }
    };
  }
  return node;
}

template <class T>
Ref<T> gelu(Graph<T>& g, Ref<T> a) {
  Tensor<T> out = a->val;
  for (auto& x : out.v) x = kern::gelu(x);
  return g.make(std::move(out), {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    for (int64_t i = 0; i < n.grad.size(); ++i)
      a->g().v[i] += n.grad.v[i] * kern::gelu_grad(a->val.v[i]);
  });
}

template <class T>
Ref<T> silu(Graph<T>& g, Ref<T> a) {
  Tensor<T> out = a->val;
  for (auto& x : out.v) x = kern::silu(x);
  return g.make(std::move(out), {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    for (int64_t i = 0; i < n.grad.size(); ++i)
      a->g().v[i] += n.grad.v[i] * kern::silu_grad(a->val.v[i]);
  });
}

// Rows of an embedding table; backward scatter-adds.
template <class T>
Ref<T> gather_rows(Graph<T>& g, Ref<T> table, std::vector<int> idx) {
  Tensor<T> out(int(idx.size()), table->val.cols);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(table->val.row(idx[i]), table->val.row(idx[i]) + table->val.cols, out.row(int(i)));
  return g.make(std::move(out), {table}, [table, idx](Node<T>& n) {
    if (!table->requires_grad) return;
    for (size_t i = 0; i < idx.size(); ++i) {
      T* dst = table->g().row(idx[i]);
      const T* src = n.grad.row(int(i));
      for (int j = 0; j < n.grad.cols; ++j) dst[j] += src[j];
    }
  });
}

template <class T>
Ref<T> slice_rows(Graph<T>& g, Ref<T> a, int r0, int r1) {
  Tensor<T> out(r1 - r0, a->val.cols);
  std::copy(a->val.row(r0), a->val.row(r0) + out.size(), out.data());
  return g.make(std::move(out), {a}, [a, r0](Node<T>& n) {
    if (!a->requires_grad) return;
    T* dst = a->g().row(r0);
    for (int64_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad.v[i];
  });
}

template <class T>
Ref<T> slice_cols(Graph<T>& g, Ref<T> a, int c0, int c1) {
  Tensor<T> out(a->val.rows, c1 - c0);
  for (int i = 0; i < out.rows; ++i)
    std::copy(a->val.row(i) + c0, a->val.row(i) + c1, out.row(i));
  return g.make(std::move(out), {a}, [a, c0](Node<T>& n) {
    if (!a->requires_grad) return;
    for (int i = 0; i < n.grad.rows; ++i) {
      T* dst = a->g().row(i) + c0;
      const T* src = n.grad.row(i);
      for (int j = 0; j < n.grad.cols; ++j) dst[j] += src[j];
    }
  });
}

template <class T>
Ref<T> concat_rows(Graph<T>& g, std::vector<Ref<T>> parts) {
  int rows = 0, cols = parts[0]->val.cols;
  for (auto& p : parts) rows += p->val.rows;
  Tensor<T> out(rows, cols);
  int r = 0;
  for (auto& p : parts) {
    std::copy(p->val.data(), p->val.data() + p->val.size(), out.row(r));
    r += p->val.rows;
  }
  bool req = false;
  for (auto& p : parts) req = req || p->requires_grad;
  auto n = g.make(std::move(out), {}, nullptr);
  n->requires_grad = req;
  if (req)
    n->back = [parts](Node<T>& nn) {
      int r = 0;
      for (auto& p : parts) {
        if (p->requires_grad) {
          T* dst = p->g().data();
          const T* src = nn.grad.row(r);
          for (int64_t i = 0; i < p->val.size(); ++i) dst[i] += src[i];
        }
        r += p->val.rows;
      }
    };
  return n;
}

template <class T>
Ref<T> concat_cols(Graph<T>& g, std::vector<Ref<T>> parts) {
  int rows = parts[0]->val.rows, cols = 0;
  for (auto& p : parts) cols += p->val.cols;
  Tensor<T> out(rows, cols);
  int c = 0;
  for (auto& p : parts) {
    for (int i = 0; i < rows; ++i)
      std::copy(p->val.row(i), p->val.row(i) + p->val.cols, out.row(i) + c);
    c += p->val.cols;
  }
  bool req = false;
  for (auto& p : parts) req = req || p->requires_grad;
  auto n = g.make(std::move(out), {}, nullptr);
  n->requires_grad = req;
  if (req)
    n->back = [parts, rows](Node<T>& nn) {
      int c = 0;
      for (auto& p : parts) {
        if (p->requires_grad)
          for (int i = 0; i < rows; ++i) {
            T* dst = p->g().row(i);
            const T* src = nn.grad.row(i) + c;
            for (int j = 0; j < p->val.cols; ++j) dst[j] += src[j];
          }
        c += p->val.cols;
      }
    };
  return n;
}

// Adds a non-differentiable constant (e.g. an attention mask).
template <class T>
Ref<T> add_const(Graph<T>& g, Ref<T> a, const Tensor<T>& c) {
  Tensor<T> out = a->val;
  detail::acc(out, c);
  return g.make(std::move(out), {a}, [a](Node<T>& n) {
    if (a->requires_grad) detail::acc(a->g(), n.grad);
  });
}

// Rotary position embedding over one attention head [tokens x head_dim].
// pos[i] is the absolute position of row i. Linear, so backward applies
// the inverse rotation to the gradient.
template <class T>
Ref<T> rotary(Graph<T>& g, Ref<T> a, std::vector<int> pos, double base = 10000.0) {
  int dh = a->val.cols;
  Tensor<T> out = a->val;
  for (int i = 0; i < out.rows; ++i) {
    T* x = out.row(i);
    for (int j = 0; j + 1 < dh; j += 2) {
      double theta = double(pos[i]) * std::pow(base, -double(j) / double(dh));
      T c = T(std::cos(theta)), s = T(std::sin(theta));
      T x0 = x[j], x1 = x[j + 1];
      x[j] = c * x0 - s * x1;
      x[j + 1] = s * x0 + c * x1;
    }
  }
  return g.make(std::move(out), {a}, [a, pos, base, dh](Node<T>& n) {
    if (!a->requires_grad) return;
    for (int i = 0; i < n.grad.rows; ++i) {
      const T* dy = n.grad.row(i);
      T* dx = a->g().row(i);
      for (int j = 0; j + 1 < dh; j += 2) {
        double theta = double(pos[i]) * std::pow(base, -double(j) / double(dh));
        T c = T(std::cos(theta)), s = T(std::sin(theta));
        dx[j] += c * dy[j] + s * dy[j + 1];
        dx[j + 1] += -s * dy[j] + c * dy[j + 1];
      }
    }
  });
}

// Sum over rows of -log softmax(logits)[target]. Returns 1x1.
template <class T>
Ref<T> cross_entropy_sum(Graph<T>& g, Ref<T> logits, std::vector<int> targets) {
  int m = logits->val.rows, c = logits->val.cols;
  Tensor<T> probs(m, c);
  kern::softmax_rows(logits->val.data(), probs.data(), m, c);
  Tensor<T> out(1, 1);
  T loss = 0;
  for (int i = 0; i < m; ++i) loss -= std::log(probs.at(i, targets[i]));
  out.v[0] = loss;
  auto node = g.make(std::move(out), {logits}, nullptr);
  if (node->requires_grad)
    node->back = [logits, probs, targets, m, c](Node<T>& n) {
      T dy = n.grad.v[0];
      for (int i = 0; i < m; ++i) {
        T* dx = logits->g().row(i);
        const T* p = probs.row(i);
        for (int j = 0; j < c; ++j) dx[j] += dy * p[j];
        dx[targets[i]] -= dy;
      }
    };
  return node;
}

// Mean over all elements of (pred - target)^2. Returns 1x1.
template <class T>
Ref<T> mse_mean(Graph<T>& g, Ref<T> pred, const Tensor<T>& target) {
  Tensor<T> out(1, 1);
  T s = 0;
  for (int64_t i = 0; i < pred->val.size(); ++i) {
    T d = pred->val.v[i] - target.v[i];
    s += d * d;
  }
  int64_t n_el = pred->val.size();
  out.v[0] = s / T(n_el);
  return g.make(std::move(out), {pred}, [pred, target, n_el](Node<T>& n) {
    if (!pred->requires_grad) return;
    T dy = n.grad.v[0] * T(2) / T(n_el);
    for (int64_t i = 0; i < n_el; ++i)
      pred->g().v[i] += dy * (pred->val.v[i] - target.v[i]);
  });
}

template <class T>
Ref<T> mean_rows(Graph<T>& g, Ref<T> a) {
  int m = a->val.rows, c = a->val.cols;
  Tensor<T> out(1, c);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j) out.v[j] += a->val.at(i, j);
  for (auto& x : out.v) x /= T(m);
  return g.make(std::move(out), {a}, [a, m, c](Node<T>& n) {
    if (!a->requires_grad) return;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j) a->g().at(i, j) += n.grad.v[j] / T(m);
  });
}

}  // namespace dualpol::ag
