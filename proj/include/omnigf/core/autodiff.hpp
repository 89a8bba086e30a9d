#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "omnigf/core/kernels.hpp"
#include "omnigf/core/tensor.hpp"

namespace omnigf {

// Reverse-mode autodiff over Tensor<T>. Graphs are built per forward pass and
// released when the output Var goes out of scope; parameters are long-lived
// leaf nodes whose gradients accumulate across backward() calls until
// zero_grad(). Single-threaded by design: every op is a deterministic loop.

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
  }
  void zero_grad() {
    if (grad.shape == value.shape) grad.fill(T(0));
  }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_var(Tensor<T> v, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

template <class T>
Var<T> make_param(Tensor<T> v) {
  return make_var(std::move(v), true);
}

namespace detail {

template <class T>
bool any_requires(std::initializer_list<const Var<T>*> ps) {
  for (const Var<T>* p : ps)
    if (*p && (*p)->requires_grad) return true;
  return false;
}

template <class T>
void topo_collect(const Var<T>& root, std::vector<Node<T>*>& order) {
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Backpropagate from a scalar loss. Gradients are added into every
// requires_grad node reachable from `loss`.
template <class T>
void backward(const Var<T>& loss) {
  if (loss->value.size() != 1) throw std::logic_error("backward: loss must be scalar");
  if (!loss->requires_grad) return;
  std::vector<Node<T>*> order;
  detail::topo_collect(loss, order);
  loss->ensure_grad();
  loss->grad.at(0) += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn();
  }
}

// ---- elementwise / shape ops ----

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  auto out = make_var(a->value);
  for (std::int64_t i = 0; i < out->value.size(); ++i) out->value.data[i] += b->value.data[i];
  if (detail::any_requires<T>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    Node<T>* self = out.get();
    Node<T>* pa = a.get();
    Node<T>* pb = b.get();
    out->backward_fn = [self, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < self->grad.size(); ++i) pa->grad.data[i] += self->grad.data[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::int64_t i = 0; i < self->grad.size(); ++i) pb->grad.data[i] += self->grad.data[i];
      }
    };
  }
  return out;
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  auto out = make_var(a->value);
  for (auto& v : out->value.data) v *= s;
  if (a->requires_grad) {
    out->requires_grad = true;
    out->parents = {a};
    Node<T>* self = out.get();
    Node<T>* pa = a.get();
    out->backward_fn = [self, pa, s]() {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self->grad.size(); ++i) pa->grad.data[i] += s * self->grad.data[i];
    };
  }
  return out;
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("mul: shape mismatch");
  auto out = make_var(a->value);
  for (std::int64_t i = 0; i < out->value.size(); ++i) out->value.data[i] *= b->value.data[i];
  if (detail::any_requires<T>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    Node<T>* self = out.get();
    Node<T>* pa = a.get();
    Node<T>* pb = b.get();
    out->backward_fn = [self, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < self->grad.size(); ++i)
          pa->grad.data[i] += self->grad.data[i] * pb->value.data[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::int64_t i = 0; i < self->grad.size(); ++i)
          pb->grad.data[i] += self->grad.data[i] * pa->value.data[i];
      }
    };
  }
  return out;
}

// out[i,j] = mat[i,j] * vec[j]; broadcasts a vector over all rows.
template <class T>
Var<T> rowwise_mul(const Var<T>& mat, const Var<T>& vec) {
  const int m = mat->value.dim(0), n = mat->value.dim(1);
  if (vec->value.size() != n) throw std::invalid_argument("rowwise_mul: width mismatch");
  auto out = make_var(mat->value);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->value.at(i, j) *= vec->value.at(j);
  if (detail::any_requires<T>({&mat, &vec})) {
    out->requires_grad = true;
    out->parents = {mat, vec};
    Node<T>* self = out.get();
    Node<T>* pm = mat.get();
    Node<T>* pv = vec.get();
    out->backward_fn = [self, pm, pv, m, n]() {
      if (pm->requires_grad) {
        pm->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) pm->grad.at(i, j) += self->grad.at(i, j) * pv->value.at(j);
      }
      if (pv->requires_grad) {
        pv->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) pv->grad.at(j) += self->grad.at(i, j) * pm->value.at(i, j);
      }
    };
  }
  return out;
}

template <class T, class FwdF, class GradF>
Var<T> unary_elementwise(const Var<T>& a, FwdF f, GradF dfdx_from_in_out) {
  auto out = make_var(a->value);
  for (auto& v : out->value.data) v = f(v);
  if (a->requires_grad) {
    out->requires_grad = true;
    out->parents = {a};
    Node<T>* self = out.get();
    Node<T>* pa = a.get();
    out->backward_fn = [self, pa, dfdx_from_in_out]() {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self->grad.size(); ++i)
        pa->grad.data[i] +=
            self->grad.data[i] * dfdx_from_in_out(pa->value.data[i], self->value.data[i]);
    };
  }
  return out;
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return unary_elementwise(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> gelu(const Var<T>& a) {
  return unary_elementwise(
      a, [](T x) { return kern::gelu_scalar(x); },
      [](T x, T) { return kern::gelu_grad_scalar(x); });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return unary_elementwise(
      a, [](T x) { return kern::sigmoid_scalar(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  if (Tensor<T>::numel(shape) != a->value.size())
    throw std::invalid_argument("reshape: element count mismatch");
  auto out = make_var(Tensor<T>(std::move(shape), a->value.data));
  if (a->requires_grad) {
    out->requires_grad = true;
    out->parents = {a};
    Node<T>* self = out.get();
    Node<T>* pa = a.get();
    out->backward_fn = [self, pa]() {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self->grad.size(); ++i) pa->grad.data[i] += self->grad.data[i];
    };
  }
  return out;
}

// ---- matrix ops ----

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const int m = a->value.dim(0), k = a->value.dim(1);
  if (b->value.dim(0) != k) throw std::invalid_argument("matmul: inner dim mismatch");
  const int n = b->value.dim(1);
  auto out = make_var(Tensor<T>({m, n}));
  kern::matmul_acc(a->value.ptr(), m, k, b->value.ptr(), n, out->value.ptr());
  if (detail::any_requires<T>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    Node<T>* self = out.get();
    Node<T>* pa = a.get();
    Node<T>* pb = b.get();
    out->backward_fn = [self, pa, pb, m, k, n]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        kern::matmul_nt_acc(self->grad.ptr(), m, n, pb->value.ptr(), k, pa->grad.ptr());
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        kern::matmul_tn_acc(pa->value.ptr(), m, k, self->grad.ptr(), n, pb->grad.ptr());
      }
    };
  }
  return out;
}

// x[m,k] * W[k,n] + b[n]; b may be null.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const int m = x->value.dim(0), k = x->value.dim(1), n = w->value.dim(1);
  if (w->value.dim(0) != k) throw std::invalid_argument("linear: weight dim mismatch");
  auto out = make_var(Tensor<T>({m, n}));
  kern::matmul_acc(x->value.ptr(), m, k, w->value.ptr(), n, out->value.ptr());
  if (b) kern::add_bias_rows(out->value.ptr(), m, n, b->value.ptr());
  if (detail::any_requires<T>({&x, &w, &b})) {
    out->requires_grad = true;
    out->parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    Node<T>* pw = w.get();
    Node<T>* pb = b ? b.get() : nullptr;
    out->backward_fn = [self, px, pw, pb, m, k, n]() {
      if (px->requires_grad) {
        px->ensure_grad();
        kern::matmul_nt_acc(self->grad.ptr(), m, n, pw->value.ptr(), k, px->grad.ptr());
      }
      if (pw->requires_grad) {
        pw->ensure_grad();
        kern::matmul_tn_acc(px->value.ptr(), m, k, self->grad.ptr(), n, pw->grad.ptr());
      }
      if (pb && pb->requires_grad) {
        pb->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) pb->grad.at(j) += self->grad.at(i, j);
      }
    };
  }
  return out;
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  if (!gamma || !beta) throw std::invalid_argument("layer_norm: gamma/beta required");
  const int m = x->value.dim(0), n = x->value.dim(1);
  auto out = make_var(Tensor<T>({m, n}));
  Tensor<T> mean({m}), inv({m});
  for (int i = 0; i < m; ++i) {
    const T* row = x->value.ptr() + static_cast<std::int64_t>(i) * n;
    kern::layer_norm_row(row, n, gamma ? gamma->value.ptr() : nullptr,
                         beta ? beta->value.ptr() : nullptr, eps,
                         out->value.ptr() + static_cast<std::int64_t>(i) * n);
    T mu = 0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (int j = 0; j < n; ++j) {
      T d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    mean.at(i) = mu;
    inv.at(i) = T(1) / std::sqrt(var + eps);
  }
  if (detail::any_requires<T>({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->parents = {x, gamma, beta};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    Node<T>* pg = gamma.get();
    Node<T>* pbt = beta.get();
    out->backward_fn = [self, px, pg, pbt, mean, inv, m, n]() {
      std::vector<T> xhat(n), dyg(n);
      for (int i = 0; i < m; ++i) {
        const T* row = px->value.ptr() + static_cast<std::int64_t>(i) * n;
        const T* dy = self->grad.ptr() + static_cast<std::int64_t>(i) * n;
        const T mu = mean.at(i), iv = inv.at(i);
        T s1 = 0, s2 = 0;
        for (int j = 0; j < n; ++j) {
          xhat[j] = (row[j] - mu) * iv;
          dyg[j] = dy[j] * pg->value.at(j);
          s1 += dyg[j];
          s2 += dyg[j] * xhat[j];
        }
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (int j = 0; j < n; ++j) pg->grad.at(j) += dy[j] * xhat[j];
        }
        if (pbt->requires_grad) {
          pbt->ensure_grad();
          for (int j = 0; j < n; ++j) pbt->grad.at(j) += dy[j];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          T* dx = px->grad.ptr() + static_cast<std::int64_t>(i) * n;
          const T invn = T(1) / static_cast<T>(n);
          for (int j = 0; j < n; ++j) dx[j] += iv * (dyg[j] - s1 * invn - xhat[j] * s2 * invn);
        }
      }
    };
  }
  return out;
}

// ---- row selection / assembly ----

template <class T>
Var<T> slice_rows(const Var<T>& x, int r0, int r1) {
  const int n = x->value.dim(1);
  if (r0 < 0 || r1 > x->value.dim(0) || r0 > r1) throw std::out_of_range("slice_rows");
  Tensor<T> v({r1 - r0, n});
  std::copy(x->value.ptr() + static_cast<std::int64_t>(r0) * n,
            x->value.ptr() + static_cast<std::int64_t>(r1) * n, v.ptr());
  auto out = make_var(std::move(v));
  if (x->requires_grad) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    out->backward_fn = [self, px, r0, n]() {
      px->ensure_grad();
      const std::int64_t cnt = self->grad.size();
      T* dst = px->grad.ptr() + static_cast<std::int64_t>(r0) * n;
      for (std::int64_t i = 0; i < cnt; ++i) dst[i] += self->grad.data[i];
    };
  }
  return out;
}

template <class T>
Var<T> gather_rows(const Var<T>& x, std::vector<int> idx) {
  const int n = x->value.dim(1);
  Tensor<T> v({static_cast<int>(idx.size()), n});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x->value.dim(0)) throw std::out_of_range("gather_rows");
    std::copy(x->value.ptr() + static_cast<std::int64_t>(idx[i]) * n,
              x->value.ptr() + static_cast<std::int64_t>(idx[i] + 1) * n,
              v.ptr() + static_cast<std::int64_t>(i) * n);
  }
  auto out = make_var(std::move(v));
  if (x->requires_grad) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    out->backward_fn = [self, px, idx, n]() {
      px->ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i) {
        const T* src = self->grad.ptr() + static_cast<std::int64_t>(i) * n;
        T* dst = px->grad.ptr() + static_cast<std::int64_t>(idx[i]) * n;
        for (int j = 0; j < n; ++j) dst[j] += src[j];
      }
    };
  }
  return out;
}

// Copy of x with rows[idx[i]] replaced by rows.row(i). Replaced rows pass no
// gradient back to x (they were overwritten, not mixed).
template <class T>
Var<T> overwrite_rows(const Var<T>& x, std::vector<int> idx, const Var<T>& rows) {
  const int n = x->value.dim(1);
  if (rows->value.dim(1) != n || rows->value.dim(0) != static_cast<int>(idx.size()))
    throw std::invalid_argument("overwrite_rows: shape mismatch");
  auto out = make_var(x->value);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x->value.dim(0)) throw std::out_of_range("overwrite_rows");
    std::copy(rows->value.ptr() + static_cast<std::int64_t>(i) * n,
              rows->value.ptr() + static_cast<std::int64_t>(i + 1) * n,
              out->value.ptr() + static_cast<std::int64_t>(idx[i]) * n);
  }
  if (detail::any_requires<T>({&x, &rows})) {
    out->requires_grad = true;
    out->parents = {x, rows};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    Node<T>* pr = rows.get();
    out->backward_fn = [self, px, pr, idx, n]() {
      if (px->requires_grad) {
        px->ensure_grad();
        std::vector<char> overwritten(static_cast<size_t>(px->value.dim(0)), 0);
        for (int r : idx) overwritten[static_cast<size_t>(r)] = 1;
        for (int i = 0; i < px->value.dim(0); ++i) {
          if (overwritten[static_cast<size_t>(i)]) continue;
          const T* src = self->grad.ptr() + static_cast<std::int64_t>(i) * n;
          T* dst = px->grad.ptr() + static_cast<std::int64_t>(i) * n;
          for (int j = 0; j < n; ++j) dst[j] += src[j];
        }
      }
      if (pr->requires_grad) {
        pr->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i) {
          const T* src = self->grad.ptr() + static_cast<std::int64_t>(idx[i]) * n;
          T* dst = pr->grad.ptr() + static_cast<std::int64_t>(i) * n;
          for (int j = 0; j < n; ++j) dst[j] += src[j];
        }
      }
    };
  }
  return out;
}

template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  const int m = a->value.dim(0), na = a->value.dim(1), nb = b->value.dim(1);
  if (b->value.dim(0) != m) throw std::invalid_argument("concat_cols: row mismatch");
  Tensor<T> v({m, na + nb});
  for (int i = 0; i < m; ++i) {
    std::copy(a->value.ptr() + static_cast<std::int64_t>(i) * na,
              a->value.ptr() + static_cast<std::int64_t>(i + 1) * na,
              v.ptr() + static_cast<std::int64_t>(i) * (na + nb));
    std::copy(b->value.ptr() + static_cast<std::int64_t>(i) * nb,
              b->value.ptr() + static_cast<std::int64_t>(i + 1) * nb,
              v.ptr() + static_cast<std::int64_t>(i) * (na + nb) + na);
  }
  auto out = make_var(std::move(v));
  if (detail::any_requires<T>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    Node<T>* self = out.get();
    Node<T>* pa = a.get();
    Node<T>* pb = b.get();
    out->backward_fn = [self, pa, pb, m, na, nb]() {
      for (int i = 0; i < m; ++i) {
        const T* g = self->grad.ptr() + static_cast<std::int64_t>(i) * (na + nb);
        if (pa->requires_grad) {
          pa->ensure_grad();
          T* da = pa->grad.ptr() + static_cast<std::int64_t>(i) * na;
          for (int j = 0; j < na; ++j) da[j] += g[j];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          T* db = pb->grad.ptr() + static_cast<std::int64_t>(i) * nb;
          for (int j = 0; j < nb; ++j) db[j] += g[na + j];
        }
      }
    };
  }
  return out;
}

// ---- attention ----

// Rotary position embedding over projected q/k rows; row i rotates by
// position start_pos + i.
template <class T>
Var<T> rope(const Var<T>& x, int n_heads, int start_pos = 0) {
  const int m = x->value.dim(0), d = x->value.dim(1);
  if (d % (2 * n_heads) != 0) throw std::invalid_argument("rope: head dim must be even");
  const int dh = d / n_heads;
  auto out = make_var(Tensor<T>({m, d}));
  for (int i = 0; i < m; ++i)
    kern::rope_row(x->value.ptr() + static_cast<std::int64_t>(i) * d, start_pos + i, n_heads, dh,
                   out->value.ptr() + static_cast<std::int64_t>(i) * d);
  if (x->requires_grad) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    out->backward_fn = [self, px, n_heads, dh, m, d, start_pos]() {
      px->ensure_grad();
      std::vector<T> tmp(static_cast<size_t>(d));
      for (int i = 0; i < m; ++i) {
        kern::rope_row_inverse(self->grad.ptr() + static_cast<std::int64_t>(i) * d, start_pos + i,
                               n_heads, dh, tmp.data());
        T* dst = px->grad.ptr() + static_cast<std::int64_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] += tmp[j];
      }
    };
  }
  return out;
}

// Causal multi-head self-attention over already-projected q,k,v of shape
// [L, D]. Softmax weights are stashed densely for the backward pass.
template <class T>
Var<T> causal_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int n_heads) {
  const int L = q->value.dim(0), D = q->value.dim(1);
  if (D % n_heads != 0) throw std::invalid_argument("causal_attention: D % heads != 0");
  const int dh = D / n_heads;
  auto out = make_var(Tensor<T>({L, D}));
  auto probs = std::make_shared<Tensor<T>>(std::vector<int>{n_heads, L, L});
  std::vector<T> scratch(static_cast<size_t>(L));
  const std::int64_t stride = static_cast<std::int64_t>(L) * L;
  for (int i = 0; i < L; ++i) {
    kern::attn_row(q->value.ptr() + static_cast<std::int64_t>(i) * D, k->value.ptr(),
                   v->value.ptr(), i + 1, n_heads, dh,
                   out->value.ptr() + static_cast<std::int64_t>(i) * D,
                   probs->ptr() + static_cast<std::int64_t>(i) * L, stride, scratch.data());
  }
  if (detail::any_requires<T>({&q, &k, &v})) {
    out->requires_grad = true;
    out->parents = {q, k, v};
    Node<T>* self = out.get();
    Node<T>* pq = q.get();
    Node<T>* pk = k.get();
    Node<T>* pv = v.get();
    out->backward_fn = [self, pq, pk, pv, probs, n_heads, dh, L, D]() {
      pq->ensure_grad();
      pk->ensure_grad();
      pv->ensure_grad();
      const T scale = T(1) / std::sqrt(static_cast<T>(dh));
      std::vector<T> dp(static_cast<size_t>(L)), ds(static_cast<size_t>(L));
      for (int h = 0; h < n_heads; ++h) {
        const int off = h * dh;
        const T* P = probs->ptr() + static_cast<std::int64_t>(h) * L * L;
        for (int i = 0; i < L; ++i) {
          const T* dout = self->grad.ptr() + static_cast<std::int64_t>(i) * D + off;
          const T* p = P + static_cast<std::int64_t>(i) * L;
          T s = 0;
          for (int t = 0; t <= i; ++t) {
            dp[t] = kern::dot(dout, pv->value.ptr() + static_cast<std::int64_t>(t) * D + off, dh);
            s += p[t] * dp[t];
          }
          for (int t = 0; t <= i; ++t) ds[t] = p[t] * (dp[t] - s);
          T* dq = pq->grad.ptr() + static_cast<std::int64_t>(i) * D + off;
          const T* qi = pq->value.ptr() + static_cast<std::int64_t>(i) * D + off;
          for (int t = 0; t <= i; ++t) {
            kern::axpy(ds[t] * scale, pk->value.ptr() + static_cast<std::int64_t>(t) * D + off, dq,
                       dh);
            kern::axpy(ds[t] * scale, qi, pk->grad.ptr() + static_cast<std::int64_t>(t) * D + off,
                       dh);
            kern::axpy(p[t], dout, pv->grad.ptr() + static_cast<std::int64_t>(t) * D + off, dh);
          }
        }
      }
    };
  }
  return out;
}

// ---- convolutions (single image, CHW) ----

// x [Ci,H,W], w [Co,Ci,kh,kw], b [Co] or null.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const int ci = x->value.dim(0), hh = x->value.dim(1), ww = x->value.dim(2);
  const int co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(1) != ci) throw std::invalid_argument("conv2d: channel mismatch");
  const int ho = (hh + 2 * pad - kh) / stride + 1;
  const int wo = (ww + 2 * pad - kw) / stride + 1;
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: empty output");
  auto out = make_var(Tensor<T>({co, ho, wo}));
  const T* X = x->value.ptr();
  const T* W = w->value.ptr();
  T* O = out->value.ptr();
  auto xat = [&](int c, int y, int z) { return X[(static_cast<std::int64_t>(c) * hh + y) * ww + z]; };
  auto wat = [&](int oc, int ic, int ky, int kx) {
    return W[((static_cast<std::int64_t>(oc) * ci + ic) * kh + ky) * kw + kx];
  };
  for (int oc = 0; oc < co; ++oc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T acc = b ? b->value.at(oc) : T(0);
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= hh) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= ww) continue;
              acc += xat(ic, iy, ix) * wat(oc, ic, ky, kx);
            }
          }
        O[(static_cast<std::int64_t>(oc) * ho + oy) * wo + ox] = acc;
      }
  if (detail::any_requires<T>({&x, &w, &b})) {
    out->requires_grad = true;
    out->parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    Node<T>* pw = w.get();
    Node<T>* pb = b ? b.get() : nullptr;
    out->backward_fn = [self, px, pw, pb, ci, hh, ww, co, kh, kw, ho, wo, stride, pad]() {
      const T* G = self->grad.ptr();
      const T* X = px->value.ptr();
      const T* W = pw->value.ptr();
      if (px->requires_grad) px->ensure_grad();
      if (pw->requires_grad) pw->ensure_grad();
      if (pb && pb->requires_grad) pb->ensure_grad();
      for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const T g = G[(static_cast<std::int64_t>(oc) * ho + oy) * wo + ox];
            if (pb && pb->requires_grad) pb->grad.at(oc) += g;
            for (int ic = 0; ic < ci; ++ic)
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= hh) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= ww) continue;
                  const std::int64_t xi = (static_cast<std::int64_t>(ic) * hh + iy) * ww + ix;
                  const std::int64_t wi =
                      ((static_cast<std::int64_t>(oc) * ci + ic) * kh + ky) * kw + kx;
                  if (px->requires_grad) px->grad.data[xi] += g * W[wi];
                  if (pw->requires_grad) pw->grad.data[wi] += g * X[xi];
                }
              }
          }
    };
  }
  return out;
}

// Transposed convolution. x [Ci,H,W], w [Ci,Co,kh,kw], b [Co] or null;
// output [Co, (H-1)*stride - 2*pad + kh, (W-1)*stride - 2*pad + kw].
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const int ci = x->value.dim(0), hh = x->value.dim(1), ww = x->value.dim(2);
  const int co = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(0) != ci) throw std::invalid_argument("conv_transpose2d: channel mismatch");
  const int ho = (hh - 1) * stride - 2 * pad + kh;
  const int wo = (ww - 1) * stride - 2 * pad + kw;
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv_transpose2d: empty output");
  auto out = make_var(Tensor<T>({co, ho, wo}));
  if (b)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
          out->value.at(oc, oy, ox) = b->value.at(oc);
  for (int ic = 0; ic < ci; ++ic)
    for (int iy = 0; iy < hh; ++iy)
      for (int ix = 0; ix < ww; ++ix) {
        const T xv = x->value.at(ic, iy, ix);
        for (int oc = 0; oc < co; ++oc)
          for (int ky = 0; ky < kh; ++ky) {
            const int oy = iy * stride - pad + ky;
            if (oy < 0 || oy >= ho) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ox = ix * stride - pad + kx;
              if (ox < 0 || ox >= wo) continue;
              out->value.at(oc, oy, ox) +=
                  xv * w->value.data[((static_cast<std::int64_t>(ic) * co + oc) * kh + ky) * kw + kx];
            }
          }
      }
  if (detail::any_requires<T>({&x, &w, &b})) {
    out->requires_grad = true;
    out->parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    Node<T>* pw = w.get();
    Node<T>* pb = b ? b.get() : nullptr;
    out->backward_fn = [self, px, pw, pb, ci, hh, ww, co, kh, kw, ho, wo, stride, pad]() {
      if (px->requires_grad) px->ensure_grad();
      if (pw->requires_grad) pw->ensure_grad();
      if (pb && pb->requires_grad) {
        pb->ensure_grad();
        for (int oc = 0; oc < co; ++oc)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) pb->grad.at(oc) += self->grad.at(oc, oy, ox);
      }
      for (int ic = 0; ic < ci; ++ic)
        for (int iy = 0; iy < hh; ++iy)
          for (int ix = 0; ix < ww; ++ix) {
            const T xv = px->value.at(ic, iy, ix);
            T dx = 0;
            for (int oc = 0; oc < co; ++oc)
              for (int ky = 0; ky < kh; ++ky) {
                const int oy = iy * stride - pad + ky;
                if (oy < 0 || oy >= ho) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ox = ix * stride - pad + kx;
                  if (ox < 0 || ox >= wo) continue;
                  const std::int64_t wi =
                      ((static_cast<std::int64_t>(ic) * co + oc) * kh + ky) * kw + kx;
                  const T g = self->grad.at(oc, oy, ox);
                  dx += g * pw->value.data[wi];
                  if (pw->requires_grad) pw->grad.data[wi] += g * xv;
                }
              }
            if (px->requires_grad) px->grad.at(ic, iy, ix) += dx;
          }
    };
  }
  return out;
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const int c = x->value.dim(0), hh = x->value.dim(1), ww = x->value.dim(2);
  const T inv = T(1) / static_cast<T>(hh * ww);
  Tensor<T> v({1, c});
  for (int ic = 0; ic < c; ++ic) {
    T acc = 0;
    for (int y = 0; y < hh; ++y)
      for (int z = 0; z < ww; ++z) acc += x->value.at(ic, y, z);
    v.at(0, ic) = acc * inv;
  }
  auto out = make_var(std::move(v));
  if (x->requires_grad) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    out->backward_fn = [self, px, c, hh, ww, inv]() {
      px->ensure_grad();
      for (int ic = 0; ic < c; ++ic) {
        const T g = self->grad.at(0, ic) * inv;
        for (int y = 0; y < hh; ++y)
          for (int z = 0; z < ww; ++z) px->grad.at(ic, y, z) += g;
      }
    };
  }
  return out;
}

// [V, D] token matrix -> [D, G, G] grid (V = G*G, token v at (v/G, v%G)).
template <class T>
Var<T> tokens_to_grid(const Var<T>& x, int grid) {
  const int v = x->value.dim(0), d = x->value.dim(1);
  if (grid * grid != v) throw std::invalid_argument("tokens_to_grid: V not a square grid");
  Tensor<T> t({d, grid, grid});
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < d; ++j) t.at(j, i / grid, i % grid) = x->value.at(i, j);
  auto out = make_var(std::move(t));
  if (x->requires_grad) {
    out->requires_grad = true;
    out->parents = {x};
    Node<T>* self = out.get();
    Node<T>* px = x.get();
    out->backward_fn = [self, px, v, d, grid]() {
      px->ensure_grad();
      for (int i = 0; i < v; ++i)
        for (int j = 0; j < d; ++j) px->grad.at(i, j) += self->grad.at(j, i / grid, i % grid);
    };
  }
  return out;
}

// ---- losses and scalar plumbing ----

// Sum over rows of weight[i] * cross_entropy(logits[i], target[i]).
// Weight-zero rows contribute neither value nor gradient.
template <class T>
Var<T> masked_ce_sum(const Var<T>& logits, const std::vector<int>& targets,
                     const std::vector<T>& weights) {
  const int m = logits->value.dim(0), k = logits->value.dim(1);
  if (static_cast<int>(targets.size()) != m || static_cast<int>(weights.size()) != m)
    throw std::invalid_argument("masked_ce_sum: length mismatch");
  auto lse = std::make_shared<std::vector<T>>(static_cast<size_t>(m));
  T total = 0;
  for (int i = 0; i < m; ++i) {
    const T* row = logits->value.ptr() + static_cast<std::int64_t>(i) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j)
      if (row[j] > mx) mx = row[j];
    T s = 0;
    for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const T l = mx + std::log(s);
    (*lse)[static_cast<size_t>(i)] = l;
    if (weights[static_cast<size_t>(i)] != T(0)) {
      if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= k)
        throw std::out_of_range("masked_ce_sum: target id out of vocab");
      total += weights[static_cast<size_t>(i)] * (l - row[targets[static_cast<size_t>(i)]]);
    }
  }
  auto out = make_var(Tensor<T>::scalar(total));
  if (logits->requires_grad) {
    out->requires_grad = true;
    out->parents = {logits};
    Node<T>* self = out.get();
    Node<T>* pl = logits.get();
    out->backward_fn = [self, pl, targets, weights, lse, m, k]() {
      pl->ensure_grad();
      const T g = self->grad.at(0);
      for (int i = 0; i < m; ++i) {
        const T w = weights[static_cast<size_t>(i)];
        if (w == T(0)) continue;
        const T* row = pl->value.ptr() + static_cast<std::int64_t>(i) * k;
        T* dr = pl->grad.ptr() + static_cast<std::int64_t>(i) * k;
        const T l = (*lse)[static_cast<size_t>(i)];
        for (int j = 0; j < k; ++j) dr[j] += g * w * std::exp(row[j] - l);
        dr[targets[static_cast<size_t>(i)]] -= g * w;
      }
    };
  }
  return out;
}

// Sum of numerically stable binary cross-entropies between logits and labels.
template <class T>
Var<T> bce_logits_sum(const Var<T>& logits, const Tensor<T>& labels) {
  if (logits->value.size() != labels.size())
    throw std::invalid_argument("bce_logits_sum: length mismatch");
  T total = 0;
  for (std::int64_t i = 0; i < labels.size(); ++i) {
    const T x = logits->value.data[i], y = labels.data[i];
    total += std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  auto out = make_var(Tensor<T>::scalar(total));
  if (logits->requires_grad) {
    out->requires_grad = true;
    out->parents = {logits};
    Node<T>* self = out.get();
    Node<T>* pl = logits.get();
    out->backward_fn = [self, pl, labels]() {
      pl->ensure_grad();
      const T g = self->grad.at(0);
      for (std::int64_t i = 0; i < labels.size(); ++i)
        pl->grad.data[i] += g * (kern::sigmoid_scalar(pl->value.data[i]) - labels.data[i]);
    };
  }
  return out;
}

// Sum of squared differences against a constant target.
template <class T>
Var<T> mse_sum(const Var<T>& pred, const Tensor<T>& target) {
  if (pred->value.size() != target.size()) throw std::invalid_argument("mse_sum: shape mismatch");
  T total = 0;
  for (std::int64_t i = 0; i < target.size(); ++i) {
    const T d = pred->value.data[i] - target.data[i];
    total += d * d;
  }
  auto out = make_var(Tensor<T>::scalar(total));
  if (pred->requires_grad) {
    out->requires_grad = true;
    out->parents = {pred};
    Node<T>* self = out.get();
    Node<T>* pp = pred.get();
    out->backward_fn = [self, pp, target]() {
      pp->ensure_grad();
      const T g = self->grad.at(0);
      for (std::int64_t i = 0; i < target.size(); ++i)
        pp->grad.data[i] += g * T(2) * (pp->value.data[i] - target.data[i]);
    };
  }
  return out;
}

// Weighted sum of scalar vars: sum_i coeffs[i] * terms[i].
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& coeffs) {
  if (terms.size() != coeffs.size()) throw std::invalid_argument("weighted_sum: length mismatch");
  T total = 0;
  bool req = false;
  for (size_t i = 0; i < terms.size(); ++i) {
    total += coeffs[i] * terms[i]->value.item();
    req = req || terms[i]->requires_grad;
  }
  auto out = make_var(Tensor<T>::scalar(total));
  if (req) {
    out->requires_grad = true;
    out->parents = terms;
    Node<T>* self = out.get();
    std::vector<Node<T>*> ps;
    for (auto& t : terms) ps.push_back(t.get());
    out->backward_fn = [self, ps, coeffs]() {
      for (size_t i = 0; i < ps.size(); ++i) {
        if (!ps[i]->requires_grad) continue;
        ps[i]->ensure_grad();
        ps[i]->grad.at(0) += coeffs[i] * self->grad.at(0);
      }
    };
  }
  return out;
}

template <class T>
Var<T> constant_scalar(T v) {
  return make_var(Tensor<T>::scalar(v));
}

}  // namespace omnigf
