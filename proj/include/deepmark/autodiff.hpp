#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "deepmark/kernels.hpp"
#include "deepmark/tensor.hpp"

namespace deepmark {

/// Reverse-mode tape. Operations append nodes in execution order, which is a
/// topological order by construction; backward walks the nodes once in
/// reverse. A tape belongs to one logical thread.
template <typename T>
class TapeT {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  void reset() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  const TensorT<T>& value(Var v) const { return node(v.id).value; }
  const std::vector<T>& adjoint(Var v) const { return node(v.id).adj; }

  Var constant(TensorT<T> v) { return push(std::move(v), nullptr, false, {}); }

  /// Leaf bound to an external parameter tensor; backward accumulates into
  /// the tensor's grad (subject to the target filter).
  Var param(TensorT<T>* p) {
    if (!p) throw std::invalid_argument("param: null tensor");
    return push(*p, p, true, {});
  }

  Var conv2d(Var x, Var w, Var b) {
    const auto& xv = value(x);
    const auto& wv = value(w);
    const auto& bv = value(b);
    if (xv.shape.size() != 3 || wv.shape.size() != 4 || bv.shape.size() != 1)
      throw std::invalid_argument("conv2d: expected input HxWxC, filters kxkxCxF, bias F; got " +
                                  shape_str(xv.shape) + ", " + shape_str(wv.shape) + ", " +
                                  shape_str(bv.shape));
    const int H = xv.shape[0], W = xv.shape[1], C = xv.shape[2];
    const int k = wv.shape[0], F = wv.shape[3];
    if (wv.shape[1] != k || k % 2 == 0)
      throw std::invalid_argument("conv2d: kernel must be square with odd size, got " +
                                  shape_str(wv.shape));
    if (wv.shape[2] != C)
      throw std::invalid_argument("conv2d: input channels mismatch: input " + shape_str(xv.shape) +
                                  " vs filters " + shape_str(wv.shape));
    if (bv.shape[0] != F)
      throw std::invalid_argument("conv2d: bias " + shape_str(bv.shape) + " vs filters " +
                                  shape_str(wv.shape));
    TensorT<T> out({H, W, F});
    kernels::conv2d_forward(xv.data.data(), H, W, C, wv.data.data(), k, F, bv.data.data(),
                            out.data.data());
    return push(std::move(out), nullptr, needs(x) || needs(w) || needs(b),
                [x, w, b, H, W, C, k, F](TapeT& t, int self) {
                  const auto& go = t.node(self).adj;
                  if (t.needs(x))
                    kernels::conv2d_backward_input(go.data(), H, W, C, t.value(w).data.data(), k,
                                                   F, t.adj_buf(x).data());
                  if (t.needs(w) || t.needs(b))
                    kernels::conv2d_backward_params(t.value(x).data.data(), go.data(), H, W, C, k,
                                                    F, t.adj_buf(w).data(), t.adj_buf(b).data());
                });
  }

  Var dense_channels(Var x, Var w, Var b) {
    const auto& xv = value(x);
    const auto& wv = value(w);
    const auto& bv = value(b);
    if (xv.shape.size() != 3 || wv.shape.size() != 2 || bv.shape.size() != 1)
      throw std::invalid_argument("dense_channels: expected input HxWxC, weights CxN, bias N; got " +
                                  shape_str(xv.shape) + ", " + shape_str(wv.shape) + ", " +
                                  shape_str(bv.shape));
    const int H = xv.shape[0], W = xv.shape[1], C = xv.shape[2];
    const int N = wv.shape[1];
    if (wv.shape[0] != C)
      throw std::invalid_argument("dense_channels: channel mismatch: input " + shape_str(xv.shape) +
                                  " vs weights " + shape_str(wv.shape));
    if (bv.shape[0] != N)
      throw std::invalid_argument("dense_channels: bias " + shape_str(bv.shape) + " vs weights " +
                                  shape_str(wv.shape));
    TensorT<T> out({H, W, N});
    const std::size_t pixels = static_cast<std::size_t>(H) * W;
    kernels::dense_channels_forward(xv.data.data(), pixels, C, wv.data.data(), N, bv.data.data(),
                                    out.data.data());
    return push(std::move(out), nullptr, needs(x) || needs(w) || needs(b),
                [x, w, b, pixels, C, N](TapeT& t, int self) {
                  const auto& go = t.node(self).adj;
                  kernels::dense_channels_backward(t.value(x).data.data(), go.data(), pixels, C,
                                                   t.value(w).data.data(), N, t.adj_buf(x).data(),
                                                   t.adj_buf(w).data(), t.adj_buf(b).data());
                });
  }

  Var relu(Var x) {
    TensorT<T> out = value(x);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return push(std::move(out), nullptr, needs(x), [x](TapeT& t, int self) {
      const auto& go = t.node(self).adj;
      const auto& xv = t.value(x).data;
      auto& gx = t.adj_buf(x);
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xv[i] > T(0)) gx[i] += go[i];
    });
  }

  Var tanh_(Var x) {
    TensorT<T> out = value(x);
    for (auto& v : out.data) v = std::tanh(v);
    return push(std::move(out), nullptr, needs(x), [x](TapeT& t, int self) {
      const auto& go = t.node(self).adj;
      const auto& h = t.node(self).value.data;
      auto& gx = t.adj_buf(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * (T(1) - h[i] * h[i]);
    });
  }

  Var sigmoid_(Var x) {
    TensorT<T> out = value(x);
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return push(std::move(out), nullptr, needs(x), [x](TapeT& t, int self) {
      const auto& go = t.node(self).adj;
      const auto& s = t.node(self).value.data;
      auto& gx = t.adj_buf(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * s[i] * (T(1) - s[i]);
    });
  }

  Var concat_channels(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape.size() != 3 || bv.shape.size() != 3 || av.shape[0] != bv.shape[0] ||
        av.shape[1] != bv.shape[1])
      throw std::invalid_argument("concat_channels: spatial mismatch: " + shape_str(av.shape) +
                                  " vs " + shape_str(bv.shape));
    const int H = av.shape[0], W = av.shape[1], C1 = av.shape[2], C2 = bv.shape[2];
    TensorT<T> out({H, W, C1 + C2});
    const std::size_t pixels = static_cast<std::size_t>(H) * W;
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* pa = av.data.data() + p * C1;
      const T* pb = bv.data.data() + p * C2;
      T* po = out.data.data() + p * (C1 + C2);
      for (int c = 0; c < C1; ++c) po[c] = pa[c];
      for (int c = 0; c < C2; ++c) po[C1 + c] = pb[c];
    }
    return push(std::move(out), nullptr, needs(a) || needs(b),
                [a, b, pixels, C1, C2](TapeT& t, int self) {
                  const auto& go = t.node(self).adj;
                  if (t.needs(a)) {
                    auto& ga = t.adj_buf(a);
                    for (std::size_t p = 0; p < pixels; ++p)
                      for (int c = 0; c < C1; ++c) ga[p * C1 + c] += go[p * (C1 + C2) + c];
                  }
                  if (t.needs(b)) {
                    auto& gb = t.adj_buf(b);
                    for (std::size_t p = 0; p < pixels; ++p)
                      for (int c = 0; c < C2; ++c) gb[p * C2 + c] += go[p * (C1 + C2) + C1 + c];
                  }
                });
  }

  // Pixel (i*r+di, j*r+dj, c) of the output takes input channel c*r*r+di*r+dj
  // of pixel (i, j); space_to_depth is the exact inverse.
  Var depth_to_space(Var x, int r) {
    const auto& xv = value(x);
    if (xv.shape.size() != 3) throw std::invalid_argument("depth_to_space: expected rank-3 input");
    const int h = xv.shape[0], w = xv.shape[1], cr2 = xv.shape[2];
    if (r < 1 || cr2 % (r * r) != 0)
      throw std::invalid_argument("depth_to_space: channels " + std::to_string(cr2) +
                                  " not divisible by r^2 with r=" + std::to_string(r));
    const int C = cr2 / (r * r);
    TensorT<T> out({h * r, w * r, C});
    forward_d2s(xv.data.data(), h, w, C, r, out.data.data());
    return push(std::move(out), nullptr, needs(x), [x, h, w, C, r](TapeT& t, int self) {
      if (!t.needs(x)) return;
      // adjoint of a permutation is the inverse permutation
      backward_d2s(t.node(self).adj.data(), h, w, C, r, t.adj_buf(x).data());
    });
  }

  Var space_to_depth(Var x, int r) {
    const auto& xv = value(x);
    if (xv.shape.size() != 3) throw std::invalid_argument("space_to_depth: expected rank-3 input");
    const int H = xv.shape[0], W = xv.shape[1], C = xv.shape[2];
    if (r < 1 || H % r != 0 || W % r != 0)
      throw std::invalid_argument("space_to_depth: spatial size " + shape_str(xv.shape) +
                                  " not divisible by r=" + std::to_string(r));
    const int h = H / r, w = W / r;
    TensorT<T> out({h, w, C * r * r});
    backward_d2s(xv.data.data(), h, w, C, r, out.data.data());  // inverse rearrangement
    return push(std::move(out), nullptr, needs(x), [x, h, w, C, r](TapeT& t, int self) {
      if (!t.needs(x)) return;
      forward_d2s(t.node(self).adj.data(), h, w, C, r, t.adj_buf(x).data());
    });
  }

  /// Gram matrix of a feature map: G[a][b] = sum_p f_a(p) f_b(p) / (H*W*C).
  Var gram(Var x) {
    const auto& xv = value(x);
    if (xv.shape.size() != 3) throw std::invalid_argument("gram: expected rank-3 feature map");
    const int H = xv.shape[0], W = xv.shape[1], C = xv.shape[2];
    const std::size_t pixels = static_cast<std::size_t>(H) * W;
    const T scale = T(1) / (static_cast<T>(pixels) * static_cast<T>(C));
    TensorT<T> out({C, C});
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* f = xv.data.data() + p * C;
      for (int a = 0; a < C; ++a) {
        const T fa = f[a];
        T* row = out.data.data() + static_cast<std::size_t>(a) * C;
        for (int b = 0; b < C; ++b) row[b] += fa * f[b];
      }
    }
    for (auto& v : out.data) v *= scale;
    return push(std::move(out), nullptr, needs(x), [x, pixels, C, scale](TapeT& t, int self) {
      if (!t.needs(x)) return;
      const auto& go = t.node(self).adj;
      const auto& f = t.value(x).data;
      auto& gx = t.adj_buf(x);
      // dL/df_a(p) = sum_b (dG[a][b] + dG[b][a]) f_b(p) * scale
      std::vector<T> m(static_cast<std::size_t>(C) * C);
      for (int a = 0; a < C; ++a)
        for (int b = 0; b < C; ++b)
          m[static_cast<std::size_t>(a) * C + b] =
              (go[static_cast<std::size_t>(a) * C + b] + go[static_cast<std::size_t>(b) * C + a]) *
              scale;
      for (std::size_t p = 0; p < pixels; ++p) {
        const T* fp = f.data() + p * C;
        T* gp = gx.data() + p * C;
        for (int a = 0; a < C; ++a) {
          const T* mrow = m.data() + static_cast<std::size_t>(a) * C;
          T acc = T(0);
          for (int b = 0; b < C; ++b) acc += mrow[b] * fp[b];
          gp[a] += acc;
        }
      }
    });
  }

  /// Mean absolute error; subgradient at exact ties is 0.
  Var mae(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape != bv.shape)
      throw std::invalid_argument("mae: shape mismatch: " + shape_str(av.shape) + " vs " +
                                  shape_str(bv.shape));
    const std::size_t n = av.numel();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(av.data[i] - bv.data[i]);
    TensorT<T> out = TensorT<T>::scalar(acc / static_cast<T>(n));
    return push(std::move(out), nullptr, needs(a) || needs(b), [a, b, n](TapeT& t, int self) {
      const T g = t.node(self).adj[0] / static_cast<T>(n);
      const auto& av = t.value(a).data;
      const auto& bv = t.value(b).data;
      if (t.needs(a)) {
        auto& ga = t.adj_buf(a);
        for (std::size_t i = 0; i < n; ++i) {
          const T d = av[i] - bv[i];
          ga[i] += d > T(0) ? g : (d < T(0) ? -g : T(0));
        }
      }
      if (t.needs(b)) {
        auto& gb = t.adj_buf(b);
        for (std::size_t i = 0; i < n; ++i) {
          const T d = av[i] - bv[i];
          gb[i] -= d > T(0) ? g : (d < T(0) ? -g : T(0));
        }
      }
    });
  }

  Var add(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape != bv.shape)
      throw std::invalid_argument("add: shape mismatch: " + shape_str(av.shape) + " vs " +
                                  shape_str(bv.shape));
    TensorT<T> out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    return push(std::move(out), nullptr, needs(a) || needs(b), [a, b](TapeT& t, int self) {
      const auto& go = t.node(self).adj;
      if (t.needs(a)) {
        auto& ga = t.adj_buf(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (t.needs(b)) {
        auto& gb = t.adj_buf(b);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }

  /// Weighted sum of scalar terms.
  Var weighted_sum(const std::vector<std::pair<T, Var>>& terms) {
    T acc = T(0);
    bool any = false;
    for (const auto& [wgt, v] : terms) {
      if (value(v).numel() != 1)
        throw std::invalid_argument("weighted_sum: all terms must be scalars");
      acc += wgt * value(v).data[0];
      any = any || needs(v);
    }
    return push(TensorT<T>::scalar(acc), nullptr, any, [terms](TapeT& t, int self) {
      const T g = t.node(self).adj[0];
      for (const auto& [wgt, v] : terms)
        if (t.needs(v)) t.adj_buf(v)[0] += wgt * g;
    });
  }

  /// Contractive penalty for a tanh layer with per-pixel shared weights:
  /// P = mean_p sum_j (1 - h_j(p)^2)^2 * sum_c omega_cj^2.
  Var contractive_penalty(Var h, Var omega) {
    const auto& hv = value(h);
    const auto& wv = value(omega);
    if (hv.shape.size() != 3 || wv.shape.size() != 2 || hv.shape[2] != wv.shape[1])
      throw std::invalid_argument("contractive_penalty: h HxWxN vs omega CxN; got " +
                                  shape_str(hv.shape) + ", " + shape_str(wv.shape));
    const int C = wv.shape[0], N = wv.shape[1];
    const std::size_t pixels = static_cast<std::size_t>(hv.shape[0]) * hv.shape[1];
    std::vector<T> colsq(N, T(0));
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < N; ++j) {
        const T w = wv.data[static_cast<std::size_t>(c) * N + j];
        colsq[j] += w * w;
      }
    T acc = T(0);
    for (std::size_t p = 0; p < pixels; ++p)
      for (int j = 0; j < N; ++j) {
        const T u = T(1) - hv.data[p * N + j] * hv.data[p * N + j];
        acc += u * u * colsq[j];
      }
    const T inv_pixels = T(1) / static_cast<T>(pixels);
    TensorT<T> out = TensorT<T>::scalar(acc * inv_pixels);
    return push(std::move(out), nullptr, needs(h) || needs(omega),
                [h, omega, colsq, pixels, C, N, inv_pixels](TapeT& t, int self) {
                  const T g = t.node(self).adj[0];
                  const auto& hv = t.value(h).data;
                  if (t.needs(h)) {
                    auto& gh = t.adj_buf(h);
                    for (std::size_t p = 0; p < pixels; ++p)
                      for (int j = 0; j < N; ++j) {
                        const T hj = hv[p * N + j];
                        gh[p * N + j] +=
                            g * inv_pixels * T(-4) * hj * (T(1) - hj * hj) * colsq[j];
                      }
                  }
                  if (t.needs(omega)) {
                    std::vector<T> q(N, T(0));  // sum_p (1-h^2)^2 per unit
                    for (std::size_t p = 0; p < pixels; ++p)
                      for (int j = 0; j < N; ++j) {
                        const T u = T(1) - hv[p * N + j] * hv[p * N + j];
                        q[j] += u * u;
                      }
                    const auto& wv = t.value(omega).data;
                    auto& gw = t.adj_buf(omega);
                    for (int c = 0; c < C; ++c)
                      for (int j = 0; j < N; ++j)
                        gw[static_cast<std::size_t>(c) * N + j] +=
                            g * inv_pixels * T(2) * wv[static_cast<std::size_t>(c) * N + j] * q[j];
                  }
                });
  }

  /// Same value, no gradient flow.
  Var stop_gradient(Var x) { return push(value(x), nullptr, false, {}); }

  /// Backward pass from a scalar loss. Adjoints are (re)computed for the
  /// whole reachable graph; dLoss/dp is accumulated into p->grad for every
  /// bound parameter (or only those in `targets` when given).
  void backward(Var loss) { backward_impl(loss, nullptr); }
  void backward(Var loss, const std::vector<TensorT<T>*>& targets) {
    backward_impl(loss, &targets);
  }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T>* bound = nullptr;
    std::vector<T> adj;
    bool needs = false;
    std::function<void(TapeT&, int)> back;
  };

  std::vector<Node> nodes_;

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  bool needs(Var v) const { return node(v.id).needs; }

  std::vector<T>& adj_buf(Var v) {
    Node& n = node(v.id);
    if (n.adj.size() != n.value.numel()) n.adj.assign(n.value.numel(), T(0));
    return n.adj;
  }

  Var push(TensorT<T> value, TensorT<T>* bound, bool needs,
           std::function<void(TapeT&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.bound = bound;
    n.needs = needs;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // in: low-res [h][w][C*r*r], out: high-res [h*r][w*r][C]
  static void forward_d2s(const T* in, int h, int w, int C, int r, T* out) {
    const int Wo = w * r;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const T* ip = in + (static_cast<std::size_t>(i) * w + j) * C * r * r;
        for (int di = 0; di < r; ++di)
          for (int dj = 0; dj < r; ++dj) {
            T* op = out + (static_cast<std::size_t>(i * r + di) * Wo + (j * r + dj)) * C;
            for (int c = 0; c < C; ++c) op[c] += ip[c * r * r + di * r + dj];
          }
      }
  }

  // in: high-res [h*r][w*r][C], out: low-res [h][w][C*r*r]; inverse of the
  // mapping above. Both scatter functions accumulate so they can also carry
  // adjoints.
  static void backward_d2s(const T* in, int h, int w, int C, int r, T* out) {
    const int Wo = w * r;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        T* op = out + (static_cast<std::size_t>(i) * w + j) * C * r * r;
        for (int di = 0; di < r; ++di)
          for (int dj = 0; dj < r; ++dj) {
            const T* ip = in + (static_cast<std::size_t>(i * r + di) * Wo + (j * r + dj)) * C;
            for (int c = 0; c < C; ++c) op[c * r * r + di * r + dj] += ip[c];
          }
      }
  }

  void backward_impl(Var loss, const std::vector<TensorT<T>*>* targets) {
    if (!loss.valid() || static_cast<std::size_t>(loss.id) >= nodes_.size())
      throw std::invalid_argument("backward: loss is not on this tape");
    if (node(loss.id).value.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(node(loss.id).value.shape));
    for (auto& n : nodes_) n.adj.clear();
    adj_buf(loss)[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.back || !n.needs || n.adj.empty()) continue;
      n.back(*this, i);
    }
    std::unordered_set<const TensorT<T>*> filter;
    if (targets) filter.insert(targets->begin(), targets->end());
    for (auto& n : nodes_) {
      if (!n.bound || n.adj.empty()) continue;
      if (targets && !filter.count(n.bound)) continue;
      auto& g = n.bound->grad;
      if (g.size() != n.value.numel()) g.assign(n.value.numel(), T(0));
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i];
    }
  }
};

using Tape = TapeT<float>;

}  // namespace deepmark
