#include "facemix/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "facemix/common.hpp"

namespace facemix::ad {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <class T>
void expect_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                     (t.defined() ? shape_str(t.shape()) : "undefined"));
  }
}

template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape, std::vector<T> value,
                                     std::initializer_list<const Tensor<T>*> parents) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto* p : parents) n->requires_grad = n->requires_grad || p->requires_grad();
    if (n->requires_grad) {
      for (const auto* p : parents) n->parents.push_back(p->ptr());
    }
  }
  return n;
}

template <class T>
bool wants(const Node<T>& n, std::size_t i) {
  return n.parents[i]->requires_grad;
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <class T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() needs a one-element tensor");
  return n_->value[0];
}

template <class T>
void Tensor<T>::backward() {
  if (size() != 1) throw ShapeError("backward() needs a one-element tensor");
  if (!n_->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{n_.get(), 0}};
  seen.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  n_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  expect_rank(x, 2, "dense");
  expect_rank(W, 2, "dense");
  expect_rank(b, 1, "dense");
  const int B = x.dim(0), in = x.dim(1), out = W.dim(1);
  if (W.dim(0) != in || b.dim(0) != out) {
    throw ShapeError("dense: x " + shape_str(x.shape()) + ", W " + shape_str(W.shape()) + ", b " +
                     shape_str(b.shape()));
  }
  std::vector<T> y(static_cast<std::size_t>(B) * out);
  const T* xv = x.values().data();
  const T* wv = W.values().data();
  const T* bv = b.values().data();
  for (int r = 0; r < B; ++r) {
    T* yr = y.data() + static_cast<std::size_t>(r) * out;
    std::copy(bv, bv + out, yr);
    for (int i = 0; i < in; ++i) {
      const T xi = xv[static_cast<std::size_t>(r) * in + i];
      if (xi == T(0)) continue;
      const T* wr = wv + static_cast<std::size_t>(i) * out;
      for (int o = 0; o < out; ++o) yr[o] += xi * wr[o];
    }
  }
  auto n = make_result<T>({B, out}, std::move(y), {&x, &W, &b});
  if (n->requires_grad) {
    n->backward = [B, in, out](Node<T>& self) {
      const T* g = self.grad.data();
      auto& xn = *self.parents[0];
      auto& wn = *self.parents[1];
      if (wants(self, 0)) {
        auto& gx = xn.ensure_grad();
        for (int r = 0; r < B; ++r) {
          const T* gr = g + static_cast<std::size_t>(r) * out;
          for (int i = 0; i < in; ++i) {
            const T* wr = wn.value.data() + static_cast<std::size_t>(i) * out;
            T acc = 0;
            for (int o = 0; o < out; ++o) acc += gr[o] * wr[o];
            gx[static_cast<std::size_t>(r) * in + i] += acc;
          }
        }
      }
      if (wants(self, 1)) {
        auto& gw = wn.ensure_grad();
        for (int r = 0; r < B; ++r) {
          const T* gr = g + static_cast<std::size_t>(r) * out;
          for (int i = 0; i < in; ++i) {
            const T xi = xn.value[static_cast<std::size_t>(r) * in + i];
            if (xi == T(0)) continue;
            T* gwr = gw.data() + static_cast<std::size_t>(i) * out;
            for (int o = 0; o < out; ++o) gwr[o] += xi * gr[o];
          }
        }
      }
      if (wants(self, 2)) {
        auto& gb = self.parents[2]->ensure_grad();
        for (int r = 0; r < B; ++r)
          for (int o = 0; o < out; ++o) gb[o] += g[static_cast<std::size_t>(r) * out + o];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> y(x.values());
  for (auto& v : y) v = v > T(0) ? v : T(0);
  auto n = make_result<T>(x.shape(), std::move(y), {&x});
  if (n->requires_grad) {
    n->backward = [](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xv[i] > T(0)) gx[i] += self.grad[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ShapeError("dropout probability must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.values()[i] * mask[i];
  auto n = make_result<T>(x.shape(), std::move(y), {&x});
  if (n->requires_grad) {
    n->backward = [mask = std::move(mask)](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k) {
  expect_rank(x, 4, "conv2d");
  expect_rank(k, 4, "conv2d");
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3), Co = k.dim(0);
  if (k.dim(1) != Ci || k.dim(2) != 3 || k.dim(3) != 3) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " + shape_str(k.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> y(static_cast<std::size_t>(B) * Co * plane, T(0));
  const T* xv = x.values().data();
  const T* kv = k.values().data();
  // Visits each (output pixel, input pixel, weight) triple of the convolution.
  auto for_each_tap = [=](auto&& fn) {
    for (int b = 0; b < B; ++b)
      for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int dy = ky - 1, dx = kx - 1;
              const std::size_t kidx = ((static_cast<std::size_t>(co) * Ci + ci) * 3 + ky) * 3 + kx;
              const std::size_t obase = (static_cast<std::size_t>(b) * Co + co) * plane;
              const std::size_t ibase = (static_cast<std::size_t>(b) * Ci + ci) * plane;
              const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
              const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
              for (int yy = y0; yy < y1; ++yy) {
                fn(kidx, obase + static_cast<std::size_t>(yy) * W,
                   ibase + static_cast<std::size_t>(yy + dy) * W + dx, x0, x1);
              }
            }
  };
  for_each_tap([&](std::size_t kidx, std::size_t orow, std::size_t irow, int x0, int x1) {
    const T w = kv[kidx];
    T* yo = y.data() + orow;
    const T* xi = xv + irow;
    for (int c = x0; c < x1; ++c) yo[c] += w * xi[c];
  });
  auto n = make_result<T>({B, Co, H, W}, std::move(y), {&x, &k});
  if (n->requires_grad) {
    n->backward = [for_each_tap](Node<T>& self) {
      const T* g = self.grad.data();
      auto& xn = *self.parents[0];
      auto& kn = *self.parents[1];
      const bool want_x = wants(self, 0), want_k = wants(self, 1);
      T* gx = want_x ? xn.ensure_grad().data() : nullptr;
      T* gk = want_k ? kn.ensure_grad().data() : nullptr;
      const T* xv = xn.value.data();
      const T* kv = kn.value.data();
      for_each_tap([&](std::size_t kidx, std::size_t orow, std::size_t irow, int x0, int x1) {
        const T* go = g + orow;
        if (want_x) {
          const T w = kv[kidx];
          T* gi = gx + irow;
          for (int c = x0; c < x1; ++c) gi[c] += w * go[c];
        }
        if (want_k) {
          const T* xi = xv + irow;
          T acc = 0;
          for (int c = x0; c < x1; ++c) acc += go[c] * xi[c];
          gk[kidx] += acc;
        }
      });
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  expect_rank(x, 4, "maxpool2");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("maxpool2 needs even spatial size, got " + shape_str(x.shape()));
  const int Ho = H / 2, Wo = W / 2;
  const std::size_t out_n = static_cast<std::size_t>(B) * C * Ho * Wo;
  std::vector<T> y(out_n);
  std::vector<std::uint32_t> arg(out_n);
  const T* xv = x.values().data();
  std::size_t o = 0;
  for (int bc = 0; bc < B * C; ++bc) {
    const std::size_t base = static_cast<std::size_t>(bc) * H * W;
    for (int yy = 0; yy < Ho; ++yy) {
      for (int xx = 0; xx < Wo; ++xx, ++o) {
        std::size_t best = base + static_cast<std::size_t>(2 * yy) * W + 2 * xx;
        const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
        for (std::size_t c : cand)
          if (xv[c] > xv[best]) best = c;
        y[o] = xv[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  auto n = make_result<T>({B, C, Ho, Wo}, std::move(y), {&x});
  if (n->requires_grad) {
    n->backward = [arg = std::move(arg)](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += self.grad[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  expect_rank(a, 2, "concat");
  expect_rank(b, 2, "concat");
  const int B = a.dim(0), m = a.dim(1), k = b.dim(1);
  if (b.dim(0) != B) throw ShapeError("concat: batch sizes differ");
  std::vector<T> y(static_cast<std::size_t>(B) * (m + k));
  for (int r = 0; r < B; ++r) {
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(r) * m, m, y.begin() + static_cast<std::ptrdiff_t>(r) * (m + k));
    std::copy_n(b.values().begin() + static_cast<std::ptrdiff_t>(r) * k, k,
                y.begin() + static_cast<std::ptrdiff_t>(r) * (m + k) + m);
  }
  auto n = make_result<T>({B, m + k}, std::move(y), {&a, &b});
  if (n->requires_grad) {
    n->backward = [B, m, k](Node<T>& self) {
      for (int side = 0; side < 2; ++side) {
        if (!wants(self, side)) continue;
        auto& g = self.parents[side]->ensure_grad();
        const int w = side ? k : m, off = side ? m : 0;
        for (int r = 0; r < B; ++r)
          for (int c = 0; c < w; ++c)
            g[static_cast<std::size_t>(r) * w + c] += self.grad[static_cast<std::size_t>(r) * (m + k) + off + c];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.shape().size() < 2) throw ShapeError("flatten needs a batch dimension");
  const int B = x.dim(0);
  const int rest = static_cast<int>(x.size() / static_cast<std::size_t>(B));
  auto n = make_result<T>({B, rest}, x.values(), {&x});
  if (n->requires_grad) {
    n->backward = [](Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  expect_rank(logits, 2, "softmax");
  const int B = logits.dim(0), K = logits.dim(1);
  std::vector<T> p(logits.size());
  for (int r = 0; r < B; ++r) {
    const T* z = logits.values().data() + static_cast<std::size_t>(r) * K;
    const double mx = *std::max_element(z, z + K);
    double s = 0;
    for (int c = 0; c < K; ++c) s += std::exp(static_cast<double>(z[c]) - mx);
    for (int c = 0; c < K; ++c) p[static_cast<std::size_t>(r) * K + c] = static_cast<T>(std::exp(static_cast<double>(z[c]) - mx) / s);
  }
  return p;
}

template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, std::span<const T> weights) {
  expect_rank(logits, 2, "softmax_cross_entropy");
  const int B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(B)) throw ShapeError("softmax_cross_entropy: label count mismatch");
  if (!weights.empty() && weights.size() != labels.size()) throw ShapeError("softmax_cross_entropy: weight count mismatch");
  std::vector<double> w(static_cast<std::size_t>(B), 1.0);
  for (std::size_t i = 0; i < weights.size(); ++i) w[i] = static_cast<double>(weights[i]);
  double wsum = 0;
  for (double v : w) wsum += v;
  if (!(wsum > 0)) throw NumericError("softmax_cross_entropy: weights must have a positive sum");
  std::vector<double> p(logits.size());
  double loss = 0;
  for (int r = 0; r < B; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= K) throw ShapeError("softmax_cross_entropy: label out of range");
    const T* z = logits.values().data() + static_cast<std::size_t>(r) * K;
    const double mx = *std::max_element(z, z + K);
    double s = 0;
    for (int c = 0; c < K; ++c) s += std::exp(static_cast<double>(z[c]) - mx);
    const double lse = mx + std::log(s);
    for (int c = 0; c < K; ++c) p[static_cast<std::size_t>(r) * K + c] = std::exp(static_cast<double>(z[c]) - lse);
    loss += w[static_cast<std::size_t>(r)] * (lse - static_cast<double>(z[y]));
  }
  loss /= wsum;
  auto n = make_result<T>({1}, {static_cast<T>(loss)}, {&logits});
  if (n->requires_grad) {
    std::vector<int> lab(labels.begin(), labels.end());
    n->backward = [B, K, p = std::move(p), w = std::move(w), lab = std::move(lab), wsum](Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      const double up = static_cast<double>(self.grad[0]);
      for (int r = 0; r < B; ++r) {
        const double f = up * w[static_cast<std::size_t>(r)] / wsum;
        for (int c = 0; c < K; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * K + c;
          g[i] += static_cast<T>(f * (p[i] - (c == lab[static_cast<std::size_t>(r)] ? 1.0 : 0.0)));
        }
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> contrastive_alignment(const Tensor<T>& zs, std::span<const int> ys, const Tensor<T>& zt,
                                std::span<const int> yt, double margin) {
  expect_rank(zs, 2, "contrastive_alignment");
  expect_rank(zt, 2, "contrastive_alignment");
  const int Bs = zs.dim(0), Bt = zt.dim(0), D = zs.dim(1);
  if (zt.dim(1) != D) throw ShapeError("contrastive_alignment: latent widths differ");
  if (ys.size() != static_cast<std::size_t>(Bs) || yt.size() != static_cast<std::size_t>(Bt))
    throw ShapeError("contrastive_alignment: label count mismatch");
  if (!(margin > 0)) throw ShapeError("contrastive_alignment: margin must be positive");
  std::size_t n_same = 0, n_diff = 0;
  for (int i = 0; i < Bs; ++i)
    for (int j = 0; j < Bt; ++j) (ys[static_cast<std::size_t>(i)] == yt[static_cast<std::size_t>(j)] ? n_same : n_diff)++;
  // Per-pair coefficient c such that d loss / d zs_i = c * (zs_i - zt_j).
  std::vector<double> coef(static_cast<std::size_t>(Bs) * Bt, 0.0);
  double same = 0, diff = 0;
  const T* a = zs.values().data();
  const T* b = zt.values().data();
  for (int i = 0; i < Bs; ++i) {
    for (int j = 0; j < Bt; ++j) {
      double d2 = 0;
      for (int k = 0; k < D; ++k) {
        const double d = static_cast<double>(a[static_cast<std::size_t>(i) * D + k]) - b[static_cast<std::size_t>(j) * D + k];
        d2 += d * d;
      }
      const std::size_t pi = static_cast<std::size_t>(i) * Bt + j;
      if (ys[static_cast<std::size_t>(i)] == yt[static_cast<std::size_t>(j)]) {
        same += 0.5 * d2;
        coef[pi] = 1.0 / static_cast<double>(n_same);
      } else {
        const double dist = std::sqrt(d2);
        if (dist < margin) {
          diff += 0.5 * (margin - dist) * (margin - dist);
          // Zero gradient at coincident points.
          if (dist > 0) coef[pi] = -(margin - dist) / dist / static_cast<double>(n_diff);
        }
      }
    }
  }
  const double loss = (n_same ? same / static_cast<double>(n_same) : 0.0) + (n_diff ? diff / static_cast<double>(n_diff) : 0.0);
  auto n = make_result<T>({1}, {static_cast<T>(loss)}, {&zs, &zt});
  if (n->requires_grad) {
    n->backward = [Bs, Bt, D, coef = std::move(coef)](Node<T>& self) {
      const double up = static_cast<double>(self.grad[0]);
      const auto& av = self.parents[0]->value;
      const auto& bv = self.parents[1]->value;
      T* ga = wants(self, 0) ? self.parents[0]->ensure_grad().data() : nullptr;
      T* gb = wants(self, 1) ? self.parents[1]->ensure_grad().data() : nullptr;
      for (int i = 0; i < Bs; ++i) {
        for (int j = 0; j < Bt; ++j) {
          const double c = up * coef[static_cast<std::size_t>(i) * Bt + j];
          if (c == 0.0) continue;
          for (int k = 0; k < D; ++k) {
            const std::size_t ia = static_cast<std::size_t>(i) * D + k, ib = static_cast<std::size_t>(j) * D + k;
            const T g = static_cast<T>(c * (static_cast<double>(av[ia]) - bv[ib]));
            if (ga) ga[ia] += g;
            if (gb) gb[ib] -= g;
          }
        }
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> softmax_select(const Tensor<T>& logits, std::span<const int> classes) {
  expect_rank(logits, 2, "softmax_select");
  const int B = logits.dim(0), K = logits.dim(1);
  if (classes.size() != static_cast<std::size_t>(B)) throw ShapeError("softmax_select: class count mismatch");
  std::vector<T> p = softmax_rows(logits);
  std::vector<T> y(static_cast<std::size_t>(B));
  std::vector<int> cls(classes.begin(), classes.end());
  for (int r = 0; r < B; ++r) {
    if (cls[r] < 0 || cls[r] >= K) throw ShapeError("softmax_select: class out of range");
    y[r] = p[static_cast<std::size_t>(r) * K + cls[r]];
  }
  auto n = make_result<T>({B}, std::move(y), {&logits});
  if (n->requires_grad) {
    n->backward = [B, K, p = std::move(p), cls = std::move(cls)](Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (int r = 0; r < B; ++r) {
        const T* pr = p.data() + static_cast<std::size_t>(r) * K;
        const T pc = pr[cls[r]];
        for (int c = 0; c < K; ++c)
          g[static_cast<std::size_t>(r) * K + c] += self.grad[r] * pc * ((c == cls[r] ? T(1) : T(0)) - pr[c]);
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shapes differ");
  std::vector<T> y(a.values());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.values()[i];
  auto n = make_result<T>(a.shape(), std::move(y), {&a, &b});
  if (n->requires_grad) {
    n->backward = [](Node<T>& self) {
      for (std::size_t s = 0; s < 2; ++s) {
        if (!wants(self, s)) continue;
        auto& g = self.parents[s]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, double c) {
  std::vector<T> y(a.values());
  for (auto& v : y) v = static_cast<T>(v * c);
  auto n = make_result<T>(a.shape(), std::move(y), {&a});
  if (n->requires_grad) {
    n->backward = [c](Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(self.grad[i] * c);
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  double s = 0;
  for (T v : a.values()) s += v;
  auto n = make_result<T>({1}, {static_cast<T>(s)}, {&a});
  if (n->requires_grad) {
    n->backward = [](Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> weighted_sum(const Tensor<T>& a, std::span<const T> w) {
  if (w.size() != a.size()) throw ShapeError("weighted_sum: weight count mismatch");
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(a.values()[i]) * w[i];
  auto n = make_result<T>({1}, {static_cast<T>(s)}, {&a});
  if (n->requires_grad) {
    n->backward = [w = std::vector<T>(w.begin(), w.end())](Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& st, double lr) {
  if (!(lr > 0)) throw NumericError("adam_step: learning rate must be positive");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), {});
    st.v.assign(params.size(), {});
    st.step = 0;
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (m.size() != p.size()) {
      m.assign(p.size(), T(0));
      v.assign(p.size(), T(0));
    }
    if (!p.has_grad()) {
      // Zero gradient still decays the moments.
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = static_cast<T>(st.beta1 * m[k]);
        v[k] = static_cast<T>(st.beta2 * v[k]);
        const double upd = lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + st.eps);
        p.values()[k] = static_cast<T>(p.values()[k] - upd);
      }
      continue;
    }
    const auto& g = p.grad();
    auto& val = p.values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = st.beta1 * m[k] + (1.0 - st.beta1) * gk;
      const double vk = st.beta2 * v[k] + (1.0 - st.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      val[k] = static_cast<T>(val[k] - lr * (mk / bc1) / (std::sqrt(vk / bc2) + st.eps));
    }
  }
}

double triangular_lr(std::int64_t iteration, const LrSchedule& s) {
  if (!(s.zeta_min > 0 && s.zeta_min <= s.zeta_max) || s.step_size <= 0) throw NumericError("invalid learning-rate schedule");
  const std::int64_t period = 2 * s.step_size;
  const std::int64_t phase = ((iteration % period) + period) % period;
  const double frac = phase <= s.step_size ? static_cast<double>(phase) / s.step_size
                                           : static_cast<double>(period - phase) / s.step_size;
  return s.zeta_min + (s.zeta_max - s.zeta_min) * frac;
}

double grad_check(const GradFn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed, double h) {
  for (auto& t : inputs) t.zero_grad();
  Tensor<double> out = f(inputs);
  std::vector<double> w(out.size(), 1.0);
  if (out.size() > 1) {
    Rng rng = Rng(seed).split("grad_check");
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  }
  weighted_sum<double>(out, w).backward();

  auto reduced = [&]() {
    NoGradGuard guard;
    const Tensor<double> y = f(inputs);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * w[i];
    return s;
  };
  double worst = 0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic = t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t.values()[i];
      t.values()[i] = orig + h;
      const double fp = reduced();
      t.values()[i] = orig - h;
      const double fm = reduced();
      t.values()[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

#define FACEMIX_AD_INSTANTIATE(T)                                                                        \
  template class Tensor<T>;                                                                              \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> relu(const Tensor<T>&);                                                             \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);                                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> maxpool2(const Tensor<T>&);                                                         \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> flatten(const Tensor<T>&);                                                          \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>, std::span<const T>);  \
  template Tensor<T> contrastive_alignment(const Tensor<T>&, std::span<const int>, const Tensor<T>&,     \
                                           std::span<const int>, double);                                \
  template Tensor<T> softmax_select(const Tensor<T>&, std::span<const int>);                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale(const Tensor<T>&, double);                                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                              \
  template Tensor<T> weighted_sum(const Tensor<T>&, std::span<const T>);                                 \
  template std::vector<T> softmax_rows(const Tensor<T>&);                                                \
  template void adam_step(std::span<Tensor<T>>, AdamState<T>&, double);

FACEMIX_AD_INSTANTIATE(float)
FACEMIX_AD_INSTANTIATE(double)

}  // namespace facemix::ad
