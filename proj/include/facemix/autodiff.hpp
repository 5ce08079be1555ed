#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "facemix/rng.hpp"

namespace facemix::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Shared handle to a graph node. Copies alias the same storage.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(std::size_t i) const { return n_->shape.at(i); }
  std::size_t size() const { return n_->value.size(); }
  std::vector<T>& values() { return n_->value; }
  const std::vector<T>& values() const { return n_->value; }
  /// Gradient, materialized as zeros if nothing has been accumulated yet.
  std::vector<T>& grad() { return n_->ensure_grad(); }
  bool has_grad() const { return !n_->grad.empty(); }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool v) { n_->requires_grad = v; }
  T item() const;
  void zero_grad() { n_->grad.clear(); }
  /// Reverse pass from a one-element tensor; gradients accumulate.
  void backward();

  Node<T>* node() const { return n_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return n_; }
  /// Same storage identity (not value equality).
  bool same(const Tensor& o) const { return n_ == o.n_; }

 private:
  std::shared_ptr<Node<T>> n_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// Layers. Shapes are checked; mismatches throw ShapeError.
template <class T> Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b);
template <class T> Tensor<T> relu(const Tensor<T>& x);
/// Inverted dropout. Identity when !training or p == 0. Throws for p outside [0, 1).
template <class T> Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng);
/// 3x3 convolution, stride 1, zero padding, no bias.
template <class T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k);
/// 2x2 max pooling, stride 2. Ties route the gradient to the first element in row-major order.
template <class T> Tensor<T> maxpool2(const Tensor<T>& x);
template <class T> Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b);
/// [B, ...] -> [B, rest].
template <class T> Tensor<T> flatten(const Tensor<T>& x);

/// sum_b w_b * CE_b / sum_b w_b. Empty weights means all ones.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                                std::span<const T> weights = {});

/// Contrastive alignment between two latent batches: same-class pairs add
/// 0.5 |zs - zt|^2, different-class pairs add 0.5 max(0, m - |zs - zt|)^2.
/// Each sum is divided by its own pair count (a missing kind contributes 0).
template <class T>
Tensor<T> contrastive_alignment(const Tensor<T>& zs, std::span<const int> ys, const Tensor<T>& zt,
                                std::span<const int> yt, double margin);

/// Softmax probability of classes[b] in row b, shape [B].
template <class T> Tensor<T> softmax_select(const Tensor<T>& logits, std::span<const int> classes);

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, double c);
template <class T> Tensor<T> sum(const Tensor<T>& a);
/// sum_i a_i w_i with constant weights.
template <class T> Tensor<T> weighted_sum(const Tensor<T>& a, std::span<const T> w);

/// Row-wise softmax of a [B, K] tensor (no graph).
template <class T> std::vector<T> softmax_rows(const Tensor<T>& logits);

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update from each parameter's accumulated gradient
/// (a parameter without gradient is treated as zero gradient). Throws for lr <= 0.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, double lr);

struct LrSchedule {
  double zeta_min = 1e-5;
  double zeta_max = 1e-3;
  std::int64_t step_size = 100;
};

/// Triangular wave: zeta_min at 0, zeta_max at step_size, back at 2 * step_size.
double triangular_lr(std::int64_t iteration, const LrSchedule& sched);

using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Max relative error between reverse-mode and central-difference gradients
/// over every element of every input that requires grad. A non-scalar output
/// is reduced with fixed random weights drawn from `seed`. The relative error
/// is |a - n| / max(|a|, |n|, 1e-6).
double grad_check(const GradFn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed,
                  double h = 1e-4);

}  // namespace facemix::ad
