#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "structlab/tensor.hpp"

namespace structlab {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed operations. Replaying the record in reverse
/// accumulates gradients into every node reachable from the loss.
///
/// A tape is single-threaded. Separate tapes over the same read-only
/// parameters may run on separate threads.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is kept on the tape (inputs under a gradient check).
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to a parameter; backward() adds into param.grad.
  Var<T> parameter(Parameter<T>& param);

  /// Records a derived node. The backward function is kept only when
  /// gradients are enabled and some input needs one.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, const char* op,
                BackwardFn backward);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, const char* op,
                BackwardFn backward);

  /// Reverse replay from a scalar loss.
  void backward(const Var<T>& loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }
  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    const char* op = "";
    bool requires_grad = false;
  };

  Var<T> push(Node node);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

/// Differentiable primitives. Binary elementwise operators broadcast with
/// right-aligned (numpy) semantics.
namespace ad {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> neg(const Var<T>& x);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& x, T offset);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> softplus(const Var<T>& x);

/// (m x k) . (k x n)
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// 2-D transpose.
template <typename T> Var<T> transpose(const Var<T>& x);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> broadcast_to(const Var<T>& x, Shape shape);

template <typename T> Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start,
                                   std::size_t length);
template <typename T> Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
template <typename T> Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

/// Entries where mask != 0 are replaced by `fill` and receive no gradient.
template <typename T> Var<T> masked_fill(const Var<T>& x, const Tensor<T>& mask, T fill);

/// Softmax over the last axis. With a mask (same shape as x), entries where
/// mask == 0 get probability 0; a fully masked row is all zeros.
template <typename T> Var<T> softmax(const Var<T>& x);
template <typename T> Var<T> softmax(const Var<T>& x, const Tensor<T>& mask);

/// Normalizes each vector along the last axis, then applies gain and bias.
template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                                        T eps = T(1e-5));

/// Inverted dropout; identity when rate == 0.
template <typename T> Var<T> dropout(const Var<T>& x, T rate, std::mt19937_64& rng);

/// Rows of `table` selected by `ids`.
template <typename T> Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids);

/// Sliding-window unfold over the rows of an (n x d) sequence packed from
/// several segments. Row i of the result concatenates rows i-half..i+half
/// of its own segment, zero-padded past the segment ends.
template <typename T> Var<T> unfold(const Var<T>& x, std::size_t width,
                                    std::span<const std::size_t> segment_lengths);

/// 1-D convolution over the sequence: unfold, then (width*d_in x d_out)
/// weight, then bias. Output length equals input length.
template <typename T> Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                                    std::span<const std::size_t> segment_lengths);

/// Maximum over every window of a 1-D sequence: result[a][b] = max(x[a..b])
/// for a <= b and 0 below the diagonal. The gradient of each window goes
/// to its leftmost maximal element.
template <typename T> Var<T> window_max(const Var<T>& x);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
template <typename T> Var<T> cross_entropy(const Var<T>& logits,
                                           std::span<const std::int32_t> targets);

}  // namespace ad

// Matrix product into a preallocated output (row-major); out = a . b or with
// transposes. Shared by the primitives and by the tests' timing paths.
template <typename T>
void gemm(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate);

}  // namespace structlab
