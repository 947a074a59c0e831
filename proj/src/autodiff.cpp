#include "structlab/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace structlab {

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.op = "constant";
  return push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.op = "variable";
  node.requires_grad = grad_enabled_;
  return push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& param) {
  Node node;
  node.value = param.value;
  node.op = "parameter";
  node.requires_grad = grad_enabled_;
  node.param = grad_enabled_ ? &param : nullptr;
  return push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, const char* op,
                       BackwardFn backward) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), op,
                std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, const char* op,
                       BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.op = op;
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node.requires_grad = true;
        break;
      }
    }
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  grad(loss.id()).fill(T(1));
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.requires_grad && node.backward && has_grad(id)) node.backward(*this, id);
  }
  for (Node& node : nodes_) {
    if (node.param == nullptr || node.grad.empty()) continue;
    Parameter<T>& p = *node.param;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
    auto dst = p.grad.values();
    auto src = node.grad.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

// ---------------------------------------------------------------------------
// GEMM

template <typename T>
void gemm(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate) {
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Idx = Eigen::Index;
  Eigen::Map<const RowMat> A(a, static_cast<Idx>(trans_a ? k : m), static_cast<Idx>(trans_a ? m : k));
  Eigen::Map<const RowMat> B(b, static_cast<Idx>(trans_b ? n : k), static_cast<Idx>(trans_b ? k : n));
  Eigen::Map<RowMat> C(out, static_cast<Idx>(m), static_cast<Idx>(n));
  if (!accumulate) C.setZero();
  if (trans_a && trans_b) {
    C.noalias() += A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A * B;
  }
}

template void gemm<float>(const float*, const float*, float*, std::size_t, std::size_t,
                          std::size_t, bool, bool, bool);
template void gemm<double>(const double*, const double*, double*, std::size_t, std::size_t,
                           std::size_t, bool, bool, bool);

namespace ad {
namespace {

// Right-aligned broadcast of two shapes with per-axis strides (0 on
// broadcast axes).
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Broadcast p;
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ax = rank - 1 - i;
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                       shape_string(b));
    }
    p.out[ax] = std::max(da, db);
    if (i < a.size() && da != 1) p.stride_a[ax] = sa[a.size() - 1 - i];
    if (i < b.size() && db != 1) p.stride_b[ax] = sb[b.size() - 1 - i];
  }
  return p;
}

template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t total = shape_numel(p.out);
  if (total == 0) return;
  const std::size_t rank = p.out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = p.out[rank - 1];
  const std::size_t ia = p.stride_a[rank - 1];
  const std::size_t ib = p.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += p.stride_a[d];
      ob += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.stride_a[d] * p.out[d];
      ob -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinaryKind kind, const char* op) {
  Tape<T>& tape = a.tape();
  auto p = plan_broadcast(a.shape(), b.shape(), op);
  Tensor<T> out(p.out);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* ov = out.data();
  switch (kind) {
    case BinaryKind::kAdd:
      for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] + bv[j]; });
      break;
    case BinaryKind::kSub:
      for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] - bv[j]; });
      break;
    case BinaryKind::kMul:
      for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] * bv[j]; });
      break;
    case BinaryKind::kDiv:
      for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] / bv[j]; });
      break;
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record(std::move(out), {a, b}, op,
                     [ia, ib, kind, p = std::move(p)](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    const T* av = t.value(ia).data();
    const T* bv = t.value(ib).data();
    if (t.requires_grad(ia)) {
      T* ga = t.grad(ia).data();
      switch (kind) {
        case BinaryKind::kAdd:
        case BinaryKind::kSub:
          for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t) { ga[i] += g[o]; });
          break;
        case BinaryKind::kMul:
          for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * bv[j]; });
          break;
        case BinaryKind::kDiv:
          for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] / bv[j]; });
          break;
      }
    }
    if (t.requires_grad(ib)) {
      T* gb = t.grad(ib).data();
      switch (kind) {
        case BinaryKind::kAdd:
          for_each_broadcast(p, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] += g[o]; });
          break;
        case BinaryKind::kSub:
          for_each_broadcast(p, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] -= g[o]; });
          break;
        case BinaryKind::kMul:
          for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * av[i]; });
          break;
        case BinaryKind::kDiv:
          for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t j) {
            gb[j] -= g[o] * av[i] / (bv[j] * bv[j]);
          });
          break;
      }
    }
  });
}

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, const char* op, F f, D dfdx) {
  Tensor<T> out(x.shape());
  const auto xv = x.value().values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, op, [ix, dfdx](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).values();
    const auto xv = t.value(ix).values();
    const auto yv = t.value(self).values();
    auto gx = t.grad(ix).values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void require_rank(const Var<T>& x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(x.shape()));
  }
}

}  // namespace

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinaryKind::kMul, "mul"); }
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinaryKind::kDiv, "div"); }

template <typename T>
Var<T> neg(const Var<T>& x) {
  return unary(x, "neg", [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary(x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T offset) {
  return unary(x, "add_scalar", [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(x, "sigmoid", [](T v) { return stable_sigmoid(v); },
               [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return unary(
      x, "softplus",
      [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: shape mismatch " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out(Shape{m, n});
  gemm(a.value().data(), b.value().data(), out.data(), m, k, n, false, false, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, "matmul", [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    if (t.requires_grad(ia)) gemm(g, t.value(ib).data(), t.grad(ia).data(), m, n, k, false, true, true);
    if (t.requires_grad(ib)) gemm(t.value(ia).data(), g, t.grad(ib).data(), k, m, n, true, false, true);
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor<T> out(Shape{c, r});
  const auto& v = x.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = v.at(i, j);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "transpose", [ix, r, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += g.at(j, i);
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "reshape", [ix](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).values();
    auto gx = t.grad(ix).values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> broadcast_to(const Var<T>& x, Shape shape) {
  auto p = plan_broadcast(x.shape(), shape, "broadcast_to");
  if (p.out != shape) {
    throw ShapeError("broadcast_to: cannot expand " + shape_string(x.shape()) + " to " +
                     shape_string(shape));
  }
  Tensor<T> out(p.out);
  const T* xv = x.value().data();
  T* ov = out.data();
  for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t) { ov[o] = xv[i]; });
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "broadcast_to", [ix, p = std::move(p)](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    T* gx = t.grad(ix).data();
    for_each_broadcast(p, [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += g[o]; });
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  if (axis >= in.size() || start + length > in[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " out of bounds for " + shape_string(in));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t extent = in[axis];
  Shape shape = in;
  shape[axis] = length;
  Tensor<T> out(shape);
  const T* xv = x.value().data();
  T* ov = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv + (o * extent + start) * inner, length * inner, ov + o * length * inner);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "slice",
                         [ix, outer, inner, extent, start, length](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    T* gx = t.grad(ix).data();
    for (std::size_t o = 0; o < outer; ++o) {
      T* dst = gx + (o * extent + start) * inner;
      const T* src = g + o * length * inner;
      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shape mismatch " + shape_string(first) + " vs " + shape_string(s));
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape shape = first;
  shape[axis] = total;
  Tensor<T> out(shape);
  std::vector<std::size_t> ids, extents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t e = p.shape()[axis];
    const T* src = p.value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * e * inner, e * inner, out.data() + (o * total + offset) * inner);
    }
    ids.push_back(p.id());
    extents.push_back(e);
    offset += e;
  }
  return parts[0].tape().record(std::move(out), parts, "concat",
                                [ids, extents, outer, inner, total](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t e = extents[k];
      if (t.requires_grad(ids[k])) {
        T* gx = t.grad(ids[k]).data();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g + (o * total + offset) * inner;
          T* dst = gx + o * e * inner;
          for (std::size_t i = 0; i < e * inner; ++i) dst[i] += src[i];
        }
      }
      offset += e;
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  Tensor<T> out(Shape{rows.size(), d});
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range");
    std::copy_n(x.value().data() + idx[r] * d, d, out.data() + r * d);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "gather_rows", [ix, d, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    T* gx = t.grad(ix).data();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) gx[idx[r] * d + c] += g[r * d + c];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor<T>::scalar(total), {x}, "sum", [ix](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (T& v : t.grad(ix).values()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> masked_fill(const Var<T>& x, const Tensor<T>& mask, T fill) {
  if (mask.shape() != x.shape()) {
    throw ShapeError("masked_fill: shape mismatch " + shape_string(x.shape()) + " vs mask " +
                     shape_string(mask.shape()));
  }
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] != T(0)) out[i] = fill;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "masked_fill", [ix, mask](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).values();
    auto gx = t.grad(ix).values();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask[i] == T(0)) gx[i] += g[i];
  });
}

namespace {

template <typename T>
Var<T> softmax_impl(const Var<T>& x, const Tensor<T>* mask) {
  if (x.shape().empty()) throw ShapeError("softmax: scalar input");
  if (mask && mask->shape() != x.shape()) {
    throw ShapeError("softmax: shape mismatch " + shape_string(x.shape()) + " vs mask " +
                     shape_string(mask->shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.size() / cols : 0;
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  T* ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv + r * cols;
    T* o = ov + r * cols;
    const T* m = mask ? mask->data() + r * cols : nullptr;
    T hi = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (!m || m[c] != T(0)) hi = std::max(hi, in[c]);
    if (hi == -std::numeric_limits<T>::infinity()) continue;
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = (!m || m[c] != T(0)) ? std::exp(in[c] - hi) : T(0);
      z += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "softmax", [ix, rows, cols](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    const T* y = t.value(self).data();
    T* gx = t.grad(ix).data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

}  // namespace

template <typename T> Var<T> softmax(const Var<T>& x) { return softmax_impl(x, static_cast<const Tensor<T>*>(nullptr)); }
template <typename T> Var<T> softmax(const Var<T>& x, const Tensor<T>& mask) { return softmax_impl(x, &mask); }

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  if (x.shape().empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: shape mismatch " + shape_string(x.shape()) + " vs gain " +
                     shape_string(gain.shape()));
  }
  const std::size_t rows = d ? x.size() / d : 0;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(rows);
  const T* xv = x.value().data();
  const T* gv = gain.value().data();
  const T* bv = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv + r * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (in[c] - mu) * rstd[r];
      xhat[r * d + c] = h;
      out.data()[r * d + c] = h * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, gain, bias}, "layer_norm",
                         [ix, ig, ib, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    const T* gv = t.value(ig).data();
    if (t.requires_grad(ix)) {
      T* gx = t.grad(ix).data();
      for (std::size_t r = 0; r < rows; ++r) {
        T m1 = 0, m2 = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = g[r * d + c] * gv[c];
          m1 += dh;
          m2 += dh * xhat[r * d + c];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = g[r * d + c] * gv[c];
          gx[r * d + c] += rstd[r] * (dh - m1 - xhat[r * d + c] * m2);
        }
      }
    }
    if (t.requires_grad(ig)) {
      T* gg = t.grad(ig).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * xhat[r * d + c];
    }
    if (t.requires_grad(ib)) {
      T* gb = t.grad(ib).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T rate, std::mt19937_64& rng) {
  if (rate <= T(0)) return x;
  if (rate >= T(1)) throw std::invalid_argument("dropout: rate must be below 1");
  const T keep_scale = T(1) / (T(1) - rate);
  std::vector<T> mask(x.size());
  // 53-bit uniform in [0, 1), independent of the standard library's
  // distribution implementation.
  for (auto& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < static_cast<double>(rate) ? T(0) : keep_scale;
  }
  Tensor<T> out(x.shape());
  const auto xv = x.value().values();
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = xv[i] * mask[i];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "dropout", [ix, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).values();
    auto gx = t.grad(ix).values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  Tensor<T> out(Shape{ids.size(), d});
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  for (std::size_t r = 0; r < idv.size(); ++r) {
    if (idv[r] < 0 || static_cast<std::size_t>(idv[r]) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(idv[r]) + " outside table " +
                       shape_string(table.shape()));
    }
    std::copy_n(table.value().data() + static_cast<std::size_t>(idv[r]) * d, d, out.data() + r * d);
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {table}, "embedding", [it, d, idv = std::move(idv)](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    T* gt = t.grad(it).data();
    for (std::size_t r = 0; r < idv.size(); ++r) {
      T* dst = gt + static_cast<std::size_t>(idv[r]) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += g[r * d + c];
    }
  });
}

template <typename T>
Var<T> unfold(const Var<T>& x, std::size_t width, std::span<const std::size_t> segment_lengths) {
  require_rank(x, 2, "unfold");
  if (width % 2 == 0) throw ShapeError("unfold: window width must be odd, got " + std::to_string(width));
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::size_t covered = 0;
  for (auto len : segment_lengths) covered += len;
  if (covered != n) {
    throw ShapeError("unfold: segments cover " + std::to_string(covered) + " rows of " +
                     shape_string(x.shape()));
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(width / 2);
  // source row for (row, tap), or -1 for padding
  std::vector<std::ptrdiff_t> src(n * width, -1);
  std::size_t begin = 0;
  for (auto len : segment_lengths) {
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t tap = 0; tap < width; ++tap) {
        const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(tap) - half;
        if (j >= 0 && j < static_cast<std::ptrdiff_t>(len)) {
          src[(begin + i) * width + tap] = static_cast<std::ptrdiff_t>(begin) + j;
        }
      }
    }
    begin += len;
  }
  Tensor<T> out(Shape{n, width * d});
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t tap = 0; tap < width; ++tap)
      if (src[r * width + tap] >= 0)
        std::copy_n(xv + static_cast<std::size_t>(src[r * width + tap]) * d, d, out.data() + (r * width + tap) * d);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "unfold", [ix, n, d, width, src = std::move(src)](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data();
    T* gx = t.grad(ix).data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t tap = 0; tap < width; ++tap) {
        const std::ptrdiff_t s = src[r * width + tap];
        if (s < 0) continue;
        const T* from = g + (r * width + tap) * d;
        T* to = gx + static_cast<std::size_t>(s) * d;
        for (std::size_t c = 0; c < d; ++c) to[c] += from[c];
      }
  });
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              std::span<const std::size_t> segment_lengths) {
  require_rank(x, 2, "conv1d");
  require_rank(weight, 2, "conv1d");
  const std::size_t d_in = x.shape()[1];
  if (d_in == 0 || weight.shape()[0] % d_in != 0) {
    throw ShapeError("conv1d: shape mismatch " + shape_string(x.shape()) + " vs weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t width = weight.shape()[0] / d_in;
  return add(matmul(unfold(x, width, segment_lengths), weight), bias);
}

template <typename T>
Var<T> window_max(const Var<T>& x) {
  const std::size_t m = x.size();
  Tensor<T> out(Shape{m, m});
  std::vector<std::size_t> arg(m * m, 0);
  const T* xv = x.value().data();
  for (std::size_t a = 0; a < m; ++a) {
    std::size_t best = a;
    for (std::size_t b = a; b < m; ++b) {
      if (xv[b] > xv[best]) best = b;
      out.at(a, b) = xv[best];
      arg[a * m + b] = best;
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, "window_max", [ix, m, arg = std::move(arg)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    T* gx = t.grad(ix).data();
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a; b < m; ++b) gx[arg[a * m + b]] += g.at(a, b);
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: shape mismatch " + shape_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (n == 0) throw ShapeError("cross_entropy: no rows");
  std::vector<T> probs(n * v);
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  T loss = 0;
  const T* lv = logits.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v) {
      throw ShapeError("cross_entropy: target " + std::to_string(tgt[r]) + " outside " + std::to_string(v) + " classes");
    }
    const T* row = lv + r * v;
    const T hi = *std::max_element(row, row + v);
    T z = 0;
    for (std::size_t c = 0; c < v; ++c) {
      probs[r * v + c] = std::exp(row[c] - hi);
      z += probs[r * v + c];
    }
    for (std::size_t c = 0; c < v; ++c) probs[r * v + c] /= z;
    loss += -(row[tgt[r]] - hi - std::log(z));
  }
  loss /= static_cast<T>(n);
  const std::size_t il = logits.id();
  return logits.tape().record(Tensor<T>::scalar(loss), {logits}, "cross_entropy",
                              [il, n, v, probs = std::move(probs), tgt = std::move(tgt)](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0] / static_cast<T>(n);
    T* gl = t.grad(il).data();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < v; ++c) gl[r * v + c] += g * probs[r * v + c];
      gl[r * v + static_cast<std::size_t>(tgt[r])] -= g;
    }
  });
}

#define STRUCTLAB_INSTANTIATE_AD(T)                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                         \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                         \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                         \
  template Var<T> div(const Var<T>&, const Var<T>&);                                         \
  template Var<T> neg(const Var<T>&);                                                        \
  template Var<T> scale(const Var<T>&, T);                                                   \
  template Var<T> add_scalar(const Var<T>&, T);                                              \
  template Var<T> tanh(const Var<T>&);                                                       \
  template Var<T> sigmoid(const Var<T>&);                                                    \
  template Var<T> exp(const Var<T>&);                                                        \
  template Var<T> log(const Var<T>&);                                                        \
  template Var<T> relu(const Var<T>&);                                                       \
  template Var<T> softplus(const Var<T>&);                                                   \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                      \
  template Var<T> transpose(const Var<T>&);                                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                             \
  template Var<T> broadcast_to(const Var<T>&, Shape);                                        \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);               \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                              \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                  \
  template Var<T> sum(const Var<T>&);                                                        \
  template Var<T> mean(const Var<T>&);                                                       \
  template Var<T> masked_fill(const Var<T>&, const Tensor<T>&, T);                           \
  template Var<T> softmax(const Var<T>&);                                                    \
  template Var<T> softmax(const Var<T>&, const Tensor<T>&);                                  \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                \
  template Var<T> dropout(const Var<T>&, T, std::mt19937_64&);                               \
  template Var<T> embedding(const Var<T>&, std::span<const std::int32_t>);                   \
  template Var<T> unfold(const Var<T>&, std::size_t, std::span<const std::size_t>);          \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, const Var<T>&,                        \
                         std::span<const std::size_t>);                                      \
  template Var<T> window_max(const Var<T>&);                                                 \
  template Var<T> cross_entropy(const Var<T>&, std::span<const std::int32_t>);

STRUCTLAB_INSTANTIATE_AD(float)
STRUCTLAB_INSTANTIATE_AD(double)

#undef STRUCTLAB_INSTANTIATE_AD

}  // namespace ad

template class Tape<float>;
template class Tape<double>;

}  // namespace structlab
