#include "structlab/dependency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace structlab::depdist {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_token(std::size_t i, std::size_t n, const char* op) {
  if (i >= n) {
    throw std::out_of_range(std::string(op) + ": token " + std::to_string(i) + " outside sentence of " +
                            std::to_string(n));
  }
}

void check_temperature(double mu, const char* op) {
  if (!(mu > 0)) throw std::invalid_argument(std::string(op) + ": temperature must be positive");
}

}  // namespace

double cdf_height_gt(double delta_i, double tau_k, double mu1) {
  check_temperature(mu1, "cdf_height_gt");
  if (std::isinf(tau_k)) return tau_k > 0 ? 0.0 : 1.0;
  return sigmoid((delta_i - tau_k) / mu1);
}

std::vector<double> left_boundary_dist(std::size_t i, std::span<const double> tau, double delta_i,
                                       double mu1) {
  const std::size_t n = tau.size() + 1;
  check_token(i, n, "left_boundary_dist");
  check_temperature(mu1, "left_boundary_dist");
  // inside[l] = P(l in C(x_i)); inside[i] = 1 and the left boundary gives 0.
  std::vector<double> inside(i + 1, 1.0);
  double running = -std::numeric_limits<double>::infinity();
  for (std::size_t l = i; l-- > 0;) {
    running = std::max(running, tau[l]);
    inside[l] = cdf_height_gt(delta_i, running, mu1);
  }
  std::vector<double> p(i + 1);
  for (std::size_t l = 0; l <= i; ++l) p[l] = inside[l] - (l == 0 ? 0.0 : inside[l - 1]);
  return p;
}

std::vector<double> right_boundary_dist(std::size_t i, std::span<const double> tau, double delta_i,
                                        double mu1) {
  const std::size_t n = tau.size() + 1;
  check_token(i, n, "right_boundary_dist");
  check_temperature(mu1, "right_boundary_dist");
  std::vector<double> inside(n - i, 1.0);  // inside[r - i]
  double running = -std::numeric_limits<double>::infinity();
  for (std::size_t r = i + 1; r < n; ++r) {
    running = std::max(running, tau[r - 1]);
    inside[r - i] = cdf_height_gt(delta_i, running, mu1);
  }
  std::vector<double> p(n - i);
  for (std::size_t r = i; r < n; ++r) {
    p[r - i] = inside[r - i] - (r + 1 < n ? inside[r + 1 - i] : 0.0);
  }
  return p;
}

Tensor<double> constituent_dist(std::size_t i, std::span<const double> tau,
                                std::span<const double> delta, double mu1) {
  const std::size_t n = delta.size();
  if (tau.size() + 1 != n) throw std::invalid_argument("constituent_dist: tau/delta length mismatch");
  check_token(i, n, "constituent_dist");
  const auto pl = left_boundary_dist(i, tau, delta[i], mu1);
  const auto pr = right_boundary_dist(i, tau, delta[i], mu1);
  Tensor<double> c(Shape{n, n});
  for (std::size_t l = 0; l <= i; ++l)
    for (std::size_t r = i; r < n; ++r) c.at(l, r) = pl[l] * pr[r - i];
  return c;
}

std::vector<double> span_parent_dist(std::size_t l, std::size_t r, std::span<const double> delta,
                                     double mu2) {
  const std::size_t n = delta.size();
  if (l > r || r >= n) {
    throw std::out_of_range("span_parent_dist: span [" + std::to_string(l) + ", " + std::to_string(r) +
                            "] invalid for " + std::to_string(n) + " tokens");
  }
  check_temperature(mu2, "span_parent_dist");
  std::vector<double> p(n, 0.0);
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t j = l; j <= r; ++j) hi = std::max(hi, delta[j] / mu2);
  double z = 0;
  for (std::size_t j = l; j <= r; ++j) {
    p[j] = std::exp(delta[j] / mu2 - hi);
    z += p[j];
  }
  for (std::size_t j = l; j <= r; ++j) p[j] /= z;
  return p;
}

DependencyDistribution parent_dist(std::span<const double> tau, std::span<const double> delta,
                                   double mu1, double mu2) {
  const std::size_t n = delta.size();
  if (n == 0) throw std::invalid_argument("parent_dist: empty sentence");
  if (tau.size() + 1 != n) throw std::invalid_argument("parent_dist: tau/delta length mismatch");
  check_temperature(mu1, "parent_dist");
  check_temperature(mu2, "parent_dist");
  DependencyDistribution out{Tensor<double>(Shape{n, n}), mu1, mu2};
  if (n == 1) return out;

  // Span softmaxes, head[(l * n + r) * n + j].
  std::vector<double> head(n * n * n, 0.0);
  for (std::size_t l = 0; l < n; ++l)
    for (std::size_t r = l; r < n; ++r) {
      const auto p = span_parent_dist(l, r, delta, mu2);
      std::copy(p.begin(), p.end(), head.begin() + static_cast<std::ptrdiff_t>((l * n + r) * n));
    }

  for (std::size_t i = 0; i < n; ++i) {
    const auto pl = left_boundary_dist(i, tau, delta[i], mu1);
    const auto pr = right_boundary_dist(i, tau, delta[i], mu1);
    for (std::size_t l = 0; l <= i; ++l) {
      for (std::size_t r = i; r < n; ++r) {
        const double w = pl[l] * pr[r - i];
        if (w == 0.0) continue;
        const double* h = head.data() + (l * n + r) * n;
        for (std::size_t j = l; j <= r; ++j) out.probs.at(i, j) += w * h[j];
      }
    }
    out.probs.at(i, i) = 0.0;
  }
  return out;
}

std::vector<std::size_t> decode_parents(const Tensor<double>& probs) {
  if (probs.rank() != 2 || probs.dim(0) != probs.dim(1)) {
    throw std::invalid_argument("decode_parents: expected a square matrix, got " + shape_string(probs.shape()));
  }
  const std::size_t n = probs.dim(0);
  std::vector<std::size_t> parents(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (best == n || probs.at(i, j) > probs.at(i, best)) best = j;
    }
    parents[i] = best == n ? i : best;
  }
  return parents;
}

std::vector<std::size_t> decode_parents(const DependencyDistribution& dist) {
  return decode_parents(dist.probs);
}

template <typename T>
Var<T> parent_distribution(const Var<T>& tau, const Var<T>& delta, const Var<T>& mu1,
                           const Var<T>& mu2) {
  Tape<T>& tape = delta.tape();
  const std::size_t n = delta.size();
  if (n == 0) throw ShapeError("parent_distribution: empty sentence");
  if (tau.size() + 1 != n) {
    throw ShapeError("parent_distribution: shape mismatch tau " + shape_string(tau.shape()) +
                     " vs delta " + shape_string(delta.shape()));
  }
  if (mu1.size() != 1 || mu2.size() != 1) throw ShapeError("parent_distribution: temperatures must be scalars");
  if (n == 1) return tape.constant(Tensor<T>(Shape{1, 1}));

  const std::size_t m = n - 1;
  const auto zeros = [&](std::size_t r, std::size_t c) { return tape.constant(Tensor<T>(Shape{r, c})); };
  const auto cat = [](std::initializer_list<Var<T>> parts, std::size_t axis) {
    return ad::concat<T>(std::span<const Var<T>>(parts.begin(), parts.size()), axis);
  };

  Tensor<T> inside_left(Shape{n, n});   // l >= i: always inside
  Tensor<T> inside_right(Shape{n, n});  // r <= i: always inside
  Tensor<T> diagonal(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      inside_left.at(i, j) = j >= i ? T(1) : T(0);
      inside_right.at(i, j) = j <= i ? T(1) : T(0);
    }
    diagonal.at(i, i) = T(1);
  }

  // window[a][b] = max(tau[a..b]).
  const Var<T> window = ad::window_max(ad::reshape(tau, Shape{m}));
  const Var<T> heights = ad::reshape(delta, Shape{n, 1});

  // left_max[i][l] = max(tau[l..i-1]) for l < i.
  const Var<T> left_max = cat({cat({zeros(1, m), ad::transpose(window)}, 0), zeros(n, 1)}, 1);
  const Var<T> left_inside = ad::masked_fill(
      ad::sigmoid(ad::div(ad::sub(heights, left_max), mu1)), inside_left, T(1));
  const Var<T> p_left = ad::sub(left_inside, cat({zeros(n, 1), ad::slice(left_inside, 1, 0, m)}, 1));

  // right_max[i][r] = max(tau[i..r-1]) for r > i.
  const Var<T> right_max = cat({cat({zeros(m, 1), window}, 1), zeros(1, n)}, 0);
  const Var<T> right_inside = ad::masked_fill(
      ad::sigmoid(ad::div(ad::sub(heights, right_max), mu1)), inside_right, T(1));
  const Var<T> p_right = ad::sub(right_inside, cat({ad::slice(right_inside, 1, 1, m), zeros(n, 1)}, 1));

  // block[i][l][r] = p(l|i) p(r|i)
  const Var<T> block = ad::reshape(
      ad::mul(ad::reshape(p_left, Shape{n, n, 1}), ad::reshape(p_right, Shape{n, 1, n})), Shape{n, n * n});

  // head[l][r][j] = softmax over j in [l, r] of delta_j / mu2
  Tensor<T> span_mask(Shape{n, n, n});
  for (std::size_t l = 0; l < n; ++l)
    for (std::size_t r = l; r < n; ++r)
      for (std::size_t j = l; j <= r; ++j) span_mask[(l * n + r) * n + j] = T(1);
  const Var<T> logits = ad::broadcast_to(ad::div(ad::reshape(delta, Shape{n}), mu2), Shape{n, n, n});
  const Var<T> head = ad::reshape(ad::softmax(logits, span_mask), Shape{n * n, n});

  return ad::masked_fill(ad::matmul(block, head), diagonal, T(0));
}

template Var<float> parent_distribution(const Var<float>&, const Var<float>&, const Var<float>&,
                                        const Var<float>&);
template Var<double> parent_distribution(const Var<double>&, const Var<double>&, const Var<double>&,
                                         const Var<double>&);

}  // namespace structlab::depdist
