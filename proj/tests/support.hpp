#pragma once

// Independent oracles shared by the unit tests and the acceptance runner:
// central finite differences, brute-force dependency distributions written
// straight from the running-max definitions, and exhaustive span scans.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "structlab/autodiff.hpp"
#include "structlab/grammar.hpp"
#include "structlab/parameters.hpp"

namespace structlab::testing {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Scalar functional of some input leaves, rebuilt on a fresh tape per call.
using Functional = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheck {
  double rel_error = 0;   // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  bool near_kink = false; // numeric gradients at h and h/10 disagree
};

inline double norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double norm(const std::vector<double>& a) {
  double s = 0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

inline double relative(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-7) {
  return norm_diff(a, b) / std::max({norm(a), norm(b), floor});
}

/// Central differences of f around `inputs` for every coordinate.
inline std::vector<double> numeric_gradient(const Functional& f, std::vector<Tensor<double>> inputs, double h) {
  const auto eval = [&]() {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
  };
  std::vector<double> out;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double x = t[i];
      t[i] = x + h;
      const double up = eval();
      t[i] = x - h;
      const double down = eval();
      t[i] = x;
      out.push_back((up - down) / (2 * h));
    }
  }
  return out;
}

inline std::vector<double> analytic_gradient(const Functional& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(f(tape, vars));
  std::vector<double> out;
  for (const auto& v : vars) {
    const auto& g = tape.grad(v.id());
    out.insert(out.end(), g.values().begin(), g.values().end());
  }
  return out;
}

/// Compares the tape gradient with central differences. A kink is flagged
/// when the numeric gradients at steps h and h/10 disagree by more than
/// `kink_tol`; that comparison never involves the analytic gradient.
inline GradCheck check_gradient(const Functional& f, const std::vector<Tensor<double>>& inputs, double h = 1e-5,
                                double kink_tol = 1e-4) {
  const auto analytic = analytic_gradient(f, inputs);
  const auto numeric = numeric_gradient(f, inputs, h);
  GradCheck r;
  r.rel_error = relative(analytic, numeric);
  if (r.rel_error > kink_tol) {
    const auto fine = numeric_gradient(f, inputs, h / 10);
    r.near_kink = relative(numeric, fine) > kink_tol;
  }
  return r;
}

/// Same check over the values of model parameters; `loss` reads them
/// through tape.parameter().
template <typename Loss>
GradCheck check_parameter_gradient(ParameterStore<double>& store, Loss loss, double h = 1e-5,
                                   double kink_tol = 1e-4) {
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  std::vector<double> analytic;
  for (const auto& p : store.all()) analytic.insert(analytic.end(), p.grad.values().begin(), p.grad.values().end());
  const auto numeric_at = [&](double step) {
    std::vector<double> out;
    for (auto& p : store.all()) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double x = p.value[i];
        p.value[i] = x + step;
        Tape<double> up_tape(false);
        const double up = loss(up_tape).value().item();
        p.value[i] = x - step;
        Tape<double> down_tape(false);
        const double down = loss(down_tape).value().item();
        p.value[i] = x;
        out.push_back((up - down) / (2 * step));
      }
    }
    return out;
  };
  const auto numeric = numeric_at(h);
  GradCheck r;
  r.rel_error = relative(analytic, numeric);
  if (r.rel_error > kink_tol) r.near_kink = relative(numeric, numeric_at(h / 10)) > kink_tol;
  return r;
}

/// sum(x * R) for a fixed random R, so every output element matters.
inline Var<double> probe(const Var<double>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto r = normal_tensor<double>(x.shape(), 1.0, rng);
  return ad::sum(ad::mul(x, x.tape().constant(std::move(r))));
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return normal_tensor<double>(std::move(shape), scale, rng);
}

/// n distinct values: a shuffled grid 0..n-1 scaled by `gap` plus jitter
/// below gap/4, so ranks are random and neighbours stay separated.
inline std::vector<double> distinct_values(std::size_t n, std::mt19937_64& rng, double gap = 1.0) {
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  std::uniform_real_distribution<double> jitter(-gap / 4, gap / 4);
  for (double& x : v) x = x * gap + jitter(rng);
  return v;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// P(height > t); boundaries at +infinity give 0, an empty maximum gives 1.
inline double above(double delta, double t, double mu1) {
  if (t == kInf) return 0.0;
  if (t == -kInf) return 1.0;
  return sigmoid((delta - t) / mu1);
}

/// max(tau[a..b]) with out-of-range indices read as +infinity and an empty
/// range as -infinity; every call rescans the range.
inline double range_max(const std::vector<double>& tau, long a, long b) {
  double m = -kInf;
  for (long k = a; k <= b; ++k) {
    const double v = (k < 0 || k >= static_cast<long>(tau.size())) ? kInf : tau[static_cast<std::size_t>(k)];
    m = std::max(m, v);
  }
  return m;
}

/// p(l | i): the height clears every distance inside [l, i] but not the one
/// just left of l.
inline std::vector<double> brute_left(std::size_t i, const std::vector<double>& tau, double delta, double mu1) {
  std::vector<double> p(i + 1);
  for (long l = 0; l <= static_cast<long>(i); ++l) {
    const double inner = range_max(tau, l, static_cast<long>(i) - 1);
    const double outer = range_max(tau, l - 1, static_cast<long>(i) - 1);
    p[static_cast<std::size_t>(l)] = above(delta, inner, mu1) - above(delta, outer, mu1);
  }
  return p;
}

inline std::vector<double> brute_right(std::size_t i, const std::vector<double>& tau, double delta, double mu1) {
  const std::size_t n = tau.size() + 1;
  std::vector<double> p(n - i);
  for (long r = static_cast<long>(i); r < static_cast<long>(n); ++r) {
    const double inner = range_max(tau, static_cast<long>(i), r - 1);
    const double outer = range_max(tau, static_cast<long>(i), r);
    p[static_cast<std::size_t>(r) - i] = above(delta, inner, mu1) - above(delta, outer, mu1);
  }
  return p;
}

/// p_D(j | i) summed over every span containing both tokens.
inline std::vector<std::vector<double>> brute_parent(const std::vector<double>& tau, const std::vector<double>& delta,
                                                     double mu1, double mu2) {
  const std::size_t n = delta.size();
  std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const auto left = brute_left(i, tau, delta[i], mu1);
    const auto right = brute_right(i, tau, delta[i], mu1);
    for (std::size_t l = 0; l <= i; ++l) {
      for (std::size_t r = i; r < n; ++r) {
        const double pc = left[l] * right[r - i];
        double z = 0;
        for (std::size_t k = l; k <= r; ++k) z += std::exp(delta[k] / mu2);
        for (std::size_t j = l; j <= r; ++j) {
          if (j != i) p[i][j] += pc * std::exp(delta[j] / mu2) / z;
        }
      }
    }
  }
  return p;
}

/// Isolation margin of every span except the whole sentence.
inline double brute_max_isolation(const std::vector<double>& tau, const std::vector<double>& delta) {
  const std::size_t n = delta.size();
  double best = 0;
  for (std::size_t l = 0; l < n; ++l) {
    for (std::size_t r = l; r < n; ++r) {
      if (l == 0 && r + 1 == n) continue;
      const double h = *std::max_element(delta.begin() + static_cast<long>(l), delta.begin() + static_cast<long>(r) + 1);
      const double left = l == 0 ? kInf : tau[l - 1];
      const double right = r + 1 == n ? kInf : tau[r];
      best = std::max(best, std::min(left - h, right - h));
    }
  }
  return best;
}

/// Parents by the discrete rules: split at the leftmost maximal distance,
/// the higher head of the two halves wins, ties keep the left head.
inline std::size_t discrete_heads(const std::vector<double>& tau, const std::vector<double>& delta, std::size_t l,
                                  std::size_t r, std::vector<int>& parent) {
  if (l == r) return l;
  std::size_t k = l;
  for (std::size_t s = l; s < r; ++s) {
    if (tau[s] > tau[k]) k = s;
  }
  const std::size_t a = discrete_heads(tau, delta, l, k, parent);
  const std::size_t b = discrete_heads(tau, delta, k + 1, r, parent);
  if (delta[b] > delta[a]) {
    parent[a] = static_cast<int>(b);
    return b;
  }
  parent[b] = static_cast<int>(a);
  return a;
}

/// Distances and heights that encode a random tree with a random head
/// choice at every node: each losing head sits just above the distance of
/// the node where it attaches, so attachment order follows tree depth.
struct Consistent {
  std::vector<double> tau, delta;
};

inline std::size_t assign_heads(const grammar::ConstituencyTree& t, int id, const std::vector<double>& tau,
                         std::vector<double>& delta, std::mt19937_64& rng) {
  const auto& node = t.node(id);
  if (node.is_leaf()) return node.start;
  const std::size_t a = assign_heads(t, node.left, tau, delta, rng);
  const std::size_t b = assign_heads(t, node.right, tau, delta, rng);
  const double split = tau[t.node(node.left).end];
  const bool left_wins = rng() & 1;
  delta[left_wins ? b : a] = split + 0.1;
  return left_wins ? a : b;
}

inline Consistent consistent_instance(std::size_t n, std::mt19937_64& rng) {
  Consistent c;
  c.tau = distinct_values(n - 1, rng);
  c.delta.assign(n, 0.0);
  const auto tree = grammar::distance_to_tree(n, c.tau);
  const std::size_t root = assign_heads(tree, tree.root(), c.tau, c.delta, rng);
  c.delta[root] = static_cast<double>(n) + 1.0;
  return c;
}

}  // namespace structlab::testing
