#pragma once

// Soft parent distribution p_D(j|i) derived from syntactic distances and
// heights, and its hard decoding.
//
// Conventions: tokens 0..n-1, tau has n-1 entries (tau[k] separates tokens k
// and k+1) and both sentence boundaries count as +infinity. A token i belongs
// to a constituent [l, r] with l <= i <= r; its smallest legal constituent is
// bounded by the first distances on each side that exceed its height.

#include <cstddef>
#include <span>
#include <vector>

#include "structlab/autodiff.hpp"
#include "structlab/tensor.hpp"

namespace structlab::depdist {

struct DependencyDistribution {
  Tensor<double> probs;  // n x n, probs.at(i, j) = p_D(j | i)
  double mu1 = 1.0;
  double mu2 = 1.0;

  std::size_t size() const { return probs.empty() ? 0 : probs.dim(0); }
  double operator()(std::size_t i, std::size_t j) const { return probs.at(i, j); }
};

/// P(height of token > tau_k) = sigmoid((delta_i - tau_k) / mu1); 0 when tau_k
/// is +infinity.
double cdf_height_gt(double delta_i, double tau_k, double mu1);

/// p(l | i) for l = 0..i (size i+1). Sums to 1.
std::vector<double> left_boundary_dist(std::size_t i, std::span<const double> tau, double delta_i,
                                       double mu1);

/// p(r | i) for r = i..n-1 (size n-i). Sums to 1.
std::vector<double> right_boundary_dist(std::size_t i, std::span<const double> tau, double delta_i,
                                        double mu1);

/// p_C([l, r] | i) as an n x n matrix indexed (l, r); zero unless l <= i <= r.
Tensor<double> constituent_dist(std::size_t i, std::span<const double> tau,
                                std::span<const double> delta, double mu1);

/// p_Pr(j | [l, r]) for j = 0..n-1: softmax of delta_j / mu2 inside the span.
std::vector<double> span_parent_dist(std::size_t l, std::size_t r, std::span<const double> delta,
                                     double mu2);

/// Full parent distribution with zero diagonal. O(n^4) time, O(n^2) memory.
DependencyDistribution parent_dist(std::span<const double> tau, std::span<const double> delta,
                                   double mu1, double mu2);

/// argmax_{j != i} p_D(j | i) per row, leftmost on ties. A single token
/// decodes to itself.
std::vector<std::size_t> decode_parents(const DependencyDistribution& dist);
std::vector<std::size_t> decode_parents(const Tensor<double>& probs);

/// Differentiable p_D on a tape. tau has n-1 entries, delta n, mu1/mu2 hold
/// one positive value each. Built from window_max, sigmoid and a masked
/// softmax; the final contraction is an (n x n^2) . (n^2 x n) product, so
/// time is O(n^4) and memory O(n^3).
template <typename T>
Var<T> parent_distribution(const Var<T>& tau, const Var<T>& delta, const Var<T>& mu1,
                           const Var<T>& mu2);

}  // namespace structlab::depdist
