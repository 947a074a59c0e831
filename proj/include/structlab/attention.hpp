#pragma once

// Dependency-constrained multi-head self-attention. Each head mixes the
// parent and dependent views of the soft dependency graph and gates every
// pair with an independent sigmoid score; there is no row normalization.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "structlab/autodiff.hpp"
#include "structlab/parameters.hpp"

namespace structlab::attention {

/// Which dependency relations the heads may use.
enum class RelationSet { kParentAndDep, kParent, kDep };

RelationSet parse_relations(std::string_view text);  // "parent+dep" | "parent" | "dep"
std::string to_string(RelationSet relations);

struct RelationMix {
  double parent = 0.5;
  double dep = 0.5;
};

/// Two-way softmax of per-head relation weights.
RelationMix relation_mix(double w_parent, double w_dep);

/// Mix forced by an ablation, or the learned softmax for kParentAndDep.
RelationMix effective_mix(RelationSet relations, double w_parent, double w_dep);

/// p[i][j] = mix.parent * P[i][j] + mix.dep * P[j][i]; mix vars hold one value.
template <typename T>
Var<T> propagation_prob(const Var<T>& parent_dist, const Var<T>& parent_dist_t,
                        const Var<T>& p_parent, const Var<T>& p_dep);

/// sigmoid(Q K^T / sqrt(d_k)).
template <typename T>
Var<T> attention_gate(const Var<T>& query, const Var<T>& key);

/// sum_j p[i][j] q[i][j] V[j].
template <typename T>
Var<T> constrained_attention(const Var<T>& query, const Var<T>& key, const Var<T>& value,
                             const Var<T>& propagation);

/// softmax(Q K^T / sqrt(d_k)) V, the unconstrained baseline.
template <typename T>
Var<T> softmax_attention(const Var<T>& query, const Var<T>& key, const Var<T>& value);

template <typename T>
struct AttentionParams {
  std::size_t heads = 8;
  Parameter<T>* qkv = nullptr;        // d x 3d, columns [Q | K | V]
  Parameter<T>* qkv_bias = nullptr;   // 3d
  Parameter<T>* output = nullptr;     // d x d
  Parameter<T>* output_bias = nullptr;
  Parameter<T>* relations = nullptr;  // heads x 2 (w_parent, w_dep); null in the baseline

  static AttentionParams create(ParameterStore<T>& store, std::size_t d_model, std::size_t heads,
                                bool constrained, std::mt19937_64& rng, const std::string& prefix);
  static AttentionParams bind(ParameterStore<T>& store, std::size_t heads, bool constrained,
                              const std::string& prefix);
};

/// Per-sentence soft graph and its transpose, shared by all layers.
template <typename T>
struct SentenceGraph {
  Var<T> parent;      // n x n, p_D(j | i)
  Var<T> parent_t;    // transpose
};

/// Multi-head attention over packed sentences (rows of x, segment lengths).
/// With graphs empty the heads use softmax attention.
template <typename T>
Var<T> multi_head(const Var<T>& x, std::span<const std::size_t> lengths,
                  std::span<const SentenceGraph<T>> graphs, const AttentionParams<T>& params,
                  RelationSet relations);

}  // namespace structlab::attention
