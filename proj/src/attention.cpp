#include "structlab/attention.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace structlab::attention {

RelationSet parse_relations(std::string_view text) {
  if (text == "parent+dep" || text == "dep+parent") return RelationSet::kParentAndDep;
  if (text == "parent") return RelationSet::kParent;
  if (text == "dep") return RelationSet::kDep;
  throw std::invalid_argument("unknown relation set '" + std::string(text) +
                              "' (expected parent, dep or parent+dep)");
}

std::string to_string(RelationSet relations) {
  switch (relations) {
    case RelationSet::kParent: return "parent";
    case RelationSet::kDep: return "dep";
    case RelationSet::kParentAndDep: break;
  }
  return "parent+dep";
}

RelationMix relation_mix(double w_parent, double w_dep) {
  // sigmoid of the difference, evaluated on the stable side
  const double diff = w_parent - w_dep;
  double parent;
  if (diff >= 0) {
    parent = 1.0 / (1.0 + std::exp(-diff));
  } else {
    const double e = std::exp(diff);
    parent = e / (1.0 + e);
  }
  return {parent, 1.0 - parent};
}

RelationMix effective_mix(RelationSet relations, double w_parent, double w_dep) {
  switch (relations) {
    case RelationSet::kParent: return {1.0, 0.0};
    case RelationSet::kDep: return {0.0, 1.0};
    case RelationSet::kParentAndDep: break;
  }
  return relation_mix(w_parent, w_dep);
}

template <typename T>
Var<T> propagation_prob(const Var<T>& parent_dist, const Var<T>& parent_dist_t,
                        const Var<T>& p_parent, const Var<T>& p_dep) {
  return ad::add(ad::mul(parent_dist, p_parent), ad::mul(parent_dist_t, p_dep));
}

template <typename T>
Var<T> attention_gate(const Var<T>& query, const Var<T>& key) {
  if (query.shape().size() != 2 || key.shape().size() != 2 || query.shape()[1] != key.shape()[1]) {
    throw ShapeError("attention_gate: shape mismatch " + shape_string(query.shape()) + " vs " +
                     shape_string(key.shape()));
  }
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(query.shape()[1]));
  return ad::sigmoid(ad::scale(ad::matmul(query, ad::transpose(key)), inv_sqrt));
}

template <typename T>
Var<T> constrained_attention(const Var<T>& query, const Var<T>& key, const Var<T>& value,
                             const Var<T>& propagation) {
  return ad::matmul(ad::mul(propagation, attention_gate(query, key)), value);
}

template <typename T>
Var<T> softmax_attention(const Var<T>& query, const Var<T>& key, const Var<T>& value) {
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(query.shape()[1]));
  return ad::matmul(ad::softmax(ad::scale(ad::matmul(query, ad::transpose(key)), inv_sqrt)), value);
}

template <typename T>
AttentionParams<T> AttentionParams<T>::create(ParameterStore<T>& store, std::size_t d_model,
                                              std::size_t heads, bool constrained,
                                              std::mt19937_64& rng, const std::string& prefix) {
  if (heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("attention: d_model " + std::to_string(d_model) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  const double std_in = 1.0 / std::sqrt(static_cast<double>(d_model));
  store.add(prefix + "qkv.weight", normal_tensor<T>(Shape{d_model, 3 * d_model}, std_in, rng));
  store.add(prefix + "qkv.bias", Tensor<T>(Shape{3 * d_model}));
  store.add(prefix + "out.weight", normal_tensor<T>(Shape{d_model, d_model}, std_in, rng));
  store.add(prefix + "out.bias", Tensor<T>(Shape{d_model}));
  // uniform parent/dependent mix at initialization
  if (constrained) store.add(prefix + "relations", Tensor<T>(Shape{heads, 2}));
  return bind(store, heads, constrained, prefix);
}

template <typename T>
AttentionParams<T> AttentionParams<T>::bind(ParameterStore<T>& store, std::size_t heads,
                                            bool constrained, const std::string& prefix) {
  AttentionParams p;
  p.heads = heads;
  p.qkv = &store.get(prefix + "qkv.weight");
  p.qkv_bias = &store.get(prefix + "qkv.bias");
  p.output = &store.get(prefix + "out.weight");
  p.output_bias = &store.get(prefix + "out.bias");
  if (constrained) p.relations = &store.get(prefix + "relations");
  return p;
}

template <typename T>
Var<T> multi_head(const Var<T>& x, std::span<const std::size_t> lengths,
                  std::span<const SentenceGraph<T>> graphs, const AttentionParams<T>& params,
                  RelationSet relations) {
  Tape<T>& tape = x.tape();
  const std::size_t d = x.shape()[1];
  const std::size_t heads = params.heads;
  const std::size_t dk = d / heads;
  const bool constrained = !graphs.empty();
  if (constrained && graphs.size() != lengths.size()) {
    throw ShapeError("multi_head: " + std::to_string(graphs.size()) + " graphs for " +
                     std::to_string(lengths.size()) + " sentences");
  }

  const Var<T> qkv = ad::add(ad::matmul(x, tape.parameter(*params.qkv)), tape.parameter(*params.qkv_bias));

  std::vector<Var<T>> p_parent(heads), p_dep(heads);
  if (constrained) {
    if (relations == RelationSet::kParentAndDep) {
      if (params.relations == nullptr) throw std::logic_error("multi_head: missing relation weights");
      const Var<T> mix = ad::softmax(tape.parameter(*params.relations));
      for (std::size_t h = 0; h < heads; ++h) {
        const Var<T> row = ad::slice(mix, 0, h, 1);
        p_parent[h] = ad::reshape(ad::slice(row, 1, 0, 1), Shape{1});
        p_dep[h] = ad::reshape(ad::slice(row, 1, 1, 1), Shape{1});
      }
    } else {
      const RelationMix forced = effective_mix(relations, 0, 0);
      const Var<T> pp = tape.constant(Tensor<T>(Shape{1}, static_cast<T>(forced.parent)));
      const Var<T> pd = tape.constant(Tensor<T>(Shape{1}, static_cast<T>(forced.dep)));
      for (std::size_t h = 0; h < heads; ++h) {
        p_parent[h] = pp;
        p_dep[h] = pd;
      }
    }
  }

  std::vector<Var<T>> sentences;
  sentences.reserve(lengths.size());
  std::size_t begin = 0;
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    const std::size_t n = lengths[b];
    const Var<T> rows = ad::slice(qkv, 0, begin, n);
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Var<T> q = ad::slice(rows, 1, h * dk, dk);
      const Var<T> k = ad::slice(rows, 1, d + h * dk, dk);
      const Var<T> v = ad::slice(rows, 1, 2 * d + h * dk, dk);
      if (constrained) {
        const Var<T> prop = propagation_prob(graphs[b].parent, graphs[b].parent_t, p_parent[h], p_dep[h]);
        outs.push_back(constrained_attention(q, k, v, prop));
      } else {
        outs.push_back(softmax_attention(q, k, v));
      }
    }
    sentences.push_back(heads == 1 ? outs[0] : ad::concat<T>(outs, 1));
    begin += n;
  }
  const Var<T> joined = sentences.size() == 1 ? sentences[0] : ad::concat<T>(sentences, 0);
  return ad::add(ad::matmul(joined, tape.parameter(*params.output)), tape.parameter(*params.output_bias));
}

#define STRUCTLAB_INSTANTIATE_ATTENTION(T)                                                        \
  template Var<T> propagation_prob(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);  \
  template Var<T> attention_gate(const Var<T>&, const Var<T>&);                                   \
  template Var<T> constrained_attention(const Var<T>&, const Var<T>&, const Var<T>&,              \
                                        const Var<T>&);                                           \
  template Var<T> softmax_attention(const Var<T>&, const Var<T>&, const Var<T>&);                 \
  template struct AttentionParams<T>;                                                             \
  template Var<T> multi_head(const Var<T>&, std::span<const std::size_t>,                         \
                             std::span<const SentenceGraph<T>>, const AttentionParams<T>&,        \
                             RelationSet);

STRUCTLAB_INSTANTIATE_ATTENTION(float)
STRUCTLAB_INSTANTIATE_ATTENTION(double)

}  // namespace structlab::attention
