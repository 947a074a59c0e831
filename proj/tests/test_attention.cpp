#include <gtest/gtest.h>

#include "structlab/attention.hpp"
#include "structlab/dependency.hpp"
#include "support.hpp"

namespace structlab::attention {
namespace {

using V = std::vector<Var<double>>;

Tensor<double> random_parent_matrix(std::size_t n, std::mt19937_64& rng) {
  const auto tau = testing::distinct_values(n - 1, rng);
  const auto delta = testing::distinct_values(n, rng);
  return depdist::parent_dist(tau, delta, 0.7, 0.9).probs;
}

Tensor<double> transposed(const Tensor<double>& m) {
  Tensor<double> t({m.dim(1), m.dim(0)});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) t.at(j, i) = m.at(i, j);
  return t;
}

TEST(RelationMix, Values) {
  const auto even = relation_mix(0.3, 0.3);
  EXPECT_DOUBLE_EQ(even.parent, 0.5);
  EXPECT_DOUBLE_EQ(even.dep, 0.5);
  EXPECT_NEAR(relation_mix(10.0, 0.0).parent, 1.0 / (1.0 + std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(relation_mix(10.0, 0.0).parent, 0.99995, 1e-5);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 30.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = relation_mix(g(rng), g(rng));
    EXPECT_NEAR(m.parent + m.dep, 1.0, 1e-9);
  }
}

TEST(RelationMix, AblationsForceOneRelation) {
  EXPECT_EQ(effective_mix(RelationSet::kParent, -4.0, 9.0).parent, 1.0);
  EXPECT_EQ(effective_mix(RelationSet::kParent, -4.0, 9.0).dep, 0.0);
  EXPECT_EQ(effective_mix(RelationSet::kDep, 4.0, -9.0).dep, 1.0);
  EXPECT_EQ(parse_relations("parent+dep"), RelationSet::kParentAndDep);
  EXPECT_EQ(parse_relations("parent"), RelationSet::kParent);
  EXPECT_EQ(parse_relations("dep"), RelationSet::kDep);
  EXPECT_THROW(parse_relations("child"), std::invalid_argument);
  EXPECT_EQ(to_string(RelationSet::kParentAndDep), "parent+dep");
}

TEST(Propagation, MixesBothViews) {
  std::mt19937_64 rng(2);
  const auto p = random_parent_matrix(5, rng);
  const auto pt = transposed(p);
  const auto run = [&](double a, double b) {
    Tape<double> tape(false);
    return propagation_prob(tape.constant(p), tape.constant(pt), tape.constant(Tensor<double>({1}, a)),
                            tape.constant(Tensor<double>({1}, b)))
        .value();
  };
  const auto parent_only = run(1, 0), dep_only = run(0, 1), half = run(0.5, 0.5);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(parent_only.at(i, j), p.at(i, j));
      EXPECT_EQ(dep_only.at(i, j), p.at(j, i));
      EXPECT_DOUBLE_EQ(half.at(i, j), half.at(j, i));
      EXPECT_GE(half.at(i, j), 0.0);
      EXPECT_LE(half.at(i, j), 1.0);
    }
  }
}

TEST(Gate, ZeroQueryGivesHalf) {
  std::mt19937_64 rng(3);
  Tape<double> tape(false);
  const auto g = attention_gate(tape.constant(Tensor<double>({3, 4})), tape.constant(testing::random_tensor({3, 4}, rng)));
  for (double v : g.value().values()) EXPECT_EQ(v, 0.5);
}

TEST(Gate, BoundedOpenInterval) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Tape<double> tape(false);
    const auto g = attention_gate(tape.constant(testing::random_tensor({4, 3}, rng)),
                                  tape.constant(testing::random_tensor({4, 3}, rng, 3.0)));
    for (double v : g.value().values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(ConstrainedAttention, OneHotCopiesValue) {
  std::mt19937_64 rng(5);
  const std::size_t n = 3, d = 2;
  // query . key = 200 for every pair, so each gate is 1 in double precision
  const Tensor<double> q({n, d}, 10.0), k({n, d}, 10.0);
  const auto v = testing::random_tensor({n, d}, rng);
  Tensor<double> p({n, n});
  p.at(0, 2) = p.at(1, 0) = p.at(2, 0) = 1.0;
  Tape<double> tape(false);
  const auto out = constrained_attention(tape.constant(q), tape.constant(k), tape.constant(v), tape.constant(p));
  for (std::size_t c = 0; c < d; ++c) {
    EXPECT_EQ(out.value().at(0, c), v.at(2, c));
    EXPECT_EQ(out.value().at(1, c), v.at(0, c));
  }
}

TEST(ConstrainedAttention, ZeroPropagationGivesZero) {
  std::mt19937_64 rng(6);
  Tape<double> tape(false);
  const auto out = constrained_attention(tape.constant(testing::random_tensor({4, 3}, rng)),
                                         tape.constant(testing::random_tensor({4, 3}, rng)),
                                         tape.constant(testing::random_tensor({4, 3}, rng)),
                                         tape.constant(Tensor<double>({4, 4})));
  for (double v : out.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(ConstrainedAttention, BlockedPairsCarryNoInformation) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5;
    const auto q = testing::random_tensor({n, 3}, rng), k = testing::random_tensor({n, 3}, rng);
    auto v = testing::random_tensor({n, 3}, rng);
    auto p = random_parent_matrix(n, rng);
    const std::size_t i = rng() % n, j = rng() % n;
    p.at(i, j) = 0.0;
    const auto run = [&](const Tensor<double>& values) {
      Tape<double> tape(false);
      return constrained_attention(tape.constant(q), tape.constant(k), tape.constant(values), tape.constant(p)).value();
    };
    const auto before = run(v);
    for (std::size_t c = 0; c < 3; ++c) v.at(j, c) += 5.0;
    const auto after = run(v);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(before.at(i, c), after.at(i, c));
  }
}

TEST(Gradients, GateAndConstrainedAttention) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng() % 4;
    const auto p = random_parent_matrix(n, rng);
    const auto r = testing::check_gradient(
        [](Tape<double>&, const V& x) {
          const auto prop = propagation_prob(x[3], ad::transpose(x[3]), x[4], ad::add_scalar(ad::neg(x[4]), 1.0));
          return ad::add(testing::probe(attention_gate(x[0], x[1]), 1),
                         testing::probe(constrained_attention(x[0], x[1], x[2], prop), 2));
        },
        {testing::random_tensor({n, 3}, rng), testing::random_tensor({n, 3}, rng), testing::random_tensor({n, 3}, rng), p,
         Tensor<double>({1}, 0.3)});
    EXPECT_LE(r.rel_error, 1e-4);
  }
}

struct HeadFixture {
  ParameterStore<double> store;
  AttentionParams<double> params;
  HeadFixture(std::size_t d, std::size_t heads, bool constrained, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    params = AttentionParams<double>::create(store, d, heads, constrained, rng, "attn.");
    if (constrained) params.relations->value = testing::random_tensor({heads, 2}, rng);
  }
};

TEST(MultiHead, SingleIdentityHeadReducesToConstrainedAttention) {
  const std::size_t n = 4, d = 3;
  HeadFixture fx(d, 1, true, 9);
  auto& qkv = fx.params.qkv->value;
  qkv.fill(0.0);
  for (std::size_t c = 0; c < d; ++c) qkv.at(c, c) = qkv.at(c, d + c) = qkv.at(c, 2 * d + c) = 1.0;
  fx.params.qkv_bias->value.fill(0.0);
  fx.params.output->value.fill(0.0);
  for (std::size_t c = 0; c < d; ++c) fx.params.output->value.at(c, c) = 1.0;
  fx.params.output_bias->value.fill(0.0);
  std::mt19937_64 rng(10);
  const auto x = testing::random_tensor({n, d}, rng);
  const auto p = random_parent_matrix(n, rng);
  const double wp = fx.params.relations->value[0], wd = fx.params.relations->value[1];
  const auto mix = relation_mix(wp, wd);

  Tape<double> tape(false);
  const auto xv = tape.constant(x);
  const std::vector<SentenceGraph<double>> graphs{{tape.constant(p), tape.constant(transposed(p))}};
  const std::vector<std::size_t> lengths{n};
  const auto out = multi_head(xv, lengths, std::span<const SentenceGraph<double>>(graphs), fx.params,
                              RelationSet::kParentAndDep);
  const auto expect = constrained_attention(
      xv, xv, xv,
      propagation_prob(graphs[0].parent, graphs[0].parent_t, tape.constant(Tensor<double>({1}, mix.parent)),
                       tape.constant(Tensor<double>({1}, mix.dep))));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out.value()[i], expect.value()[i], 1e-12);
}

TEST(MultiHead, ParentAblationIgnoresLearnedWeights) {
  const std::size_t n = 5, d = 4;
  HeadFixture a(d, 2, true, 11), b(d, 2, true, 11);
  b.params.relations->value.fill(7.0);
  b.params.relations->value[1] = -3.0;
  std::mt19937_64 rng(12);
  const auto x = testing::random_tensor({n, d}, rng);
  const auto p = random_parent_matrix(n, rng);
  const auto run = [&](HeadFixture& fx, RelationSet rel) {
    Tape<double> tape(false);
    const std::vector<SentenceGraph<double>> graphs{{tape.constant(p), tape.constant(transposed(p))}};
    const std::vector<std::size_t> lengths{n};
    return multi_head(tape.constant(x), lengths, std::span<const SentenceGraph<double>>(graphs), fx.params, rel).value();
  };
  const auto ya = run(a, RelationSet::kParent), yb = run(b, RelationSet::kParent);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_EQ(ya[i], yb[i]);
  const auto za = run(a, RelationSet::kParentAndDep), zb = run(b, RelationSet::kParentAndDep);
  double diff = 0;
  for (std::size_t i = 0; i < za.size(); ++i) diff += std::abs(za[i] - zb[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(Gradients, MultiHeadParametersAndRelationWeights) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    HeadFixture fx(4, 2, true, 14 + trial);
    const auto x = testing::random_tensor({5, 4}, rng);
    const auto p1 = random_parent_matrix(3, rng), p2 = random_parent_matrix(2, rng);
    const std::vector<std::size_t> lengths{3, 2};
    const auto r = testing::check_parameter_gradient(fx.store, [&](Tape<double>& tape) {
      const std::vector<SentenceGraph<double>> graphs{{tape.constant(p1), tape.constant(transposed(p1))},
                                                      {tape.constant(p2), tape.constant(transposed(p2))}};
      return testing::probe(multi_head(tape.constant(x), lengths, std::span<const SentenceGraph<double>>(graphs),
                                       fx.params, RelationSet::kParentAndDep),
                            3);
    });
    EXPECT_LE(r.rel_error, 1e-4);
    double relation_grad = 0;
    for (double g : fx.params.relations->grad.values()) relation_grad += std::abs(g);
    EXPECT_GT(relation_grad, 0.0);
  }
}

TEST(Gradients, SoftmaxBaselineHeads) {
  HeadFixture fx(4, 2, false, 20);
  std::mt19937_64 rng(21);
  const auto x = testing::random_tensor({5, 4}, rng);
  const std::vector<std::size_t> lengths{2, 3};
  const auto r = testing::check_parameter_gradient(fx.store, [&](Tape<double>& tape) {
    return testing::probe(multi_head(tape.constant(x), lengths, std::span<const SentenceGraph<double>>(), fx.params,
                                     RelationSet::kParentAndDep),
                          4);
  });
  EXPECT_LE(r.rel_error, 1e-4);
  EXPECT_EQ(fx.params.relations, nullptr);
}

}  // namespace
}  // namespace structlab::attention
