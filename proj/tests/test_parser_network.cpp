#include <gtest/gtest.h>

#include "structlab/grammar.hpp"
#include "structlab/parser_network.hpp"
#include "support.hpp"

namespace structlab::parser {
namespace {

using V = std::vector<Var<double>>;

struct Fixture {
  ParameterStore<double> store;
  ParserParams<double> params;
  explicit Fixture(std::size_t d = 4, std::size_t layers = 2, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    params = ParserParams<double>::create(store, ParserConfig{d, layers, 3}, rng);
  }
  void zero() {
    for (auto& p : store.all()) p.value.fill(0.0);
  }
};

TEST(ConvStack, ZeroWeightsGiveZeros) {
  Fixture fx;
  fx.zero();
  std::mt19937_64 rng(2);
  Tape<double> tape;
  const auto vars = ParserVars<double>::on(tape, fx.params);
  const std::vector<std::size_t> lengths{5};
  const auto s = conv_stack(vars, tape.constant(testing::random_tensor({5, 4}, rng)), lengths);
  for (double v : s.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(ConvStack, SingleTokenSeesOnlyCenterTap) {
  Fixture fx(3, 1);
  std::mt19937_64 rng(3);
  const auto x = testing::random_tensor({1, 3}, rng);
  Tape<double> tape;
  const auto vars = ParserVars<double>::on(tape, fx.params);
  const std::vector<std::size_t> lengths{1};
  const auto s = conv_stack(vars, tape.constant(x), lengths);
  // weight rows [d, 2d) hold the centre tap
  const auto& w = fx.store.get("parser.conv0.weight").value;
  const auto& b = fx.store.get("parser.conv0.bias").value;
  for (std::size_t c = 0; c < 3; ++c) {
    double acc = b[c];
    for (std::size_t k = 0; k < 3; ++k) acc += x[k] * w.at(3 + k, c);
    EXPECT_NEAR(s.value()[c], std::tanh(acc), 1e-12);
  }
}

TEST(ConvStack, SegmentsDoNotLeak) {
  Fixture fx;
  std::mt19937_64 rng(4);
  auto x = testing::random_tensor({5, 4}, rng);
  const std::vector<std::size_t> lengths{2, 3};
  const auto run = [&](const Tensor<double>& in) {
    Tape<double> tape(false);
    return conv_stack(ParserVars<double>::on(tape, fx.params), tape.constant(in), lengths).value();
  };
  const auto before = run(x);
  for (std::size_t c = 0; c < 4; ++c) x.at(3, c) += 1.0;  // second segment
  const auto after = run(x);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(before[c], after[c]);
}

TEST(Distances, EmptyForOneToken) {
  Fixture fx;
  Tape<double> tape;
  const auto vars = ParserVars<double>::on(tape, fx.params);
  const std::vector<std::size_t> lengths{1};
  EXPECT_EQ(predict_distances(vars, tape.constant(Tensor<double>({1, 4}, 0.3)), lengths).size(), 0u);
}

TEST(Distances, IdenticalStatesGiveEqualDistances) {
  Fixture fx;
  Tape<double> tape;
  const auto vars = ParserVars<double>::on(tape, fx.params);
  const std::vector<std::size_t> lengths{6};
  const auto tau = predict_distances(vars, tape.constant(Tensor<double>({6, 4}, 0.7)), lengths);
  ASSERT_EQ(tau.size(), 5u);
  for (double v : tau.value().values()) EXPECT_DOUBLE_EQ(v, tau.value()[0]);
}

TEST(Heights, ZeroWeightsGiveZero) {
  Fixture fx;
  fx.zero();
  std::mt19937_64 rng(5);
  Tape<double> tape;
  const auto vars = ParserVars<double>::on(tape, fx.params);
  const auto delta = predict_heights(vars, tape.constant(testing::random_tensor({4, 4}, rng)));
  for (double v : delta.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Heights, PermutationEquivariant) {
  Fixture fx;
  std::mt19937_64 rng(6);
  auto s = testing::random_tensor({4, 4}, rng);
  const auto heights = [&](const Tensor<double>& states) {
    Tape<double> tape(false);
    return predict_heights(ParserVars<double>::on(tape, fx.params), tape.constant(states)).value();
  };
  const auto a = heights(s);
  Tensor<double> swapped = s;
  for (std::size_t c = 0; c < 4; ++c) std::swap(swapped.at(0, c), swapped.at(2, c));
  const auto b = heights(swapped);
  EXPECT_DOUBLE_EQ(a[0], b[2]);
  EXPECT_DOUBLE_EQ(a[2], b[0]);
  EXPECT_DOUBLE_EQ(a[1], b[1]);
}

TEST(Gradients, FullParserChainMatchesFiniteDifferences) {
  Fixture fx(4, 2, 9);
  std::mt19937_64 rng(10);
  const std::vector<std::size_t> lengths{4, 3};
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = testing::check_gradient(
        [&](Tape<double>& tape, const V& v) {
          const auto vars = ParserVars<double>::on(tape, fx.params);
          const auto s = conv_stack(vars, v[0], lengths);
          return ad::add(testing::probe(predict_distances(vars, s, lengths), 1),
                         testing::probe(predict_heights(vars, s), 2));
        },
        {testing::random_tensor({7, 4}, rng)});
    EXPECT_LE(r.rel_error, 1e-4);
  }
}

TEST(Gradients, ParserParametersMatchFiniteDifferences) {
  Fixture fx(3, 1, 11);
  std::mt19937_64 rng(12);
  const auto x = testing::random_tensor({5, 3}, rng);
  const std::vector<std::size_t> lengths{5};
  const auto r = testing::check_parameter_gradient(fx.store, [&](Tape<double>& tape) {
    const auto vars = ParserVars<double>::on(tape, fx.params);
    const auto s = conv_stack(vars, tape.constant(x), lengths);
    return ad::add(testing::probe(predict_distances(vars, s, lengths), 3),
                   testing::probe(predict_heights(vars, s), 4));
  });
  EXPECT_LE(r.rel_error, 1e-4);
}

TEST(Calibration, ZeroMarginLeavesInputUnchanged) {
  // every span touches a distance no larger than its height
  const std::vector<double> tau{0.0, 0.0, 0.0};
  const std::vector<double> delta{1, 2, 3, 4};
  EXPECT_EQ(max_isolation(tau, delta), 0.0);
  const auto c = calibrate(tau, delta);
  EXPECT_EQ(c.tau, tau);
  EXPECT_EQ(c.delta, delta);
}

TEST(Calibration, HandExample) {
  // singleton spans at either end have height 1 against a distance of 5
  const std::vector<double> tau{5, 5};
  const std::vector<double> delta{1, 2, 1};
  EXPECT_DOUBLE_EQ(max_isolation(tau, delta), 4.0);
  const auto c = calibrate(tau, delta);
  EXPECT_EQ(c.tau, (std::vector<double>{1, 1}));
  EXPECT_DOUBLE_EQ(c.shift, 4.0);
  const auto h = calibrate(tau, delta, CalibrationTarget::kHeights);
  EXPECT_EQ(h.delta, (std::vector<double>{5, 6, 5}));
  EXPECT_EQ(h.tau, tau);
}

TEST(Calibration, MatchesExhaustiveScanAndRemovesIsolation) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    std::vector<double> tau(n - 1), delta(n);
    for (double& v : tau) v = g(rng);
    for (double& v : delta) v = g(rng);
    EXPECT_NEAR(max_isolation(tau, delta), testing::brute_max_isolation(tau, delta), 1e-12);
    for (auto target : {CalibrationTarget::kDistances, CalibrationTarget::kHeights}) {
      const auto c = calibrate(tau, delta, target);
      EXPECT_LE(testing::brute_max_isolation(c.tau, c.delta), 1e-12);
      EXPECT_EQ(grammar::distance_to_tree(n, c.tau), grammar::distance_to_tree(n, tau));
    }
  }
}

TEST(Gradients, CalibrationShiftAwayFromKinks) {
  std::mt19937_64 rng(14);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng() % 5;
    const auto tau = testing::distinct_values(n - 1, rng);
    const auto delta = testing::distinct_values(n, rng, 0.7);
    const auto r = testing::check_gradient(
        [](Tape<double>&, const V& v) { return ad::sum(calibration_shift(v[0], v[1])); },
        {Tensor<double>({n - 1}, tau), Tensor<double>({n}, delta)}, 1e-6);
    if (r.near_kink) continue;
    ++checked;
    EXPECT_LE(r.rel_error, 1e-3);
    Tape<double> tape(false);
    EXPECT_NEAR(calibration_shift(tape.constant(Tensor<double>({n - 1}, tau)),
                                  tape.constant(Tensor<double>({n}, delta)))
                    .value()
                    .item(),
                max_isolation(tau, delta), 1e-12);
  }
  EXPECT_GE(checked, 80);
}

}  // namespace
}  // namespace structlab::parser
