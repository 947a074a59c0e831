#include "structlab/parser_network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace structlab::parser {

template <typename T>
ParserParams<T> ParserParams<T>::create(ParameterStore<T>& store, const ParserConfig& config,
                                        std::mt19937_64& rng, const std::string& prefix) {
  if (config.kernel_width % 2 == 0) throw std::invalid_argument("parser: kernel width must be odd");
  const std::size_t d = config.d_model;
  const double conv_std = 1.0 / std::sqrt(static_cast<double>(config.kernel_width * d));
  const double d_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < config.layers; ++l) {
    store.add(prefix + "conv" + std::to_string(l) + ".weight",
              normal_tensor<T>(Shape{config.kernel_width * d, d}, conv_std, rng));
    store.add(prefix + "conv" + std::to_string(l) + ".bias", Tensor<T>(Shape{d}));
  }
  store.add(prefix + "distance.hidden", normal_tensor<T>(Shape{2 * d, d}, 1.0 / std::sqrt(2.0 * static_cast<double>(d)), rng));
  store.add(prefix + "distance.out", normal_tensor<T>(Shape{d, 1}, d_std, rng));
  store.add(prefix + "height.hidden", normal_tensor<T>(Shape{d, d}, d_std, rng));
  store.add(prefix + "height.hidden_bias", Tensor<T>(Shape{d}));
  store.add(prefix + "height.out", normal_tensor<T>(Shape{d, 1}, d_std, rng));
  store.add(prefix + "height.out_bias", Tensor<T>(Shape{1}));
  return bind(store, config, prefix);
}

template <typename T>
ParserParams<T> ParserParams<T>::bind(ParameterStore<T>& store, const ParserConfig& config,
                                      const std::string& prefix) {
  ParserParams p;
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.conv_weight.push_back(&store.get(prefix + "conv" + std::to_string(l) + ".weight"));
    p.conv_bias.push_back(&store.get(prefix + "conv" + std::to_string(l) + ".bias"));
  }
  p.distance_hidden = &store.get(prefix + "distance.hidden");
  p.distance_out = &store.get(prefix + "distance.out");
  p.height_hidden = &store.get(prefix + "height.hidden");
  p.height_hidden_bias = &store.get(prefix + "height.hidden_bias");
  p.height_out = &store.get(prefix + "height.out");
  p.height_out_bias = &store.get(prefix + "height.out_bias");
  return p;
}

template <typename T>
ParserVars<T> ParserVars<T>::on(Tape<T>& tape, const ParserParams<T>& params) {
  ParserVars v;
  for (auto* w : params.conv_weight) v.conv_weight.push_back(tape.parameter(*w));
  for (auto* b : params.conv_bias) v.conv_bias.push_back(tape.parameter(*b));
  v.distance_hidden = tape.parameter(*params.distance_hidden);
  v.distance_out = tape.parameter(*params.distance_out);
  v.height_hidden = tape.parameter(*params.height_hidden);
  v.height_hidden_bias = tape.parameter(*params.height_hidden_bias);
  v.height_out = tape.parameter(*params.height_out);
  v.height_out_bias = tape.parameter(*params.height_out_bias);
  return v;
}

template <typename T>
Var<T> conv_stack(const ParserVars<T>& params, const Var<T>& embeddings,
                  std::span<const std::size_t> lengths, T dropout, std::mt19937_64* rng) {
  Var<T> s = embeddings;
  for (std::size_t l = 0; l < params.conv_weight.size(); ++l) {
    s = ad::tanh(ad::conv1d(s, params.conv_weight[l], params.conv_bias[l], lengths));
    if (dropout > T(0) && rng != nullptr) s = ad::dropout(s, dropout, *rng);
  }
  return s;
}

template <typename T>
Var<T> predict_distances(const ParserVars<T>& params, const Var<T>& states,
                         std::span<const std::size_t> lengths) {
  Tape<T>& tape = states.tape();
  std::vector<Var<T>> pairs;
  std::size_t begin = 0;
  for (std::size_t len : lengths) {
    if (len >= 2) {
      const std::array<Var<T>, 2> cols = {ad::slice(states, 0, begin, len - 1),
                                          ad::slice(states, 0, begin + 1, len - 1)};
      pairs.push_back(ad::concat<T>(cols, 1));
    }
    begin += len;
  }
  if (pairs.empty()) return tape.constant(Tensor<T>(Shape{0}));
  const Var<T> joined = pairs.size() == 1 ? pairs[0] : ad::concat<T>(pairs, 0);
  const Var<T> tau = ad::matmul(ad::tanh(ad::matmul(joined, params.distance_hidden)), params.distance_out);
  return ad::reshape(tau, Shape{tau.shape()[0]});
}

template <typename T>
Var<T> predict_heights(const ParserVars<T>& params, const Var<T>& states) {
  const Var<T> hidden = ad::tanh(ad::add(ad::matmul(states, params.height_hidden), params.height_hidden_bias));
  const Var<T> delta = ad::add(ad::matmul(hidden, params.height_out), params.height_out_bias);
  return ad::reshape(delta, Shape{delta.shape()[0]});
}

namespace {

struct Isolation {
  double margin = 0;
  std::size_t boundary = 0;  // tau index that binds the margin
  std::size_t highest = 0;   // argmax height inside the span
};

template <typename Tau, typename Delta>
Isolation find_isolation(const Tau& tau, const Delta& delta, std::size_t n) {
  Isolation best;
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < n; ++l) {
    std::size_t arg = l;
    for (std::size_t r = l; r < n; ++r) {
      if (static_cast<double>(delta[r]) > static_cast<double>(delta[arg])) arg = r;
      if (l == 0 && r + 1 == n) continue;
      const double h = static_cast<double>(delta[arg]);
      const double left = l > 0 ? static_cast<double>(tau[l - 1]) : inf;
      const double right = r + 1 < n ? static_cast<double>(tau[r]) : inf;
      const bool use_left = left <= right;
      const double margin = (use_left ? left : right) - h;
      if (margin > best.margin) best = {margin, use_left ? l - 1 : r, arg};
    }
  }
  return best;
}

void check_lengths(std::size_t tau, std::size_t delta, const char* op) {
  if (delta == 0 || tau + 1 != delta) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(tau) + " distances for " +
                                std::to_string(delta) + " heights");
  }
}

}  // namespace

double max_isolation(std::span<const double> tau, std::span<const double> delta) {
  check_lengths(tau.size(), delta.size(), "max_isolation");
  return find_isolation(tau, delta, delta.size()).margin;
}

CalibrationResult calibrate(std::span<const double> tau, std::span<const double> delta,
                            CalibrationTarget target) {
  CalibrationResult out{{tau.begin(), tau.end()}, {delta.begin(), delta.end()}, max_isolation(tau, delta)};
  if (target == CalibrationTarget::kDistances) {
    for (double& t : out.tau) t -= out.shift;
  } else {
    for (double& d : out.delta) d += out.shift;
  }
  return out;
}

template <typename T>
Var<T> calibration_shift(const Var<T>& tau, const Var<T>& delta) {
  check_lengths(tau.size(), delta.size(), "calibration_shift");
  const Isolation iso = find_isolation(tau.value().values(), delta.value().values(), delta.size());
  Tensor<T> out(Shape{1}, static_cast<T>(iso.margin));
  const std::size_t it = tau.id(), id = delta.id();
  return delta.tape().record(std::move(out), {tau, delta}, "calibration_shift",
                             [it, id, iso](Tape<T>& t, std::size_t self) {
    if (iso.margin <= 0) return;
    const T g = t.grad(self)[0];
    if (t.requires_grad(it)) t.grad(it)[iso.boundary] += g;
    if (t.requires_grad(id)) t.grad(id)[iso.highest] -= g;
  });
}

#define STRUCTLAB_INSTANTIATE_PARSER(T)                                                          \
  template struct ParserParams<T>;                                                               \
  template struct ParserVars<T>;                                                                 \
  template Var<T> conv_stack(const ParserVars<T>&, const Var<T>&, std::span<const std::size_t>, \
                             T, std::mt19937_64*);                                               \
  template Var<T> predict_distances(const ParserVars<T>&, const Var<T>&,                         \
                                    std::span<const std::size_t>);                               \
  template Var<T> predict_heights(const ParserVars<T>&, const Var<T>&);                          \
  template Var<T> calibration_shift(const Var<T>&, const Var<T>&);

STRUCTLAB_INSTANTIATE_PARSER(float)
STRUCTLAB_INSTANTIATE_PARSER(double)

}  // namespace structlab::parser
