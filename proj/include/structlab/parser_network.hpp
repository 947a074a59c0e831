#pragma once

// Convolutional parser that predicts syntactic distances and heights from
// word embeddings, plus the distance calibration that keeps every
// constituent connected to its context.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "structlab/autodiff.hpp"
#include "structlab/parameters.hpp"

namespace structlab::parser {

struct ParserConfig {
  std::size_t d_model = 128;
  std::size_t layers = 3;
  std::size_t kernel_width = 3;  // 2W+1
};

template <typename T>
struct ParserParams {
  std::vector<Parameter<T>*> conv_weight;  // (kernel_width*d) x d
  std::vector<Parameter<T>*> conv_bias;    // d
  Parameter<T>* distance_hidden = nullptr;  // 2d x d, applied to [s_i; s_i+1]
  Parameter<T>* distance_out = nullptr;     // d x 1
  Parameter<T>* height_hidden = nullptr;    // d x d
  Parameter<T>* height_hidden_bias = nullptr;  // d
  Parameter<T>* height_out = nullptr;       // d x 1
  Parameter<T>* height_out_bias = nullptr;  // 1

  static ParserParams create(ParameterStore<T>& store, const ParserConfig& config,
                             std::mt19937_64& rng, const std::string& prefix = "parser.");
  static ParserParams bind(ParameterStore<T>& store, const ParserConfig& config,
                           const std::string& prefix = "parser.");
};

/// Parameter leaves of one forward pass.
template <typename T>
struct ParserVars {
  std::vector<Var<T>> conv_weight, conv_bias;
  Var<T> distance_hidden, distance_out;
  Var<T> height_hidden, height_hidden_bias, height_out, height_out_bias;

  static ParserVars on(Tape<T>& tape, const ParserParams<T>& params);
};

/// `layers` x tanh(conv) over each segment, zero-padded at segment edges.
/// Dropout (rate > 0, rng given) follows every layer.
template <typename T>
Var<T> conv_stack(const ParserVars<T>& params, const Var<T>& embeddings,
                  std::span<const std::size_t> lengths, T dropout = T(0),
                  std::mt19937_64* rng = nullptr);

/// Distances for every adjacent pair inside each segment, concatenated:
/// sum(max(len-1, 0)) values.
template <typename T>
Var<T> predict_distances(const ParserVars<T>& params, const Var<T>& states,
                         std::span<const std::size_t> lengths);

/// One height per row of `states`.
template <typename T>
Var<T> predict_heights(const ParserVars<T>& params, const Var<T>& states);

enum class CalibrationTarget { kDistances, kHeights };

struct CalibrationResult {
  std::vector<double> tau;
  std::vector<double> delta;
  double shift = 0;  // max isolation margin that was removed
};

/// Largest isolation margin ReLU(min(tau_left - h, tau_right - h)) over every
/// span except the whole sentence, h being the span's maximal height.
double max_isolation(std::span<const double> tau, std::span<const double> delta);

/// Subtracts the largest isolation margin from every distance (or, with
/// kHeights, adds it to every height).
CalibrationResult calibrate(std::span<const double> tau, std::span<const double> delta,
                            CalibrationTarget target = CalibrationTarget::kDistances);

/// Differentiable max_isolation (shape {1}); the gradient follows the
/// maximizing span's binding boundary and its highest token.
template <typename T>
Var<T> calibration_shift(const Var<T>& tau, const Var<T>& delta);

}  // namespace structlab::parser
