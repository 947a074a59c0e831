#pragma once

// Masked-language-model corruption, optimizer and training loop.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "structlab/model.hpp"

namespace structlab::training {

/// Raised when the loss or a gradient stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Corruption {
  std::vector<std::int32_t> ids;         // input with masked tokens replaced
  std::vector<std::size_t> positions;    // replaced positions
  std::vector<std::int32_t> targets;     // original tokens at those positions
};

/// Each token is independently replaced by `mask_id` with probability `rate`.
Corruption mlm_corrupt(std::span<const std::int32_t> ids, double rate, std::int32_t mask_id,
                       std::mt19937_64& rng);

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::size_t warmup = 1000;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t log_every = 100;
  std::uint64_t seed = 1;

  void validate() const;
  bool set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> entries() const;
};

/// Linear warmup to the peak rate, then decay with the inverse square root
/// of the step. Steps count from 1.
double learning_rate(std::size_t step, const TrainConfig& config);

template <typename T>
class Adam {
 public:
  Adam(ParameterStore<T>& store, const TrainConfig& config);

  /// Clips the global gradient norm, applies one update, returns the
  /// pre-clip norm.
  double step(double lr);

 private:
  ParameterStore<T>& store_;
  TrainConfig config_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainMetrics {
  std::size_t step = 0;
  double loss = 0;   // mean masked cross-entropy since the previous record
  double ppl = 0;
  double lr = 0;
  double wall_time = 0;  // seconds since training started
};

struct TrainResult {
  std::vector<TrainMetrics> log;
  double final_loss = 0;
};

/// Trains on the sentences (vocabulary ids). Batches draw sentences from a
/// seeded shuffle, one epoch after another. Throws NumericalError on a
/// non-finite loss.
template <typename T>
TrainResult train(model::StructFormer<T>& model, const std::vector<std::vector<std::int32_t>>& corpus,
                  const TrainConfig& config, std::int32_t mask_id,
                  const std::function<void(const TrainMetrics&)>& on_log = {});

/// exp(mean cross-entropy over masked positions), masking seeded by `seed`.
template <typename T>
double evaluate_ppl(const model::StructFormer<T>& model, const std::vector<std::vector<std::int32_t>>& corpus,
                    std::int32_t mask_id, std::uint64_t seed, std::size_t batch_size = 32);

}  // namespace structlab::training
