#include "structlab/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace structlab::training {

Corruption mlm_corrupt(std::span<const std::int32_t> ids, double rate, std::int32_t mask_id,
                       std::mt19937_64& rng) {
  if (!(rate >= 0 && rate < 1)) throw std::invalid_argument("mlm_corrupt: rate must lie in [0, 1)");
  Corruption out;
  out.ids.assign(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (uniform01(rng) < rate) {
      out.positions.push_back(i);
      out.targets.push_back(ids[i]);
      out.ids[i] = mask_id;
    }
  }
  return out;
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size() || !std::isfinite(out)) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning_rate must be positive");
  if (!(clip_norm > 0)) throw std::invalid_argument("train config: clip_norm must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("train config: adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0)) throw std::invalid_argument("train config: epsilon must be positive");
  if (log_every == 0) throw std::invalid_argument("train config: log_every must be positive");
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "steps") steps = parse_size(key, value);
  else if (key == "batch_size") batch_size = parse_size(key, value);
  else if (key == "learning_rate") learning_rate = parse_real(key, value);
  else if (key == "warmup") warmup = parse_size(key, value);
  else if (key == "clip_norm") clip_norm = parse_real(key, value);
  else if (key == "beta1") beta1 = parse_real(key, value);
  else if (key == "beta2") beta2 = parse_real(key, value);
  else if (key == "epsilon") epsilon = parse_real(key, value);
  else if (key == "log_every") log_every = parse_size(key, value);
  else return false;
  return true;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
  return {{"steps", std::to_string(steps)},
          {"batch_size", std::to_string(batch_size)},
          {"learning_rate", real_text(learning_rate)},
          {"warmup", std::to_string(warmup)},
          {"clip_norm", real_text(clip_norm)},
          {"beta1", real_text(beta1)},
          {"beta2", real_text(beta2)},
          {"epsilon", real_text(epsilon)},
          {"log_every", std::to_string(log_every)}};
}

double learning_rate(std::size_t step, const TrainConfig& config) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  if (config.warmup == 0) return config.learning_rate;
  const double w = static_cast<double>(config.warmup);
  if (s <= w) return config.learning_rate * s / w;
  return config.learning_rate * std::sqrt(w / s);
}

template <typename T>
Adam<T>::Adam(ParameterStore<T>& store, const TrainConfig& config) : store_(store), config_(config) {
  for (const auto& p : store_.all()) {
    m_.emplace_back(p.value.size(), T(0));
    v_.emplace_back(p.value.size(), T(0));
  }
}

template <typename T>
double Adam<T>::step(double lr) {
  double sq = 0;
  for (const auto& p : store_.all())
    for (T g : p.grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("gradient norm is not finite");
  const double clip = norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(config_.epsilon);
  const T c = static_cast<T>(clip);
  std::size_t k = 0;
  for (auto& p : store_.all()) {
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = m_[k].data();
    T* v = v_[k].data();
    for (std::size_t i = 0, n = p.value.size(); i < n; ++i) {
      const T gi = g[i] * c;
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
    ++k;
  }
  return norm;
}

namespace {

/// Packs corrupted sentences; target rows index the packed batch.
struct MaskedBatch {
  model::Batch batch;
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> targets;
};

void append(MaskedBatch& mb, std::span<const std::int32_t> sentence, double rate, std::int32_t mask_id,
            std::mt19937_64& rng) {
  const Corruption c = mlm_corrupt(sentence, rate, mask_id, rng);
  const std::size_t offset = mb.batch.ids.size();
  mb.batch.add(c.ids);
  for (std::size_t p : c.positions) mb.rows.push_back(offset + p);
  mb.targets.insert(mb.targets.end(), c.targets.begin(), c.targets.end());
}

}  // namespace

template <typename T>
TrainResult train(model::StructFormer<T>& model, const std::vector<std::vector<std::int32_t>>& corpus,
                  const TrainConfig& config, std::int32_t mask_id,
                  const std::function<void(const TrainMetrics&)>& on_log) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    if (corpus[s].empty()) throw std::invalid_argument("train: sentence " + std::to_string(s) + " is empty");
    if (corpus[s].size() > model.config().max_train_length) {
      throw std::length_error("train: sentence " + std::to_string(s) + " has length " +
                              std::to_string(corpus[s].size()) + ", cap is " +
                              std::to_string(model.config().max_train_length));
    }
  }

  // separate streams for data order/masking and for dropout
  std::mt19937_64 data_rng(config.seed * 0x9E3779B97F4A7C15ull + 1);
  std::mt19937_64 dropout_rng(config.seed * 0xBF58476D1CE4E5B9ull + 2);
  Adam<T> adam(model.parameters(), config);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto shuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform01(data_rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    cursor = 0;
  };

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  double window_loss = 0;
  std::size_t window_count = 0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    MaskedBatch mb;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) shuffle();
      append(mb, corpus[order[cursor++]], model.config().mask_rate, mask_id, data_rng);
    }
    const double lr = learning_rate(step, config);
    if (!mb.rows.empty()) {
      model.parameters().zero_grad();
      Tape<T> tape;
      const auto out = model.forward(tape, mb.batch, true, &dropout_rng, mb.rows);
      const Var<T> loss = ad::cross_entropy(out.logits, std::span<const std::int32_t>(mb.targets));
      const double value = static_cast<double>(loss.value().item());
      if (!std::isfinite(value)) {
        throw NumericalError("loss became " + std::to_string(value) + " at step " + std::to_string(step));
      }
      tape.backward(loss);
      adam.step(lr);
      window_loss += value;
      ++window_count;
      result.final_loss = value;
    }
    if (step % config.log_every == 0 || step == config.steps) {
      TrainMetrics m;
      m.step = step;
      m.loss = window_count ? window_loss / static_cast<double>(window_count) : 0.0;
      m.ppl = std::exp(m.loss);
      m.lr = lr;
      m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.log.push_back(m);
      if (on_log) on_log(m);
      window_loss = 0;
      window_count = 0;
    }
  }
  return result;
}

template <typename T>
double evaluate_ppl(const model::StructFormer<T>& model, const std::vector<std::vector<std::int32_t>>& corpus,
                    std::int32_t mask_id, std::uint64_t seed, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("evaluate_ppl: batch_size must be positive");
  std::mt19937_64 rng(seed);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
    MaskedBatch mb;
    for (std::size_t s = begin; s < std::min(corpus.size(), begin + batch_size); ++s) {
      if (corpus[s].empty()) continue;
      append(mb, corpus[s], model.config().mask_rate, mask_id, rng);
    }
    if (mb.rows.empty()) continue;
    Tape<T> tape(false);
    const auto out = model.forward(tape, mb.batch, false, nullptr, mb.rows);
    const Var<T> loss = ad::cross_entropy(out.logits, std::span<const std::int32_t>(mb.targets));
    total += static_cast<double>(loss.value().item()) * static_cast<double>(mb.rows.size());
    count += mb.rows.size();
  }
  if (count == 0) throw std::invalid_argument("evaluate_ppl: no masked positions in the corpus");
  const double ppl = std::exp(total / static_cast<double>(count));
  if (!std::isfinite(ppl)) throw NumericalError("evaluation perplexity is not finite");
  return ppl;
}

template class Adam<float>;
template class Adam<double>;
template TrainResult train(model::StructFormer<float>&, const std::vector<std::vector<std::int32_t>>&,
                           const TrainConfig&, std::int32_t, const std::function<void(const TrainMetrics&)>&);
template TrainResult train(model::StructFormer<double>&, const std::vector<std::vector<std::int32_t>>&,
                           const TrainConfig&, std::int32_t, const std::function<void(const TrainMetrics&)>&);
template double evaluate_ppl(const model::StructFormer<float>&, const std::vector<std::vector<std::int32_t>>&,
                             std::int32_t, std::uint64_t, std::size_t);
template double evaluate_ppl(const model::StructFormer<double>&, const std::vector<std::vector<std::int32_t>>&,
                             std::int32_t, std::uint64_t, std::size_t);

}  // namespace structlab::training
