#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include "structlab/tensor.hpp"

namespace structlab {

/// Ordered, name-addressable set of parameters with stable addresses.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, Tensor<T> init) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter " + name);
    params_.emplace_back(std::move(name), std::move(init));
    return params_.back();
  }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  Parameter<T>& get(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("unknown parameter " + std::string(name));
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.size();
    return total;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Parameter<T>> params_;
};

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller; bit-stable across standard libraries.
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(stddev * standard_normal(rng));
  return t;
}

}  // namespace structlab
