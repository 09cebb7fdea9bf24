#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "alm/core/array.hpp"

namespace alm::core {

template <typename T>
struct Param {
  Array<T> value;
  Array<T> grad;  // empty until the first backward pass touches it
};

/// Named parameters (dot-separated paths). Iteration is sorted by name, which
/// fixes the order of initialization, optimizer updates and serialization.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Param<T>>;

  ParameterStore() = default;
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Param<T>& add(const std::string& name, Array<T> value) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw InvalidConfig("duplicate parameter name '" + name + "'");
    it->second.value = std::move(value);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidConfig("unknown parameter '" + name + "'");
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidConfig("unknown parameter '" + name + "'");
    return it->second;
  }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad = Array<T>();
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out(seed_);
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
    return out;
  }

 private:
  Map params_;
  std::uint64_t seed_ = 0;
};

/// normal(0, std) initializer used for projections and embeddings.
template <typename T>
Array<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  Array<T> out(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out.data) v = static_cast<T>(dist(rng));
  return out;
}

}  // namespace alm::core
