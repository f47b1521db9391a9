#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/tensor.hpp"

// Persistent parameter storage. Parameters live here (float32) across
// steps; each training step binds them into a fresh Graph as leaves and
// reads gradients back in entry order. Entry order is insertion order and
// fixes the layout of optimizer state and checkpoints.

namespace u2flow {

struct ParamStore {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };

  std::vector<Entry> entries;
  std::unordered_map<std::string, size_t> index;

  void add(const std::string& name, Shape shape, std::vector<float> data) {
    detail::require(!index.count(name), "ParamStore: duplicate " + name);
    detail::require(static_cast<int64_t>(data.size()) == numel(shape),
                    "ParamStore: size mismatch for " + name);
    index[name] = entries.size();
    entries.push_back({name, std::move(shape), std::move(data)});
  }

  bool has(const std::string& name) const { return index.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = index.find(name);
    detail::require(it != index.end(), "ParamStore: missing " + name);
    return entries[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index.find(name);
    detail::require(it != index.end(), "ParamStore: missing " + name);
    return entries[it->second];
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& e : entries) n += static_cast<int64_t>(e.data.size());
    return n;
  }
};

// Uniform(-b, b) with b = 1/sqrt(fan_in), zero biases; each tensor drawn
// from its own stream so layout changes don't reshuffle unrelated layers.
inline std::vector<float> uniform_init(const Shape& shape, int fan_in,
                                       uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<float> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>(dist(rng));
  return v;
}

// Per-graph leaf handles, one per store entry. With grads=false parameters
// bind as constants (inference passes stay cheap and grad-free).
template <typename T>
struct BoundParams {
  std::unordered_map<std::string, Tensor<T>> map;

  const Tensor<T>& operator()(const std::string& name) const {
    auto it = map.find(name);
    detail::require(it != map.end(), "BoundParams: missing " + name);
    return it->second;
  }
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, const ParamStore& store,
                           bool grads = true) {
  BoundParams<T> bound;
  for (const auto& e : store.entries) {
    std::vector<T> v(e.data.begin(), e.data.end());
    bound.map.emplace(e.name, grads ? g.parameter(e.shape, std::move(v))
                                    : g.constant(e.shape, std::move(v)));
  }
  return bound;
}

// Gradients in entry order (zeros for parameters the loss never reached).
template <typename T>
std::vector<std::vector<float>> collect_grads(const Graph<T>& g,
                                              const BoundParams<T>& bound,
                                              const ParamStore& store) {
  std::vector<std::vector<float>> grads;
  grads.reserve(store.entries.size());
  for (const auto& e : store.entries) {
    auto gv = g.grad(bound(e.name));
    grads.emplace_back(gv.begin(), gv.end());
  }
  return grads;
}

}  // namespace u2flow
