#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "u2flow/error.hpp"

namespace u2flow {

// Dense row-major extents. Rank 0 is a scalar (numel 1).
using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

template <typename T>
class Graph;

// Cheap handle to a node owned by a Graph. Copying never copies data.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<T>* g, int id) : g_(g), id_(id) {}

  bool valid() const { return g_ != nullptr; }
  Graph<T>* graph() const { return g_; }
  int id() const { return id_; }

  const Shape& shape() const;
  const std::vector<T>& values() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape()[i]; }
  int64_t size() const { return numel(shape()); }

  // Scalar convenience; requires numel == 1.
  T value() const {
    detail::require(size() == 1, "Tensor::value: tensor is not a scalar");
    return values()[0];
  }

 private:
  Graph<T>* g_ = nullptr;
  int id_ = -1;
};

// Append-only tape of tensor nodes. Children always precede parents, so a
// single reverse sweep over ids is a valid topological order for backprop.
// One Graph per training step; clear() drops everything.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until the node is reached by backward()
    std::vector<int> children;
    BackwardFn backward;          // null for leaves and detached nodes
    bool requires_grad = false;   // true only for parameter leaves
    std::shared_ptr<void> cache;  // op-private forward state reused in backward
  };

  Tensor<T> constant(Shape shape, std::vector<T> value) {
    return add_node(std::move(shape), std::move(value), {}, nullptr, false);
  }

  Tensor<T> scalar(T v) { return constant(Shape{}, {v}); }

  Tensor<T> zeros(Shape shape) {
    std::vector<T> v(static_cast<size_t>(numel(shape)), T(0));
    return constant(std::move(shape), std::move(v));
  }

  Tensor<T> full(Shape shape, T fill) {
    std::vector<T> v(static_cast<size_t>(numel(shape)), fill);
    return constant(std::move(shape), std::move(v));
  }

  // Leaf that participates in gradient collection.
  Tensor<T> parameter(Shape shape, std::vector<T> value) {
    return add_node(std::move(shape), std::move(value), {}, nullptr, true);
  }

  // Used by ops to append an interior node. Children must already exist.
  Tensor<T> make_node(Shape shape, std::vector<T> value,
                      std::vector<int> children, BackwardFn backward,
                      std::shared_ptr<void> cache = nullptr) {
    detail::require(static_cast<int64_t>(value.size()) == numel(shape),
                    "make_node: value size does not match shape");
    for (int c : children)
      detail::require(c >= 0 && c < static_cast<int>(nodes_.size()),
                      "make_node: child id out of range");
    Tensor<T> t =
        add_node(std::move(shape), std::move(value), std::move(children),
                 std::move(backward), false);
    nodes_.back().cache = std::move(cache);
    return t;
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // Gradient buffer for accumulation; allocates zeros on first touch. Nodes
  // never reached keep an empty buffer, reported as exact zeros by grad().
  std::vector<T>& grad_buffer(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  bool reached(const Tensor<T>& t) const { return !node(t.id()).grad.empty(); }

  // Gradient of the last backward() root w.r.t. t; exact zeros if t was
  // never reached (detached or off-path).
  std::vector<T> grad(const Tensor<T>& t) const {
    const Node& n = node(t.id());
    if (n.grad.empty()) return std::vector<T>(n.value.size(), T(0));
    return n.grad;
  }

  // Reverse-mode sweep from a scalar root. Deterministic: node order and
  // per-node accumulation order are fixed by construction order.
  void backward(const Tensor<T>& root) {
    detail::require(root.valid() && root.graph() == this,
                    "backward: root belongs to a different graph");
    detail::require(root.size() == 1, "backward: root must be a scalar");
    for (Node& n : nodes_) n.grad.clear();
    grad_buffer(root.id())[0] = T(1);
    for (int id = root.id(); id >= 0; --id) {
      Node& n = node(id);
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, id);
    }
  }

 private:
  Tensor<T> add_node(Shape shape, std::vector<T> value,
                     std::vector<int> children, BackwardFn backward,
                     bool requires_grad) {
    detail::require(static_cast<int64_t>(value.size()) == numel(shape),
                    "Graph: value size does not match shape");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.children = std::move(children);
    n.backward = std::move(backward);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
};

template <typename T>
const Shape& Tensor<T>::shape() const {
  return g_->node(id_).shape;
}

template <typename T>
const std::vector<T>& Tensor<T>::values() const {
  return g_->node(id_).value;
}

}  // namespace u2flow
