#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "graspstn/error.hpp"

namespace graspstn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Reverse-mode autograd is recorded while this returns true (thread-local).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Scoped "inference mode": no graph is recorded inside the guard.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <typename T>
struct TensorNode {
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;

  Shape shape;
  Storage values;
  Storage grad;  // sized lazily during backward
  bool requires_grad = false;
  bool is_leaf = true;
  bool grad_populated = false;  // leaf grad holds a finished backward result
  bool backward_ran = false;    // this node was already used as a backward root
  bool released = false;        // interior buffers freed by a finished backward
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad, scatters into parents' grad buffers.
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.size() != values.size()) grad = Storage::Zero(values.size());
  }
};

}  // namespace detail

/// Dense n-dimensional array with optional reverse-mode gradient history.
/// Value-semantics handle: copies share the underlying node. Values are
/// immutable once a tensor has entered the graph; only leaf tensors may be
/// mutated in place (parameter updates between training steps).
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return filled(std::move(shape), static_cast<T>(0));
  }

  static Tensor ones(Shape shape) {
    return filled(std::move(shape), static_cast<T>(1));
  }

  static Tensor filled(Shape shape, T value) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->values = Storage::Constant(shape_numel(t.node_->shape), value);
    return t;
  }

  /// Rank-0 tensor holding one value.
  static Tensor scalar(T value) { return filled(Shape{}, value); }

  static Tensor from_vector(Shape shape, const std::vector<T>& data) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    const Index n = shape_numel(t.node_->shape);
    if (static_cast<Index>(data.size()) != n) {
      throw ShapeError("from_vector: " + std::to_string(data.size()) +
                       " values for shape " + shape_str(t.node_->shape));
    }
    t.node_->values = Eigen::Map<const Storage>(data.data(), n);
    return t;
  }

  static Tensor from_list(Shape shape, std::initializer_list<T> data) {
    return from_vector(std::move(shape), std::vector<T>(data));
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return node_->values.size(); }

  const Storage& array() const { return node_->values; }
  const T* data() const { return node_->values.data(); }

  /// Mutable access, leaf tensors only (graph values are immutable).
  Storage& mutable_array() {
    if (!node_->is_leaf) {
      throw ContractError("mutable access on a non-leaf tensor");
    }
    return node_->values;
  }

  /// Value of a rank-0 (or single-element) tensor.
  T value() const {
    if (size() != 1) {
      throw ContractError("value(): tensor has " + std::to_string(size()) +
                          " elements");
    }
    return node_->values[0];
  }

  T operator[](Index flat) const { return node_->values[flat]; }

  /// Multi-index read, mostly for tests.
  T at(std::initializer_list<Index> idx) const {
    const auto& s = node_->shape;
    if (idx.size() != s.size()) throw ShapeError("at(): rank mismatch");
    Index flat = 0;
    std::size_t i = 0;
    for (Index v : idx) {
      flat = flat * s[i] + v;
      ++i;
    }
    return node_->values[flat];
  }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    if (!node_->is_leaf) {
      throw ContractError("set_requires_grad on a non-leaf tensor");
    }
    node_->requires_grad = on;
    return *this;
  }

  bool is_leaf() const { return node_->is_leaf; }

  bool grad_populated() const { return node_->grad_populated; }

  /// Copy of the accumulated gradient as a plain tensor.
  Tensor grad() const {
    if (node_->grad.size() != node_->values.size()) {
      throw ContractError("grad(): no gradient has been computed");
    }
    Tensor g;
    g.node_ = std::make_shared<Node>();
    g.node_->shape = node_->shape;
    g.node_->values = node_->grad;
    return g;
  }

  const Storage& grad_array() const {
    if (node_->grad.size() != node_->values.size()) {
      throw ContractError("grad_array(): no gradient has been computed");
    }
    return node_->grad;
  }

  void zero_grad() {
    node_->grad.setZero(node_->values.size());
    node_->grad_populated = false;
  }

  /// Same values, no history, no grad requirement.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->values = node_->values;
    return t;
  }

  bool all_finite() const { return node_->values.allFinite(); }

  /// Reverse-mode sweep from a rank-0 loss. Populates grad on every
  /// reachable leaf that requires grad; errors if called twice on the same
  /// root or if a reachable parameter still holds an unreset gradient.
  void backward() {
    Node* root = node_.get();
    if (root->shape.size() != 0) {
      throw ContractError("backward(): loss must be rank 0, got " +
                          shape_str(root->shape));
    }
    if (root->is_leaf || !root->backprop) {
      throw ContractError("backward(): tensor has no computation history");
    }
    if (!root->requires_grad) {
      throw ContractError("backward(): no reachable tensor requires grad");
    }
    if (root->backward_ran) {
      throw ContractError(
          "backward(): called twice on the same loss without a reset");
    }
    root->backward_ran = true;

    // Post-order DFS over grad-requiring parents (iterative: graphs from
    // long training chains can be deep).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
      Node* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Node* p = f.node->parents[f.next_parent++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }

    for (Node* n : order) {
      if (n->is_leaf && n->requires_grad && n->grad_populated) {
        throw ContractError(
            "backward(): parameter gradient already populated; call "
            "zero_grad first");
      }
      if (n->released) {
        throw ContractError(
            "backward(): graph region already consumed by an earlier "
            "backward (graph retention is not supported)");
      }
    }

    root->ensure_grad();
    root->grad[0] = static_cast<T>(1);

    // `order` is post-order, so reversed it is a topological order from the
    // root down; every node's grad is complete before its backprop runs.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backprop) {
        n->ensure_grad();
        for (auto& p : n->parents) {
          if (p->requires_grad) p->ensure_grad();
        }
        n->backprop(*n);
      }
    }

    for (Node* n : order) {
      if (n->is_leaf && n->requires_grad) {
        n->grad_populated = true;
      } else if (!n->is_leaf) {
        // Release interior buffers and closures; keeps training memory flat.
        n->grad.resize(0);
        n->backprop = nullptr;
        n->parents.clear();
        n->released = true;
      }
    }
  }

  // --- graph construction (used by the op layer) ---

  static Tensor make_op(Shape shape, std::vector<Tensor> inputs,
                        std::function<void(typename Tensor<T>::Node&)> backprop) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->values.resize(shape_numel(t.node_->shape));
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    if (grad_mode() && needs_grad) {
      t.node_->is_leaf = false;
      t.node_->requires_grad = true;
      t.node_->parents.reserve(inputs.size());
      for (auto& in : inputs) t.node_->parents.push_back(in.node_);
      t.node_->backprop = std::move(backprop);
    }
    return t;
  }

  Storage& raw_values() { return node_->values; }  // op layer fills outputs

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Named trainable tensor ("stage1.block2.conv1.weight" style paths).
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered registry of uniquely named parameters reachable from one model.
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> tensor) {
    for (const auto& p : params_) {
      if (p.name == name) {
        throw ContractError("duplicate parameter name: " + name);
      }
    }
    tensor.set_requires_grad(true);
    params_.push_back(Parameter<T>{name, std::move(tensor)});
    return params_.back().tensor;
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace graspstn
