#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cvit/errors.hpp"

namespace cvit {

// Dense row-major tensor with reverse-mode autodiff. float is the training
// scalar type; double is used for gradient checking. The graph is dynamic:
// every forward op appends a node, backward() walks it once in reverse
// topological order.

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace detail {

inline bool& finite_checks_flag() {
  static bool on = true;
  return on;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily
  bool requires_grad = false;
  bool backward_ran = false;
  const char* op_name = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad/data and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

// NaN/Inf screening after every forward op. On by default; tests that probe
// saturation behavior may switch it off locally.
inline bool finite_checks_enabled() { return detail::finite_checks_flag(); }
inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  explicit Tensor(Shape shape, T fill = T(0)) {
    validate_shape(shape);
    node_ = std::make_shared<detail::Node<T>>();
    node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    node_->shape = std::move(shape);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  static Tensor from_data(Shape shape, std::vector<T> data) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw DimensionError("from_data: shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  int64_t numel() const { return node_->numel(); }

  T* data() { return node_->data.data(); }
  const T* data() const { return node_->data.data(); }
  std::vector<T>& vec() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item() requires a single-element tensor");
    return node_->data[0];
  }

  // Row-major element access, mainly for tests and oracles.
  T& at(std::initializer_list<int64_t> idx) {
    return node_->data[static_cast<std::size_t>(flat_index(idx))];
  }
  T at(std::initializer_list<int64_t> idx) const {
    return node_->data[static_cast<std::size_t>(flat_index(idx))];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
  T* grad() { return node_->grad.data(); }
  const T* grad() const { return node_->grad.data(); }
  std::vector<T>& grad_vec() { return node_->grad; }
  const std::vector<T>& grad_vec() const { return node_->grad; }

  void zero_grad() {
    if (node_) node_->grad.assign(node_->data.size(), T(0));
  }

  // Reverse-mode sweep from a scalar loss. Each graph node is visited exactly
  // once; leaf tensors with requires_grad accumulate into their grad buffer.
  void backward() const {
    if (!node_) throw ContractError("backward on an undefined tensor");
    if (node_->numel() != 1)
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(node_->shape));
    if (node_->backward_ran)
      throw ContractError("backward already ran for this graph; rebuild the forward pass");

    std::vector<detail::Node<T>*> order;
    topo_sort(order);

    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (n->backward_fn && n->grad.size() == n->data.size()) n->backward_fn(*n);
    }
    node_->backward_ran = true;
  }

  const NodePtr& node() const { return node_; }

 private:
  static void validate_shape(const Shape& s) {
    for (int64_t d : s)
      if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(s));
  }

  int64_t flat_index(std::initializer_list<int64_t> idx) const {
    const Shape& s = node_->shape;
    if (idx.size() != s.size()) throw DimensionError("index rank mismatch");
    int64_t flat = 0;
    std::size_t i = 0;
    for (int64_t v : idx) {
      flat = flat * s[i] + v;
      ++i;
    }
    return flat;
  }

  void topo_sort(std::vector<detail::Node<T>*>& order) const {
    std::unordered_set<const detail::Node<T>*> visited;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        detail::Node<T>* p = n->parents[idx++].get();
        if (!visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// Builds the output node of an op: inherits requires_grad from the inputs and
// records them as parents only when a gradient will flow.
template <typename T>
std::shared_ptr<Node<T>> make_op_node(const char* name, Shape shape,
                                      std::initializer_list<Tensor<T>> inputs) {
  auto out = std::make_shared<Node<T>>();
  out->shape = std::move(shape);
  out->data.assign(static_cast<std::size_t>(shape_numel(out->shape)), T(0));
  out->op_name = name;
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.node()->requires_grad;
  out->requires_grad = rg;
  if (rg)
    for (const auto& t : inputs) out->parents.push_back(t.node());
  return out;
}

template <typename T>
void check_finite(const Node<T>& n) {
  if (!finite_checks_flag()) return;
  for (T v : n.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string("non-finite value produced by op '") + n.op_name + "'");
}

template <typename T>
void ensure_parent_grad(const std::shared_ptr<Node<T>>& p) {
  p->ensure_grad();
}

}  // namespace detail

}  // namespace cvit
