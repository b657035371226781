#include "panda/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace panda {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape(const Shape& shape, size_t n_values) {
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<int64_t>(n_values)) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(n_values) + " values");
  }
}

}  // namespace

Tensor Tensor::from_data(Shape shape, std::vector<float> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::make_shared<const std::vector<float>>(std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<float> v(static_cast<size_t>(shape_numel(shape)), 0.0f);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, float value) {
  std::vector<float> v(static_cast<size_t>(shape_numel(shape)), value);
  return from_data(std::move(shape), std::move(v), false);
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}, false); }

int64_t Tensor::numel() const { return shape_numel(node_->shape); }

int64_t Tensor::dim(int axis) const {
  int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(node_->shape));
  }
  return node_->shape[static_cast<size_t>(axis)];
}

float Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("tensor: item() requires a single element, shape is " +
                                shape_str(node_->shape));
  }
  return (*node_->values)[0];
}

double Tensor::item_f64() const {
  if (node_->has_scalar_acc) return node_->scalar_acc;
  return static_cast<double>(item());
}

Tensor Tensor::detached(bool requires_grad) const {
  auto node = std::make_shared<TensorNode>();
  node->shape = node_->shape;
  node->values = node_->values;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor make_op(const char* op, Shape shape, std::vector<float> values,
               std::vector<Tensor> inputs, BackpropFn backprop) {
  check_shape(shape, values.size());
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::make_shared<const std::vector<float>>(std::move(values));
  node->op = op;
  bool wants_grad = false;
  for (const Tensor& t : inputs) wants_grad = wants_grad || t.requires_grad();
  if (wants_grad) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

Tensor make_view(const char* op, Shape shape, const Tensor& input, BackpropFn backprop) {
  if (shape_numel(shape) != input.numel()) {
    throw std::invalid_argument(std::string(op) + ": cannot view " + shape_str(input.shape()) +
                                " as " + shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = input.node()->values;  // shared payload
  node->op = op;
  if (input.requires_grad()) {
    node->requires_grad = true;
    node->parents = {input};
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

Tensor make_scalar_op(const char* op, double acc, std::vector<Tensor> inputs, BackpropFn backprop) {
  Tensor t = make_op(op, {1}, {static_cast<float>(acc)}, std::move(inputs), std::move(backprop));
  t.node()->scalar_acc = acc;
  t.node()->has_scalar_acc = true;
  return t;
}

void accumulate_grad(const Tensor& t, const float* g, int64_t n) {
  TensorNode* node = t.node();
  if (node->grad.empty()) node->grad.assign(static_cast<size_t>(t.numel()), 0.0f);
  if (n != t.numel()) {
    throw std::logic_error("accumulate_grad: adjoint size mismatch for op " + std::string(node->op));
  }
  for (int64_t i = 0; i < n; ++i) node->grad[static_cast<size_t>(i)] += g[i];
}

void accumulate_grad(const Tensor& t, const std::vector<float>& g) {
  accumulate_grad(t, g.data(), static_cast<int64_t>(g.size()));
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined() || !root.requires_grad()) return g;
  // Iterative post-order DFS: parents land in the list before their users.
  std::unordered_set<const TensorNode*> visited;
  struct Frame {
    Tensor tensor;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root.node());
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& parents = top.tensor.node()->parents;
    if (top.next_parent < parents.size()) {
      const Tensor& p = parents[top.next_parent++];
      if (p.requires_grad() && visited.insert(p.node()).second) {
        stack.push_back({p, 0});
      }
    } else {
      g.nodes_.push_back(top.tensor.node());
      g.keep_alive_.push_back(top.tensor);
      stack.pop_back();
    }
  }
  return g;
}

Tensor Gradients::grad_for(const Tensor& t) const {
  auto it = by_node_.find(t.node());
  if (it != by_node_.end()) return it->second;
  return Tensor::zeros(t.shape());
}

Gradients backward(const Graph& graph, const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  Gradients out;
  if (!loss.requires_grad()) return out;  // nothing reachable

  loss.node()->grad.assign(1, 1.0f);
  const auto& nodes = graph.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    TensorNode* node = *it;
    if (node->grad.empty()) continue;  // not reachable from the loss
    if (node->backprop) node->backprop(*node);
  }
  for (TensorNode* node : nodes) {
    if (node->parents.empty() && node->requires_grad && !node->grad.empty()) {
      out.insert(node, Tensor::from_data(node->shape, node->grad));
    }
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  return out;
}

Gradients backward(const Tensor& loss) {
  Graph g = Graph::trace(loss);
  return backward(g, loss);
}

}  // namespace panda
