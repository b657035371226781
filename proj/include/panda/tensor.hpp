#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace panda {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
struct TensorNode;

using BackpropFn = std::function<void(const TensorNode& self)>;

// One node of the recorded computation. Leaves have no parents; every other
// node keeps the tensors it read plus a closure that maps its adjoint onto
// the adjoints of those parents. Nodes only record parents when a gradient
// can actually flow (some input requires grad), so inference builds no graph.
struct TensorNode {
  Shape shape;
  std::shared_ptr<const std::vector<float>> values;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor> parents;
  BackpropFn backprop;

  // Double-precision value of single-element reductions, kept alongside the
  // stored f32 so finite-difference oracles see the reduction accumulator.
  double scalar_acc = 0.0;
  bool has_scalar_acc = false;

  // Adjoint buffer; populated only inside backward() and cleared afterwards.
  std::vector<float> grad;
};

// Immutable dense f32 tensor, row-major. Copies are cheap (shared payload);
// all operations produce new tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const;
  int64_t dim(int axis) const;  // negative axes count from the back
  const std::vector<float>& data() const { return *node_->values; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  float item() const;       // single-element tensors only
  double item_f64() const;  // reduction accumulator when the op kept one

  TensorNode* node() const { return node_.get(); }

  // Same values, fresh leaf node (used to promote checkpoint tensors into
  // trainable parameters without copying the payload).
  Tensor detached(bool requires_grad) const;

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op(const char* op, Shape shape, std::vector<float> values,
                        std::vector<Tensor> inputs, BackpropFn backprop);
  friend Tensor make_view(const char* op, Shape shape, const Tensor& input, BackpropFn backprop);
  friend Tensor make_scalar_op(const char* op, double acc, std::vector<Tensor> inputs,
                               BackpropFn backprop);
};

// Records an operation: result values plus the adjoint closure. All built-in
// ops and the model's fused kernels go through these three entry points.
Tensor make_op(const char* op, Shape shape, std::vector<float> values,
               std::vector<Tensor> inputs, BackpropFn backprop);
// Shares the input's payload (reshape-style ops).
Tensor make_view(const char* op, Shape shape, const Tensor& input, BackpropFn backprop);
// Single-element reduction carrying its f64 accumulator.
Tensor make_scalar_op(const char* op, double acc, std::vector<Tensor> inputs,
                      BackpropFn backprop);

// Adds g (length = numel of t) into t's adjoint buffer.
void accumulate_grad(const Tensor& t, const std::vector<float>& g);
void accumulate_grad(const Tensor& t, const float* g, int64_t n);

// Topologically ordered record of the operations reachable from a root:
// every node's inputs precede it, and the structure is acyclic because ops
// can only read tensors that already exist.
class Graph {
 public:
  static Graph trace(const Tensor& root);
  const std::vector<TensorNode*>& nodes() const { return nodes_; }

 private:
  std::vector<TensorNode*> nodes_;
  std::vector<Tensor> keep_alive_;
};

// Gradients keyed by parameter (leaf tensor identity). Parameters the loss
// never touched read back as zeros.
class Gradients {
 public:
  bool contains(const Tensor& t) const { return by_node_.count(t.node()) > 0; }
  Tensor grad_for(const Tensor& t) const;
  size_t size() const { return by_node_.size(); }

  void insert(const TensorNode* key, Tensor grad) { by_node_.emplace(key, std::move(grad)); }

 private:
  std::unordered_map<const TensorNode*, Tensor> by_node_;
};

// Reverse-mode sweep. The loss must be a scalar reachable from the graph.
Gradients backward(const Graph& graph, const Tensor& loss);
Gradients backward(const Tensor& loss);

}  // namespace panda
