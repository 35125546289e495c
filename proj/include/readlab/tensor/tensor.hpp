#pragma once

// Reverse-mode differentiation over dense double-precision tensors.
//
// A Graph is a tape: every op appends one node whose inputs were created
// earlier, so creation order is a topological order. Parameters are leaves
// that outlive any single graph; backward() accumulates into them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace readlab::tensor {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A named leaf tensor that persists across graphs (model weights, inputs
/// under gradient check). Gradients accumulate until zero_grad().
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Shape shape, bool requires_grad = true);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }
  void zero_grad();

 private:
  std::string name_;
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
  bool requires_grad_ = true;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  Graph& graph() const;
  std::uint32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> values() const;
  /// Empty until backward() reached this node.
  std::span<const double> grad() const;
  bool requires_grad() const;
  /// Value of a one-element tensor.
  double item() const;

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  struct Node {
    const char* op = "";
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::uint32_t> inputs;
    bool requires_grad = false;
    Parameter* leaf = nullptr;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double value) { return constant({}, {value}); }
  /// Leaf bound to a Parameter; gradients flow into it when it requires grad.
  Tensor param(Parameter& p);

  /// Appends an op node. `backward` may be empty when no input needs grad.
  Tensor record(const char* op, Shape shape, std::vector<double> value,
                std::vector<std::uint32_t> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar root. Intermediate gradients are reset on
  /// each call; Parameter gradients accumulate.
  void backward(const Tensor& root);

  const Node& node(std::uint32_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes the last backward() processed.
  std::size_t visited() const { return visited_; }

  /// Gradient buffer of an input node, allocated on first use. Only valid
  /// inside a backward callback.
  std::span<double> grad_of(std::uint32_t id);
  std::span<const double> value_of(std::uint32_t id) const { return nodes_[id].value; }
  std::span<const double> out_grad(std::uint32_t self) const { return nodes_[self].grad; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

 private:
  std::vector<Node> nodes_;
  std::size_t visited_ = 0;
};

}  // namespace readlab::tensor
