#include "readlab/tensor/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace readlab::tensor {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Parameter::Parameter(std::string name, Shape shape, bool requires_grad)
    : name_(std::move(name)),
      shape_(std::move(shape)),
      values_(numel(shape_), 0.0),
      grad_(numel(shape_), 0.0),
      requires_grad_(requires_grad) {}

void Parameter::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

Graph& Tensor::graph() const {
  if (!graph_) throw std::logic_error("tensor handle is not bound to a graph");
  return *graph_;
}

const Shape& Tensor::shape() const { return graph().node(id_).shape; }
std::size_t Tensor::size() const { return graph().node(id_).value.size(); }
std::span<const double> Tensor::values() const { return graph().node(id_).value; }
std::span<const double> Tensor::grad() const { return graph().node(id_).grad; }
bool Tensor::requires_grad() const { return graph().node(id_).requires_grad; }

double Tensor::item() const {
  const auto& v = graph().node(id_).value;
  if (v.size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  }
  return v[0];
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("constant: shape " + to_string(shape) + " holds " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  Node n;
  n.op = "constant";
  n.shape = std::move(shape);
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Graph::param(Parameter& p) {
  Node n;
  n.op = "param";
  n.shape = p.shape();
  n.value.assign(p.values().begin(), p.values().end());
  n.requires_grad = p.requires_grad();
  n.leaf = &p;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Graph::record(const char* op, Shape shape, std::vector<double> value,
                     std::vector<std::uint32_t> inputs, BackwardFn backward) {
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  for (auto id : n.inputs) {
    if (id >= nodes_.size()) throw std::logic_error("record: input does not precede node");
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::span<double> Graph::grad_of(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Graph::backward(const Tensor& root) {
  if (&root.graph() != this) throw std::logic_error("backward: root belongs to another graph");
  auto& r = nodes_[root.id()];
  if (r.value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + to_string(r.shape));
  }
  for (auto& n : nodes_) n.grad.clear();
  visited_ = 0;
  if (!r.requires_grad) return;
  r.grad.assign(1, 1.0);
  for (std::int64_t id = root.id(); id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    ++visited_;
    if (n.leaf) {
      auto dst = n.leaf->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    } else if (n.backward) {
      n.backward(*this, static_cast<std::uint32_t>(id));
    }
  }
}

}  // namespace readlab::tensor
