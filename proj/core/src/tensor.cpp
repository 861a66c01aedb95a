#include "remar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace remar {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

double* Node::parent_grad(std::size_t i) {
  auto& p = parents.at(i);
  if (!p || !p->requires_grad) return nullptr;
  return p->grad_buffer().data();
}

}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw std::invalid_argument("tensor dimension " + std::to_string(i) +
                                  " is zero in shape " + shape_to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  validate_shape(shape);
  node_ = std::make_shared<detail::Node>();
  node_->values.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_to_string(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, value, requires_grad);
}

void Tensor::check_defined() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
}

const Shape& Tensor::shape() const {
  check_defined();
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) {
    throw std::out_of_range("dimension " + std::to_string(i) + " out of range for shape " +
                            shape_to_string(s));
  }
  return s[i];
}

std::size_t Tensor::numel() const {
  check_defined();
  return node_->values.size();
}

std::span<const double> Tensor::data() const {
  check_defined();
  return node_->values;
}

std::span<double> Tensor::mutable_data() {
  check_defined();
  return node_->values;
}

double Tensor::item() const {
  check_defined();
  if (node_->values.size() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_to_string(node_->shape));
  }
  return node_->values[0];
}

bool Tensor::requires_grad() const {
  check_defined();
  return node_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool value) {
  check_defined();
  if (!node_->is_leaf()) {
    throw std::logic_error("requires_grad can only be changed on leaf tensors");
  }
  node_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const {
  check_defined();
  return node_->is_leaf();
}

const char* Tensor::op_name() const {
  check_defined();
  return node_->op;
}

bool Tensor::has_grad() const {
  check_defined();
  return !node_->grad.empty();
}

std::span<const double> Tensor::grad() const {
  check_defined();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  check_defined();
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  check_defined();
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  check_defined();
  return Tensor(node_->shape, node_->values, false);
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           const std::vector<Tensor>& inputs, const char* op,
                           std::function<void(detail::Node&)> backward_fn) {
#ifndef NDEBUG
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
  }
#endif
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.defined() && t.node_->requires_grad;
  });
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  check_defined();
  if (node_->values.size() != 1) {
    throw std::invalid_argument("backward() needs a single-element loss, got shape " +
                                shape_to_string(node_->shape));
  }
  if (!node_->requires_grad) {
    throw std::logic_error("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->values.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf()) n->backward_fn(*n);
  }
}

Tensor& ParameterStore::add(const std::string& name, Tensor tensor) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  params_.push_back({name, std::move(tensor)});
  return params_.back().tensor;
}

const Tensor* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p.tensor;
  }
  return nullptr;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace remar
