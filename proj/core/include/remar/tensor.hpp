#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace remar {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

enum class Mode { Train, Eval };

namespace detail {

/// One vertex of the define-by-run graph. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  // Zero-initialized gradient buffer, allocated on first use.
  std::vector<double>& grad_buffer();

  // Parent gradient buffer if that parent takes part in differentiation,
  // otherwise nullptr.
  double* parent_grad(std::size_t i);
};

}  // namespace detail

/// Shared handle to a node in the computation graph. Copies alias the same
/// storage; use detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutable access is meant for leaves (parameters, inputs) only.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;
  const char* op_name() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  Tensor detach() const;

  /// Reverse sweep from a single-element tensor. Interior gradients are
  /// rebuilt on each call while leaf gradients accumulate.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. When no input requires grad the graph edge and the
  /// backward closure are dropped.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            const std::vector<Tensor>& inputs, const char* op,
                            std::function<void(detail::Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  void check_defined() const;

  std::shared_ptr<detail::Node> node_;
};

/// A learnable tensor registered under a dotted path such as "enc.1.0.conv.weight".
/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Ordered parameter registry with unique names.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor tensor);
  const std::vector<Parameter>& items() const { return params_; }
  std::vector<Parameter>& items() { return params_; }
  const Tensor* find(const std::string& name) const;
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

}  // namespace remar
