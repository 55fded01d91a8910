// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Ops record their parents and
// a backward closure; the tape lives exactly as long as the tensors built in
// a forward pass, so each pass gets a fresh graph. backward() accumulates
// into .grad and never clears it, so repeated calls sum.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtsc {

class RngStream;

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_op;

  size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar_value(double value, bool requires_grad = false);
  // Gaussian init with the given stddev.
  static Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  size_t numel() const;
  size_t rank() const;
  // Rank-2 accessors; a rank-1 tensor is treated as a single row.
  size_t rows() const;
  size_t cols() const;

  std::span<const double> values() const;
  // Mutable view of the raw buffer. Intended for parameter updates and test
  // perturbations, not for nodes inside a live graph.
  std::span<double> values_mut();
  double scalar() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  const std::string& name() const;
  void set_name(std::string name);

  // Deep copy of values; the clone is a fresh leaf with no graph history.
  Tensor clone_detached() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// [n x k] * [k x m] -> [n x m]
Tensor matmul(const Tensor& a, const Tensor& b);

// y = x * W^T + b for x [d_in] or [n x d_in], W [d_out x d_in], b [d_out].
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

Tensor tanh_op(const Tensor& x);
Tensor sigmoid_op(const Tensor& x);
Tensor relu_op(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Rank-1 concatenation / slicing.
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, size_t offset, size_t len);

// Mean of the table rows selected by ids (repeats allowed). The gradient
// scatters 1/n of the cotangent back into each selected row.
Tensor embed_rows_mean(const Tensor& table, std::span<const int> ids);

// y = x + offset where offset is a captured constant. The Jacobian is the
// identity; this is the straight-through hop used for the channel stage.
Tensor add_constant_offset(const Tensor& x, std::span<const double> offset);

// Mean squared error against a constant target, averaged over all elements.
Tensor mse_loss(const Tensor& pred, std::span<const double> target);

// Mean cross-entropy with log-sum-exp stabilization. logits [C] with one
// label, or [n x C] with n labels.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

// Reverse-mode sweep from a scalar loss. Throws on non-scalar loss or a loss
// detached from any differentiable input.
void backward(const Tensor& loss);

// Reverse-mode sweep seeded with an explicit cotangent at `t` (same shape).
// This is how the split-learning boundary injects gradients mid-graph.
void backward_from(const Tensor& t, std::span<const double> cotangent);

}  // namespace mtsc
