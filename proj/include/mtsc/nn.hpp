// Dense layers, low-rank adapters, optimizers and the finite-difference
// gradient checker used to validate every differentiable component.

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mtsc/tensor.hpp"

namespace mtsc {

struct DenseLayer {
  Tensor W;  // [d_out x d_in]
  Tensor b;  // [d_out]
  bool frozen = false;

  // Gaussian weights with stddev 1/sqrt(d_in), zero bias.
  static DenseLayer init(size_t d_out, size_t d_in, RngStream& rng);

  size_t d_in() const { return W.shape()[1]; }
  size_t d_out() const { return W.shape()[0]; }
  void set_frozen(bool on);
};

// Low-rank residual on top of a (typically frozen) dense layer. With B zero
// the contribution is exactly zero, so attaching an adapter never perturbs
// the base layer's function until training moves B.
struct LoraAdapter {
  Tensor A;  // [rank x d_in]
  Tensor B;  // [d_out x rank]
  size_t rank = 0;
  double alpha = 0.0;

  static LoraAdapter init(size_t d_out, size_t d_in, size_t rank, double alpha,
                          RngStream& rng);
};

// y = x * W^T + b
Tensor dense_forward(const Tensor& x, const DenseLayer& layer);

// y = dense_forward(x, layer) + (alpha/rank) * (x * A^T) * B^T
Tensor lora_forward(const Tensor& x, const DenseLayer& layer,
                    const LoraAdapter& adapter);

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 1e-2;
  double beta1 = 0.9;    // adam only
  double beta2 = 0.999;  // adam only
  double epsilon = 1e-8;

  void validate() const;  // throws on out-of-range values
};

// Holds handles to named trainable tensors and applies in-place updates from
// their accumulated gradients. Tensors without requires_grad are silently
// skipped at registration so whole modules can be registered blindly;
// frozen layers are skipped the same way.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  void add_param(const std::string& name, const Tensor& t);
  void add_layer(const std::string& name, const DenseLayer& layer);
  void add_adapter(const std::string& name, const LoraAdapter& adapter);

  // One update over every registered parameter. A parameter whose grad was
  // never touched this pass counts as zero gradient. Throws on non-finite
  // gradients, naming the offending tensor.
  void step();
  void zero_grad();

  size_t param_count() const { return params_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }

 private:
  OptimizerConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;  // adam moments
  size_t step_count_ = 0;
};

// Max over coordinates of |analytic - central difference| /
// max(1e-8, |analytic| + |numeric|). f must build a fresh graph per call and
// return a scalar. x is perturbed in place and restored. eps in [1e-7, 1e-3].
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                  double eps);

}  // namespace mtsc
