#include "mtsc/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "mtsc/rng.hpp"

namespace mtsc {

DenseLayer DenseLayer::init(size_t d_out, size_t d_in, RngStream& rng) {
  DenseLayer l;
  l.W = Tensor::randn({d_out, d_in}, rng, 1.0 / std::sqrt(double(d_in)), true);
  l.b = Tensor::zeros({d_out}, true);
  return l;
}

void DenseLayer::set_frozen(bool on) {
  frozen = on;
  W.set_requires_grad(!on);
  b.set_requires_grad(!on);
}

LoraAdapter LoraAdapter::init(size_t d_out, size_t d_in, size_t rank,
                              double alpha, RngStream& rng) {
  if (rank == 0 || rank > std::min(d_in, d_out))
    throw std::invalid_argument("lora rank " + std::to_string(rank) +
                                " outside [1, min(" + std::to_string(d_in) +
                                ", " + std::to_string(d_out) + ")]");
  if (alpha <= 0.0) throw std::invalid_argument("lora alpha must be positive");
  LoraAdapter a;
  a.A = Tensor::randn({rank, d_in}, rng, 1.0 / std::sqrt(double(d_in)), true);
  a.B = Tensor::zeros({d_out, rank}, true);
  a.rank = rank;
  a.alpha = alpha;
  return a;
}

Tensor dense_forward(const Tensor& x, const DenseLayer& layer) {
  return linear(x, layer.W, layer.b);
}

Tensor lora_forward(const Tensor& x, const DenseLayer& layer,
                    const LoraAdapter& adapter) {
  if (adapter.A.shape()[1] != layer.d_in() ||
      adapter.B.shape()[0] != layer.d_out() ||
      adapter.A.shape()[0] != adapter.rank ||
      adapter.B.shape()[1] != adapter.rank)
    throw std::invalid_argument("adapter " + shape_str(adapter.B.shape()) +
                                "*" + shape_str(adapter.A.shape()) +
                                " does not match layer " +
                                shape_str(layer.W.shape()));
  Tensor base = dense_forward(x, layer);
  Tensor zero_r = Tensor::zeros({adapter.rank});
  Tensor zero_o = Tensor::zeros({layer.d_out()});
  Tensor low = linear(linear(x, adapter.A, zero_r), adapter.B, zero_o);
  return add(base, scale(low, adapter.alpha / double(adapter.rank)));
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("learning_rate must be positive");
  if (kind == OptimizerKind::Adam) {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw std::invalid_argument("adam betas must lie in (0, 1)");
    if (!(epsilon > 0.0))
      throw std::invalid_argument("adam epsilon must be positive");
  }
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  config_.validate();
}

void Optimizer::add_param(const std::string& name, const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return;
  for (const auto& [n, p] : params_)
    if (n == name)
      throw std::invalid_argument("duplicate optimizer param '" + name + "'");
  params_.emplace_back(name, t);
  m_.emplace_back(t.numel(), 0.0);
  v_.emplace_back(t.numel(), 0.0);
}

void Optimizer::add_layer(const std::string& name, const DenseLayer& layer) {
  if (layer.frozen) return;
  add_param(name + ".W", layer.W);
  add_param(name + ".b", layer.b);
}

void Optimizer::add_adapter(const std::string& name,
                            const LoraAdapter& adapter) {
  add_param(name + ".A", adapter.A);
  add_param(name + ".B", adapter.B);
}

void Optimizer::step() {
  ++step_count_;
  double lr = config_.learning_rate;
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& [name, p] = params_[pi];
    if (!p.has_grad()) continue;  // zero gradient: sgd no-op, adam decay only
    auto g = p.grad();
    auto w = p.values_mut();
    for (double gv : g)
      if (!std::isfinite(gv))
        throw std::runtime_error("non-finite gradient in '" + name + "'");
    if (config_.kind == OptimizerKind::Sgd) {
      for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    } else {
      double b1 = config_.beta1, b2 = config_.beta2;
      double c1 = 1.0 - std::pow(b1, double(step_count_));
      double c2 = 1.0 - std::pow(b2, double(step_count_));
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                  double eps) {
  if (eps < 1e-7 || eps > 1e-3)
    throw std::invalid_argument("grad_check eps outside [1e-7, 1e-3]");
  if (!x.requires_grad())
    throw std::invalid_argument("grad_check input must require gradients");

  x.zero_grad();
  Tensor loss = f(x);
  if (loss.numel() != 1)
    throw std::invalid_argument("grad_check expects a scalar-valued map");
  backward(loss);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  double worst = 0.0;
  auto xv = x.values_mut();
  for (size_t i = 0; i < xv.size(); ++i) {
    double saved = xv[i];
    xv[i] = saved + eps;
    double up = f(x).scalar();
    xv[i] = saved - eps;
    double down = f(x).scalar();
    xv[i] = saved;
    double numeric = (up - down) / (2.0 * eps);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i]))
      throw std::runtime_error("grad_check hit a non-finite value");
    double rel = std::fabs(analytic[i] - numeric) /
                 std::max(1e-8, std::fabs(analytic[i]) + std::fabs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace mtsc
