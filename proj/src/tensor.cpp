#include "mtsc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "mtsc/rng.hpp"

namespace mtsc {

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
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

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

NodePtr make_node(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2)
    throw std::invalid_argument("tensor rank must be 1 or 2, got " +
                                shape_str(shape));
  for (size_t d : shape)
    if (d == 0) throw std::invalid_argument("zero dimension in " + shape_str(shape));
}

NodePtr result_node(Shape shape, std::vector<double> data,
                    std::vector<NodePtr> parents,
                    std::function<void(TensorNode&)> bwd) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = make_node(std::move(shape), std::move(data), rg);
  if (rg) {
    n->parents = std::move(parents);
    n->backward_op = std::move(bwd);
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0),
                          requires_grad));
}

Tensor Tensor::constant(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value),
                          requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not fill shape " + shape_str(shape));
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar_value(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, RngStream& rng, double stddev,
                     bool requires_grad) {
  check_shape(shape);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor(make_node(std::move(shape), std::move(v), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
size_t Tensor::numel() const { return node_->data.size(); }
size_t Tensor::rank() const { return node_->shape.size(); }

size_t Tensor::rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
size_t Tensor::cols() const {
  return rank() == 1 ? node_->shape[0] : node_->shape[1];
}

std::span<const double> Tensor::values() const { return node_->data; }
std::span<double> Tensor::values_mut() { return node_->data; }

double Tensor::scalar() const {
  if (numel() != 1)
    throw std::invalid_argument("scalar() on tensor of shape " +
                                shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty())
    throw std::runtime_error("tensor '" + node_->name + "' has no gradient");
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

const std::string& Tensor::name() const { return node_->name; }
void Tensor::set_name(std::string name) { node_->name = std::move(name); }

Tensor Tensor::clone_detached() const {
  auto n = make_node(node_->shape, node_->data, node_->requires_grad);
  n->name = node_->name;
  return Tensor(n);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor(result_node(a.shape(), std::move(out), {a.node(), b.node()},
                            [](TensorNode& n) {
                              for (auto& p : n.parents) {
                                if (!p->requires_grad) continue;
                                p->ensure_grad();
                                for (size_t i = 0; i < n.grad.size(); ++i)
                                  p->grad[i] += n.grad[i];
                              }
                            }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor(result_node(a.shape(), std::move(out), {a.node(), b.node()},
                            [](TensorNode& n) {
                              auto& pa = n.parents[0];
                              auto& pb = n.parents[1];
                              if (pa->requires_grad) {
                                pa->ensure_grad();
                                for (size_t i = 0; i < n.grad.size(); ++i)
                                  pa->grad[i] += n.grad[i];
                              }
                              if (pb->requires_grad) {
                                pb->ensure_grad();
                                for (size_t i = 0; i < n.grad.size(); ++i)
                                  pb->grad[i] -= n.grad[i];
                              }
                            }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor(result_node(a.shape(), std::move(out), {a.node(), b.node()},
                            [](TensorNode& n) {
                              auto& pa = n.parents[0];
                              auto& pb = n.parents[1];
                              if (pa->requires_grad) {
                                pa->ensure_grad();
                                for (size_t i = 0; i < n.grad.size(); ++i)
                                  pa->grad[i] += n.grad[i] * pb->data[i];
                              }
                              if (pb->requires_grad) {
                                pb->ensure_grad();
                                for (size_t i = 0; i < n.grad.size(); ++i)
                                  pb->grad[i] += n.grad[i] * pa->data[i];
                              }
                            }));
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return Tensor(result_node(a.shape(), std::move(out), {a.node()},
                            [factor](TensorNode& n) {
                              auto& p = n.parents[0];
                              p->ensure_grad();
                              for (size_t i = 0; i < n.grad.size(); ++i)
                                p->grad[i] += n.grad[i] * factor;
                            }));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> out(n * m, 0.0);
  auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < n; ++i)
    for (size_t l = 0; l < k; ++l) {
      double aval = av[i * k + l];
      for (size_t j = 0; j < m; ++j) out[i * m + j] += aval * bv[l * m + j];
    }
  return Tensor(result_node(
      {n, m}, std::move(out), {a.node(), b.node()},
      [n, k, m](TensorNode& nd) {
        auto& pa = nd.parents[0];
        auto& pb = nd.parents[1];
        if (pa->requires_grad) {
          pa->ensure_grad();  // dA += G * B^T
          for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) {
              double g = nd.grad[i * m + j];
              for (size_t l = 0; l < k; ++l)
                pa->grad[i * k + l] += g * pb->data[l * m + j];
            }
        }
        if (pb->requires_grad) {
          pb->ensure_grad();  // dB += A^T * G
          for (size_t i = 0; i < n; ++i)
            for (size_t l = 0; l < k; ++l) {
              double aval = pa->data[i * k + l];
              for (size_t j = 0; j < m; ++j)
                pb->grad[l * m + j] += aval * nd.grad[i * m + j];
            }
        }
      }));
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  size_t d_out = W.shape()[0], d_in = W.shape()[1];
  if (W.rank() != 2 || x.cols() != d_in || b.rank() != 1 ||
      b.shape()[0] != d_out)
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                " does not match weights " +
                                shape_str(W.shape()) + " / bias " +
                                shape_str(b.shape()));
  size_t n = x.rows();
  std::vector<double> out(n * d_out);
  auto xv = x.values(), wv = W.values(), bv = b.values();
  for (size_t i = 0; i < n; ++i)
    for (size_t o = 0; o < d_out; ++o) {
      double acc = bv[o];
      const double* xrow = xv.data() + i * d_in;
      const double* wrow = wv.data() + o * d_in;
      for (size_t j = 0; j < d_in; ++j) acc += xrow[j] * wrow[j];
      out[i * d_out + o] = acc;
    }
  Shape out_shape = x.rank() == 1 ? Shape{d_out} : Shape{n, d_out};
  return Tensor(result_node(
      std::move(out_shape), std::move(out), {x.node(), W.node(), b.node()},
      [n, d_in, d_out](TensorNode& nd) {
        auto& px = nd.parents[0];
        auto& pw = nd.parents[1];
        auto& pb = nd.parents[2];
        if (px->requires_grad) {
          px->ensure_grad();  // dx += G * W
          for (size_t i = 0; i < n; ++i)
            for (size_t o = 0; o < d_out; ++o) {
              double g = nd.grad[i * d_out + o];
              const double* wrow = pw->data.data() + o * d_in;
              double* xg = px->grad.data() + i * d_in;
              for (size_t j = 0; j < d_in; ++j) xg[j] += g * wrow[j];
            }
        }
        if (pw->requires_grad) {
          pw->ensure_grad();  // dW += G^T * x
          for (size_t i = 0; i < n; ++i)
            for (size_t o = 0; o < d_out; ++o) {
              double g = nd.grad[i * d_out + o];
              const double* xrow = px->data.data() + i * d_in;
              double* wg = pw->grad.data() + o * d_in;
              for (size_t j = 0; j < d_in; ++j) wg[j] += g * xrow[j];
            }
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < n; ++i)
            for (size_t o = 0; o < d_out; ++o)
              pb->grad[o] += nd.grad[i * d_out + o];
        }
      }));
}

namespace {

template <typename Fwd, typename Dfen>
Tensor unary_elementwise(const Tensor& x, Fwd f, Dfen df_from_out) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return Tensor(result_node(x.shape(), std::move(out), {x.node()},
                            [df_from_out](TensorNode& n) {
                              auto& p = n.parents[0];
                              p->ensure_grad();
                              for (size_t i = 0; i < n.grad.size(); ++i)
                                p->grad[i] +=
                                    n.grad[i] * df_from_out(n.data[i], p->data[i]);
                            }));
}

}  // namespace

Tensor tanh_op(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::tanh(v); },
      [](double y, double) { return 1.0 - y * y; });
}

Tensor sigmoid_op(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double y, double) { return y * (1.0 - y); });
}

Tensor relu_op(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double, double xin) { return xin > 0.0 ? 1.0 : 0.0; });
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor(result_node({1}, {s}, {x.node()}, [](TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (double& g : p->grad) g += n.grad[0];
  }));
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  std::vector<double> out;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rank() != 1)
      throw std::invalid_argument("concat: rank-1 tensors only, got " +
                                  shape_str(p.shape()));
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
    parents.push_back(p.node());
  }
  size_t total = out.size();
  return Tensor(result_node({total}, std::move(out), std::move(parents),
                            [](TensorNode& n) {
                              size_t off = 0;
                              for (auto& p : n.parents) {
                                if (p->requires_grad) {
                                  p->ensure_grad();
                                  for (size_t i = 0; i < p->data.size(); ++i)
                                    p->grad[i] += n.grad[off + i];
                                }
                                off += p->data.size();
                              }
                            }));
}

Tensor slice(const Tensor& x, size_t offset, size_t len) {
  if (x.rank() != 1 || offset + len > x.numel())
    throw std::invalid_argument("slice: [" + std::to_string(offset) + ", " +
                                std::to_string(offset + len) +
                                ") out of range for " + shape_str(x.shape()));
  auto xv = x.values();
  std::vector<double> out(xv.begin() + offset, xv.begin() + offset + len);
  return Tensor(result_node({len}, std::move(out), {x.node()},
                            [offset](TensorNode& n) {
                              auto& p = n.parents[0];
                              p->ensure_grad();
                              for (size_t i = 0; i < n.grad.size(); ++i)
                                p->grad[offset + i] += n.grad[i];
                            }));
}

Tensor embed_rows_mean(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding table must be rank 2, got " +
                                shape_str(table.shape()));
  if (ids.empty()) throw std::invalid_argument("no ids to embed");
  size_t rows = table.shape()[0], cols = table.shape()[1];
  for (int id : ids)
    if (id < 0 || size_t(id) >= rows)
      throw std::invalid_argument("embedding id " + std::to_string(id) +
                                  " outside table of " + std::to_string(rows) +
                                  " rows");
  std::vector<double> out(cols, 0.0);
  auto tv = table.values();
  double inv_n = 1.0 / double(ids.size());
  for (int id : ids)
    for (size_t j = 0; j < cols; ++j) out[j] += tv[size_t(id) * cols + j];
  for (double& v : out) v *= inv_n;
  std::vector<int> captured(ids.begin(), ids.end());
  return Tensor(result_node(
      {cols}, std::move(out), {table.node()},
      [captured = std::move(captured), cols, inv_n](TensorNode& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int id : captured)
          for (size_t j = 0; j < cols; ++j)
            p->grad[size_t(id) * cols + j] += n.grad[j] * inv_n;
      }));
}

Tensor add_constant_offset(const Tensor& x, std::span<const double> offset) {
  if (offset.size() != x.numel())
    throw std::invalid_argument("add_constant_offset: offset length " +
                                std::to_string(offset.size()) +
                                " vs tensor " + shape_str(x.shape()));
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + offset[i];
  return Tensor(result_node(x.shape(), std::move(out), {x.node()},
                            [](TensorNode& n) {
                              auto& p = n.parents[0];
                              p->ensure_grad();
                              for (size_t i = 0; i < n.grad.size(); ++i)
                                p->grad[i] += n.grad[i];
                            }));
}

Tensor mse_loss(const Tensor& pred, std::span<const double> target) {
  if (target.size() != pred.numel())
    throw std::invalid_argument("mse_loss: target length " +
                                std::to_string(target.size()) + " vs pred " +
                                shape_str(pred.shape()));
  auto pv = pred.values();
  double acc = 0.0;
  for (size_t i = 0; i < pv.size(); ++i) {
    double d = pv[i] - target[i];
    acc += d * d;
  }
  double inv_n = 1.0 / static_cast<double>(pv.size());
  std::vector<double> tgt(target.begin(), target.end());
  return Tensor(result_node({1}, {acc * inv_n}, {pred.node()},
                            [tgt = std::move(tgt), inv_n](TensorNode& n) {
                              auto& p = n.parents[0];
                              p->ensure_grad();
                              double g = n.grad[0] * 2.0 * inv_n;
                              for (size_t i = 0; i < p->data.size(); ++i)
                                p->grad[i] += g * (p->data[i] - tgt[i]);
                            }));
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  for (int l : labels)
    if (l < 0 || static_cast<size_t>(l) >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                  " out of range [0, " + std::to_string(c) + ")");
  auto lv = logits.values();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * c;
    double mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double se = 0.0;
    for (size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
    total += mx + std::log(se) - row[labels[i]];
  }
  double inv_n = 1.0 / static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor(result_node(
      {1}, {total * inv_n}, {logits.node()},
      [lab = std::move(lab), n, c, inv_n](TensorNode& nd) {
        auto& p = nd.parents[0];
        p->ensure_grad();
        double g = nd.grad[0] * inv_n;
        for (size_t i = 0; i < n; ++i) {
          const double* row = p->data.data() + i * c;
          double mx = row[0];
          for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
          double se = 0.0;
          for (size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
          for (size_t j = 0; j < c; ++j) {
            double soft = std::exp(row[j] - mx) / se;
            p->grad[i * c + j] +=
                g * (soft - (static_cast<size_t>(lab[i]) == j ? 1.0 : 0.0));
          }
        }
      }));
}

namespace {

// Reverse topological order of the subgraph reachable from `root`.
std::vector<TensorNode*> topo_order(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

// One reverse sweep. Interior grads are scratch space for this sweep only;
// clearing them first keeps repeated sweeps from compounding through shared
// intermediates. Leaf grads (no backward_op) accumulate across sweeps.
void run_sweep(TensorNode* seed_node,
               const std::function<void(TensorNode&)>& seed) {
  auto order = topo_order(seed_node);
  for (TensorNode* n : order)
    if (n->backward_op) n->grad.clear();
  seed_node->ensure_grad();
  seed(*seed_node);
  for (TensorNode* n : order)
    if (n->backward_op && !n->grad.empty()) n->backward_op(*n);
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  auto node = loss.node();
  if (!node->requires_grad)
    throw std::runtime_error(
        "backward: loss is detached from any differentiable input");
  run_sweep(node.get(), [](TensorNode& n) { n.grad[0] += 1.0; });
}

void backward_from(const Tensor& t, std::span<const double> cotangent) {
  auto node = t.node();
  if (cotangent.size() != node->data.size())
    throw std::invalid_argument("backward_from: cotangent length " +
                                std::to_string(cotangent.size()) +
                                " vs tensor " + shape_str(node->shape));
  if (!node->requires_grad)
    throw std::runtime_error("backward_from: tensor is detached");
  run_sweep(node.get(), [&](TensorNode& n) {
    for (size_t i = 0; i < cotangent.size(); ++i) n.grad[i] += cotangent[i];
  });
}

}  // namespace mtsc
