#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "mtsc/nn.hpp"
#include "mtsc/rng.hpp"

using namespace mtsc;

TEST_SUITE("nn") {

TEST_CASE("dense forward on identity weights passes input through") {
  DenseLayer l;
  l.W = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  l.b = Tensor::zeros({2});
  Tensor x = Tensor::from_values({1, 2}, {1, 0});
  Tensor y = dense_forward(x, l);
  CHECK(y.values()[0] == 1);
  CHECK(y.values()[1] == 0);
}

TEST_CASE("dense forward on zero input yields the bias") {
  DenseLayer l;
  l.W = Tensor::from_values({2, 2}, {3, 4, 5, 6});
  l.b = Tensor::from_values({2}, {7, 8});
  Tensor y = dense_forward(Tensor::zeros({1, 2}), l);
  CHECK(y.values()[0] == 7);
  CHECK(y.values()[1] == 8);
}

TEST_CASE("dense forward matches a hand-multiplied matrix") {
  DenseLayer l;
  l.W = Tensor::from_values({2, 2}, {1, 1, 0, 1});
  l.b = Tensor::zeros({2});
  Tensor y = dense_forward(Tensor::from_values({1, 2}, {1, 2}), l);
  CHECK(y.values()[0] == 3);
  CHECK(y.values()[1] == 2);
  CHECK_THROWS(dense_forward(Tensor::zeros({1, 3}), l));
}

TEST_CASE("zero or unscaled adapters leave the base layer untouched") {
  RngStream rng(3, 0);
  DenseLayer l = DenseLayer::init(3, 4, rng);
  LoraAdapter a = LoraAdapter::init(3, 4, 2, 8.0, rng);
  Tensor x = Tensor::randn({1, 4}, rng);
  Tensor base = dense_forward(x, l);
  Tensor with = lora_forward(x, l, a);  // B starts all-zero
  for (size_t i = 0; i < base.numel(); ++i)
    CHECK(with.values()[i] == base.values()[i]);
}

TEST_CASE("rank-one adapter matches hand computation") {
  DenseLayer l;
  l.W = Tensor::zeros({2, 2});
  l.b = Tensor::zeros({2});
  LoraAdapter a;
  a.A = Tensor::from_values({1, 2}, {1, 0});
  a.B = Tensor::from_values({2, 1}, {1, 0});
  a.rank = 1;
  a.alpha = 1.0;
  Tensor y = lora_forward(Tensor::from_values({1, 2}, {3, 5}), l, a);
  CHECK(y.values()[0] == 3);
  CHECK(y.values()[1] == 0);
}

TEST_CASE("adapter construction validates rank bounds") {
  RngStream rng(4, 0);
  CHECK_THROWS(LoraAdapter::init(3, 4, 5, 8.0, rng));
  CHECK_THROWS(LoraAdapter::init(3, 4, 0, 8.0, rng));
  CHECK_NOTHROW(LoraAdapter::init(3, 4, 3, 8.0, rng));
}

TEST_CASE("grad check accepts smooth maps and flags the relu kink") {
  Tensor x = Tensor::from_values({2}, {1, 2}, true);
  double err = grad_check(
      [](const Tensor& t) { return sum_all(mul(t, t)); }, x, 1e-5);
  CHECK(err < 1e-6);

  Tensor lin = Tensor::from_values({3}, {0.3, -0.7, 1.1}, true);
  double lin_err = grad_check(
      [](const Tensor& t) { return sum_all(scale(t, 2.5)); }, lin, 1e-4);
  CHECK(lin_err < 1e-9);

  // central difference at the kink reports slope 1/2 against analytic 0
  Tensor kink = Tensor::scalar_value(0.0, true);
  double kink_err = grad_check(
      [](const Tensor& t) { return sum_all(relu_op(t)); }, kink, 1e-5);
  CHECK(kink_err > 0.1);
}

TEST_CASE("grad check rejects out-of-range eps") {
  Tensor x = Tensor::scalar_value(1.0, true);
  auto f = [](const Tensor& t) { return sum_all(t); };
  CHECK_THROWS(grad_check(f, x, 1e-8));
  CHECK_THROWS(grad_check(f, x, 1e-2));
}

TEST_CASE("gradients of 100 random small networks match finite differences") {
  auto t0 = std::chrono::steady_clock::now();
  RngStream rng(2024, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    size_t depth = 1 + rng.uniform_int(0, 2);
    std::vector<size_t> dims;
    dims.push_back(1 + rng.uniform_int(0, 7));
    for (size_t i = 0; i < depth; ++i) dims.push_back(1 + rng.uniform_int(0, 7));

    std::vector<DenseLayer> layers;
    for (size_t i = 0; i < depth; ++i) {
      auto lr = rng.substream(100 + i);
      layers.push_back(DenseLayer::init(dims[i + 1], dims[i], lr));
    }
    std::vector<double> target(dims.back());
    for (double& t : target) t = rng.normal();

    auto net = [&](const Tensor& in) {
      Tensor h = in;
      for (const auto& l : layers) h = tanh_op(dense_forward(h, l));
      return mse_loss(h, target);
    };

    // alternate between checking the input and one of the weight matrices
    if (trial % 2 == 0) {
      Tensor x = Tensor::randn({1, dims[0]}, rng, 1.0, true);
      worst = std::max(worst, grad_check(net, x, 1e-5));
    } else {
      Tensor x = Tensor::randn({1, dims[0]}, rng);
      size_t which = rng.uniform_int(0, depth - 1);
      auto net_w = [&](const Tensor&) { return net(x); };
      worst = std::max(worst, grad_check(net_w, layers[which].W, 1e-5));
    }
  }
  CHECK(worst < 1e-4);
  auto elapsed = std::chrono::duration<double>(
      std::chrono::steady_clock::now() - t0).count();
  CHECK(elapsed < 10.0);
}

TEST_CASE("sgd arithmetic and zero-gradient no-op") {
  Tensor p = Tensor::scalar_value(1.0, true);
  Optimizer opt({OptimizerKind::Sgd, 0.1});
  opt.add_param("p", p);

  p.grad_mut()[0] = 2.0;
  opt.step();
  CHECK(p.scalar() == doctest::Approx(0.8));

  p.zero_grad();
  opt.step();
  CHECK(p.scalar() == doctest::Approx(0.8));
}

TEST_CASE("adam first step moves by about the learning rate") {
  Tensor p = Tensor::scalar_value(1.0, true);
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::Adam;
  cfg.learning_rate = 0.05;
  Optimizer opt(cfg);
  opt.add_param("p", p);
  p.grad_mut()[0] = 1.0;
  opt.step();
  // m_hat = 1, v_hat = 1 after bias correction, so the step is lr/(1+eps)
  CHECK(p.scalar() == doctest::Approx(1.0 - 0.05).epsilon(1e-6));
}

TEST_CASE("optimizer rejects bad configs and non-finite gradients") {
  CHECK_THROWS(Optimizer({OptimizerKind::Sgd, -0.1}));
  OptimizerConfig bad;
  bad.kind = OptimizerKind::Adam;
  bad.beta1 = 1.0;
  CHECK_THROWS(Optimizer(bad));

  Tensor p = Tensor::scalar_value(1.0, true);
  p.set_name("theta");
  Optimizer opt({OptimizerKind::Sgd, 0.1});
  opt.add_param("theta", p);
  p.grad_mut()[0] = std::numeric_limits<double>::quiet_NaN();
  bool threw = false;
  try {
    opt.step();
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("theta") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("frozen layers never move while adapters train") {
  RngStream rng(17, 0);
  DenseLayer l = DenseLayer::init(3, 3, rng);
  l.set_frozen(true);
  LoraAdapter a = LoraAdapter::init(3, 3, 2, 8.0, rng);

  std::vector<double> w_before(l.W.values().begin(), l.W.values().end());
  std::vector<double> b_before(l.b.values().begin(), l.b.values().end());
  std::vector<double> a_start(a.A.values().begin(), a.A.values().end());

  Optimizer opt({OptimizerKind::Sgd, 0.5});
  opt.add_layer("base", l);
  opt.add_adapter("base.lora", a);
  CHECK(opt.param_count() == 2);  // only A and B registered

  std::vector<double> target = {1.0, -1.0, 0.5};
  Tensor x = Tensor::randn({1, 3}, rng);
  for (int step = 0; step < 2; ++step) {
    opt.zero_grad();
    backward(mse_loss(lora_forward(x, l, a), target));
    opt.step();
  }

  for (size_t i = 0; i < w_before.size(); ++i)
    CHECK(l.W.values()[i] == w_before[i]);
  for (size_t i = 0; i < b_before.size(); ++i)
    CHECK(l.b.values()[i] == b_before[i]);

  // with B starting at zero, the first step moves B, the second moves A
  bool b_moved = false, a_moved = false;
  for (double v : a.B.values()) b_moved = b_moved || v != 0.0;
  for (size_t i = 0; i < a_start.size(); ++i)
    a_moved = a_moved || a.A.values()[i] != a_start[i];
  CHECK(b_moved);
  CHECK(a_moved);
}

TEST_CASE("identical streams build bit-identical layers") {
  RngStream r1(123, 5), r2(123, 5);
  DenseLayer l1 = DenseLayer::init(4, 6, r1);
  DenseLayer l2 = DenseLayer::init(4, 6, r2);
  for (size_t i = 0; i < l1.W.numel(); ++i)
    CHECK(l1.W.values()[i] == l2.W.values()[i]);
}

}  // TEST_SUITE
