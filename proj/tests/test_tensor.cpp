#include <cmath>
#include <vector>

#include "doctest.h"
#include "mtsc/rng.hpp"
#include "mtsc/tensor.hpp"

using namespace mtsc;

TEST_SUITE("tensor") {

TEST_CASE("factories enforce shape and data consistency") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS(Tensor::from_values({2, 2}, {1.0, 2.0, 3.0}));
  CHECK_THROWS(Tensor::zeros({0, 3}));
  CHECK_THROWS(Tensor::zeros({2, 3, 4}));
  CHECK(Tensor::scalar_value(5.0).scalar() == 5.0);
  CHECK_THROWS(Tensor::zeros({2, 2}).scalar());
}

TEST_CASE("elementwise ops compute expected values and reject mismatches") {
  Tensor a = Tensor::from_values({3}, {1, 2, 3});
  Tensor b = Tensor::from_values({3}, {4, 5, 6});
  Tensor s = add(a, b);
  CHECK(s.values()[0] == 5);
  CHECK(s.values()[2] == 9);
  CHECK(sub(b, a).values()[1] == 3);
  CHECK(mul(a, b).values()[2] == 18);
  CHECK(scale(a, -2.0).values()[0] == -2);
  CHECK_THROWS(add(a, Tensor::zeros({4})));
}

TEST_CASE("matmul matches hand computation") {
  Tensor a = Tensor::from_values({1, 2}, {1, 2});
  Tensor b = Tensor::from_values({2, 2}, {1, 0, 1, 1});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{1, 2});
  CHECK(c.values()[0] == 3);
  CHECK(c.values()[1] == 2);
  CHECK_THROWS(matmul(a, Tensor::zeros({3, 2})));
}

TEST_CASE("sum of inputs backpropagates all-ones") {
  Tensor x = Tensor::from_values({2, 2}, {1, 2, 3, 4}, true);
  backward(sum_all(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("square at three backpropagates six") {
  Tensor x = Tensor::scalar_value(3.0, true);
  backward(sum_all(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("repeated backward accumulates gradients") {
  Tensor x = Tensor::scalar_value(2.0, true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  x.zero_grad();
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  Tensor x = Tensor::from_values({2}, {1, 2}, true);
  CHECK_THROWS(backward(add(x, x)));
  Tensor det = Tensor::from_values({1}, {3.0});
  CHECK_THROWS(backward(det));
}

TEST_CASE("diamond-shaped graphs accumulate through both paths") {
  // y = x*x + x  => dy/dx = 2x + 1
  Tensor x = Tensor::scalar_value(5.0, true);
  backward(sum_all(add(mul(x, x), x)));
  CHECK(x.grad()[0] == doctest::Approx(11.0));
}

TEST_CASE("slice and concat round trip with correct gradient routing") {
  Tensor x = Tensor::from_values({4}, {1, 2, 3, 4}, true);
  Tensor head = slice(x, 0, 2);
  Tensor tail = slice(x, 2, 2);
  Tensor glued = concat({head, tail});
  for (size_t i = 0; i < 4; ++i) CHECK(glued.values()[i] == x.values()[i]);
  backward(sum_all(scale(glued, 2.0)));
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
  CHECK_THROWS(slice(x, 3, 2));
}

TEST_CASE("constant offset shifts values but passes gradients through") {
  Tensor x = Tensor::from_values({3}, {1, 1, 1}, true);
  std::vector<double> off = {0.5, -0.5, 2.0};
  Tensor y = add_constant_offset(x, off);
  CHECK(y.values()[0] == 1.5);
  CHECK(y.values()[2] == 3.0);
  backward(sum_all(scale(y, 3.0)));
  for (double g : x.grad()) CHECK(g == doctest::Approx(3.0));
}

TEST_CASE("mse of identical vectors is zero") {
  Tensor p = Tensor::from_values({3}, {0.1, 0.2, 0.3}, true);
  std::vector<double> t = {0.1, 0.2, 0.3};
  CHECK(mse_loss(p, t).scalar() == doctest::Approx(0.0));
}

TEST_CASE("mse matches hand value and gradient") {
  // mean((p-t)^2) over 2 elems; p=(1,2), t=(0,0) -> (1+4)/2 = 2.5
  Tensor p = Tensor::from_values({2}, {1, 2}, true);
  std::vector<double> t = {0, 0};
  Tensor l = mse_loss(p, t);
  CHECK(l.scalar() == doctest::Approx(2.5));
  backward(l);
  CHECK(p.grad()[0] == doctest::Approx(1.0));  // 2*(p-t)/n
  CHECK(p.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("cross entropy on uniform logits equals log of class count") {
  Tensor logits = Tensor::zeros({1, 4}, true);
  std::vector<int> label = {2};
  CHECK(cross_entropy_loss(logits, label).scalar() ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("cross entropy on confident correct logits is tiny") {
  Tensor logits = Tensor::from_values({1, 2}, {10.0, -10.0}, true);
  std::vector<int> label = {0};
  double ce = cross_entropy_loss(logits, label).scalar();
  CHECK(ce == doctest::Approx(2.06e-9).epsilon(0.01));
}

TEST_CASE("cross entropy stays finite for logits up to 1e3") {
  Tensor logits = Tensor::from_values({1, 3}, {1e3, -1e3, 500.0}, true);
  std::vector<int> label = {1};
  double ce = cross_entropy_loss(logits, label).scalar();
  CHECK(std::isfinite(ce));
  backward(cross_entropy_loss(logits, label));
  for (double g : logits.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Tensor logits = Tensor::zeros({1, 3});
  std::vector<int> bad_hi = {3}, bad_lo = {-1};
  CHECK_THROWS(cross_entropy_loss(logits, bad_hi));
  CHECK_THROWS(cross_entropy_loss(logits, bad_lo));
}

TEST_CASE("batched cross entropy averages per-row losses") {
  Tensor logits = Tensor::zeros({2, 4}, true);
  std::vector<int> labels = {0, 3};
  CHECK(cross_entropy_loss(logits, labels).scalar() ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("backward_from seeds mid-graph cotangents") {
  // y = 2x; inject dL/dy = (3, 4) -> dL/dx = (6, 8)
  Tensor x = Tensor::from_values({2}, {1, 1}, true);
  Tensor y = scale(x, 2.0);
  std::vector<double> cot = {3, 4};
  backward_from(y, cot);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  std::vector<double> wrong(3, 1.0);
  CHECK_THROWS(backward_from(y, wrong));
}

TEST_CASE("graphs through constant branches skip gradient work") {
  Tensor x = Tensor::from_values({2}, {1, 2}, true);
  Tensor c = Tensor::from_values({2}, {5, 5});  // no grad
  Tensor y = add(mul(x, c), c);
  backward(sum_all(y));
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK_FALSE(c.has_grad());
}

TEST_CASE("activations match closed forms at sample points") {
  Tensor x = Tensor::from_values({3}, {-1.0, 0.0, 2.0}, true);
  Tensor t = tanh_op(x);
  CHECK(t.values()[0] == doctest::Approx(std::tanh(-1.0)));
  CHECK(t.values()[1] == 0.0);
  Tensor s = sigmoid_op(x);
  CHECK(s.values()[1] == doctest::Approx(0.5));
  Tensor r = relu_op(x);
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[2] == 2.0);
  backward(sum_all(t));
  CHECK(x.grad()[1] == doctest::Approx(1.0));  // tanh'(0) = 1
}

TEST_CASE("randn is reproducible from equal streams") {
  RngStream r1(7, 3), r2(7, 3);
  Tensor a = Tensor::randn({4, 4}, r1, 0.5);
  Tensor b = Tensor::randn({4, 4}, r2, 0.5);
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);
}

TEST_CASE("clone_detached copies values but drops history") {
  Tensor x = Tensor::from_values({2}, {1, 2}, true);
  Tensor y = scale(x, 3.0);
  Tensor z = y.clone_detached();
  CHECK(z.values()[1] == 6.0);
  z.values_mut()[0] = 99.0;
  CHECK(y.values()[0] == 3.0);
  CHECK(z.node()->parents.empty());
}

}  // TEST_SUITE
