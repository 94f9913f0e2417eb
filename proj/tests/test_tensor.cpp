#include <doctest.h>

#include <random>

#include "mmca/tensor.hpp"
#include "test_util.hpp"

using namespace mmca;
using mmca::test::gradient_check;
using mmca::test::random_tensor;
using mmca::test::weighted_sum;

TEST_SUITE("tensor") {

TEST_CASE("softmax of equal logits is uniform") {
  Tensor t({2, 5}, std::vector<double>(10, 3.7));
  Tensor s = softmax(t, -1);
  for (double v : s.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(11);
  Tensor t = random_tensor({3, 4, 6}, rng, -5.0, 5.0);
  Tensor s = softmax(t, -1);
  for (int r = 0; r < 12; ++r) {
    double acc = 0.0;
    for (int j = 0; j < 6; ++j) acc += s.data()[r * 6 + j];
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("matmul identity") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({4, 4}, rng);
  Tensor eye = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) eye.data()[i * 4 + i] = 1.0;
  Tensor y = matmul(eye, x);
  for (int i = 0; i < 16; ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-15));
}

TEST_CASE("matmul shape mismatch names the op and shapes") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       "matmul: incompatible shapes [2x3] and [4x2]",
                       std::invalid_argument);
}

TEST_CASE("batched matmul broadcasts weight matrices") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({2, 3, 4, 5}, rng);
  Tensor w = random_tensor({5, 6}, rng);
  Tensor y = matmul(a, w);
  REQUIRE(y.shape() == Shape{2, 3, 4, 6});
  // spot-check one batch element against a plain loop
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 5; ++k)
        acc += a.data()[(1 * 3 + 2) * 20 + i * 5 + k] * w.data()[k * 6 + j];
      CHECK(y.data()[(1 * 3 + 2) * 24 + i * 6 + j] ==
            doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm centers and scales the last axis") {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({6, 8}, rng, -3.0, 3.0);
  Tensor gamma = Tensor::full({8}, 1.0);
  Tensor beta = Tensor::zeros({8});
  Tensor y = layer_norm(x, gamma, beta);
  for (int r = 0; r < 6; ++r) {
    double m = 0.0, v = 0.0;
    for (int j = 0; j < 8; ++j) m += y.data()[r * 8 + j];
    m /= 8;
    for (int j = 0; j < 8; ++j) {
      double d = y.data()[r * 8 + j] - m;
      v += d * d;
    }
    v /= 8;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("gradients of every core op match finite differences") {
  std::mt19937_64 rng(42);
  auto check = [&](const char* name, auto fn, std::vector<Tensor> inputs) {
    // Fixed random weights reduce the op output to a scalar so the whole
    // Jacobian is exercised, not just the row sums.
    Tensor w;
    auto scalar = [&](const std::vector<Tensor>& in) {
      Tensor y = fn(in);
      if (!w.defined()) {
        std::mt19937_64 r2(99);
        w = Tensor::uniform(y.shape(), r2, -1.0, 1.0, false);
      }
      return sum(mul(y, w));
    };
    double err = gradient_check(scalar, inputs);
    INFO(name);
    CHECK(err < 1e-4);
  };

  check("add", [](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  check("add broadcast",
        [](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
        {random_tensor({3, 4}, rng), random_tensor({4}, rng)});
  check("sub", [](const std::vector<Tensor>& in) { return sub(in[0], in[1]); },
        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  check("mul broadcast",
        [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); },
        {random_tensor({2, 3, 4}, rng), random_tensor({3, 1}, rng)});
  check("div", [](const std::vector<Tensor>& in) { return div(in[0], in[1]); },
        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng, 0.5, 2.0)});
  check("matmul",
        [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
        {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
  check("batched matmul",
        [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
        {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)});
  check("matmul weight broadcast",
        [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
        {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng)});
  check("transpose",
        [](const std::vector<Tensor>& in) { return transpose(in[0], 0, 2); },
        {random_tensor({2, 3, 4}, rng)});
  check("reshape",
        [](const std::vector<Tensor>& in) { return reshape(in[0], {4, 3}); },
        {random_tensor({3, 4}, rng)});
  check("broadcast_to",
        [](const std::vector<Tensor>& in) {
          return broadcast_to(in[0], {5, 3, 4});
        },
        {random_tensor({3, 4}, rng)});
  check("concat",
        [](const std::vector<Tensor>& in) {
          return concat({in[0], in[1]}, -1);
        },
        {random_tensor({3, 4}, rng), random_tensor({3, 2}, rng)});
  check("concat axis 0",
        [](const std::vector<Tensor>& in) {
          return concat({in[0], in[1]}, 0);
        },
        {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng)});
  check("slice",
        [](const std::vector<Tensor>& in) { return slice(in[0], 1, 1, 2); },
        {random_tensor({3, 4}, rng)});
  check("softmax",
        [](const std::vector<Tensor>& in) { return softmax(in[0], -1); },
        {random_tensor({3, 4}, rng, -2.0, 2.0)});
  check("softmax axis 0",
        [](const std::vector<Tensor>& in) { return softmax(in[0], 0); },
        {random_tensor({3, 4}, rng, -2.0, 2.0)});
  check("layer_norm",
        [](const std::vector<Tensor>& in) {
          return layer_norm(in[0], in[1], in[2]);
        },
        {random_tensor({3, 4}, rng), random_tensor({4}, rng, 0.5, 1.5),
         random_tensor({4}, rng)});
  check("relu",
        [](const std::vector<Tensor>& in) { return relu(in[0]); },
        {random_tensor({3, 4}, rng, 0.1, 2.0)});
  check("softplus",
        [](const std::vector<Tensor>& in) { return softplus(in[0]); },
        {random_tensor({3, 4}, rng, -2.0, 2.0)});
  check("log", [](const std::vector<Tensor>& in) { return log_t(in[0]); },
        {random_tensor({3, 4}, rng, 0.5, 3.0)});
  check("exp", [](const std::vector<Tensor>& in) { return exp_t(in[0]); },
        {random_tensor({3, 4}, rng, -1.0, 1.0)});
  check("square", [](const std::vector<Tensor>& in) { return square(in[0]); },
        {random_tensor({3, 4}, rng)});
  check("lgamma", [](const std::vector<Tensor>& in) { return lgamma_t(in[0]); },
        {random_tensor({3, 4}, rng, 1.0, 6.0)});
  check("mean", [](const std::vector<Tensor>& in) { return mean(in[0]); },
        {random_tensor({3, 4}, rng)});
  check("embedding_lookup",
        [](const std::vector<Tensor>& in) {
          return embedding_lookup(in[0], {0, 2, 2, 1});
        },
        {random_tensor({3, 4}, rng)});
}

TEST_CASE("a tensor used twice accumulates both path gradients") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({3, 3}, rng);
  // f = sum(x*x + x*x) vs g = sum(2*x*x): gradients must agree
  Tensor f = sum(add(mul(x, x), mul(x, x)));
  x.zero_grad();
  f.backward();
  auto g1 = x.grad();

  Tensor g = sum(mul_scalar(mul(x, x), 2.0));
  x.zero_grad();
  g.backward();
  auto g2 = x.grad();
  for (size_t i = 0; i < g1.size(); ++i)
    CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-12));
}

TEST_CASE("dropout is identity at inference and seeded at train time") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({50}, rng);
  std::mt19937_64 r1(77);
  Tensor off = dropout(x, 0.5, r1, /*train=*/false);
  for (int i = 0; i < 50; ++i) CHECK(off.data()[i] == x.data()[i]);

  std::mt19937_64 r2(77), r3(77);
  Tensor a = dropout(x, 0.5, r2, true);
  Tensor b = dropout(x, 0.5, r3, true);
  for (int i = 0; i < 50; ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("composite graph gradient matches finite differences") {
  std::mt19937_64 rng(21);
  std::vector<Tensor> inputs{random_tensor({3, 4}, rng),
                             random_tensor({4, 4}, rng),
                             random_tensor({4}, rng, 0.5, 1.5),
                             random_tensor({4}, rng)};
  auto fn = [](const std::vector<Tensor>& in) {
    Tensor h = softmax(matmul(in[0], in[1]), -1);
    Tensor n = layer_norm(h, in[2], in[3]);
    return mean(square(add(n, relu(matmul(in[0], in[1])))));
  };
  CHECK(gradient_check(fn, inputs) < 1e-4);
}

}  // TEST_SUITE
