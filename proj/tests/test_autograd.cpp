#include <cmath>
#include <random>

#include "doctest.h"
#include "isrkd/adam.hpp"
#include "isrkd/ops.hpp"
#include "oracles.hpp"

using namespace isrkd;

namespace {

std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace

TEST_CASE("tensor shape invariants") {
  auto t = Tensor32::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK_FALSE(t.has_grad());
  t.zero_grad();
  CHECK(t.grad().size() == t.numel());
  CHECK_THROWS_AS(Tensor32::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("conv2d pointwise scaling and valid sum") {
  auto x = Tensor32::full({1, 1, 3, 3}, 1.0f);
  auto w = Tensor32::from({1, 1, 1, 1}, {2.0f});
  auto b = Tensor32::zeros({1});
  auto y = conv2d(x, w, b, 1, Padding::same);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (float v : y.data()) CHECK(v == 2.0f);

  auto x2 = Tensor32::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w2 = Tensor32::full({1, 1, 2, 2}, 1.0f);
  auto y2 = conv2d(x2, w2, b, 1, Padding::valid);
  CHECK(y2.shape() == Shape{1, 1, 1, 1});
  CHECK(y2.item() == 10.0f);
}

TEST_CASE("conv2d matches nested-loop oracle, stride 2 SAME") {
  auto rng = rng_for(11);
  auto x = oracle::random_tensor<float>({2, 3, 8, 8}, rng);
  auto w = oracle::random_tensor<float>({4, 3, 3, 3}, rng);
  auto b = oracle::random_tensor<float>({4}, rng);
  auto y = conv2d(x, w, b, 2, Padding::same);
  CHECK(y.shape() == Shape{2, 4, 4, 4});
  CHECK(oracle::max_relative_error(y.data(), oracle::conv2d(x, w, b, 2, true)) < 1e-5);
}

TEST_CASE("conv2d SAME puts the odd padding row at the bottom") {
  // 4x4 input, 2x2 kernel, stride 1: total pad 1, all of it bottom/right.
  auto x = Tensor64::from({1, 1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  auto w = Tensor64::from({1, 1, 2, 2}, {1, 0, 0, 0});
  auto y = conv2d(x, w, Tensor64::zeros({1}), 1, Padding::same);
  // Top-left tap means y(i,j) = x(i,j) when padding is bottom/right only.
  for (std::size_t i = 0; i < 16; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d shape errors name both shapes") {
  auto x = Tensor32::zeros({1, 3, 8, 8});
  auto w = Tensor32::zeros({4, 2, 3, 3});
  try {
    conv2d(x, w, Tensor32::zeros({4}), 1, Padding::same);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x3x8x8]") != std::string::npos);
    CHECK(msg.find("[4x2x3x3]") != std::string::npos);
  }
}

TEST_CASE("transpose_conv2d zero insertion with a 1-tap kernel") {
  auto x = Tensor32::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w = Tensor32::from({1, 1, 1, 1}, {1});
  auto y = transpose_conv2d(x, w, Tensor32::zeros({1}), 2);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  const std::vector<float> expected = {1, 0, 2, 0, 0, 0, 0, 0, 3, 0, 4, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < 16; ++i) CHECK(y.data()[i] == expected[i]);
}

TEST_CASE("transpose_conv2d doubles 16x16 feature maps") {
  auto rng = rng_for(3);
  auto x = oracle::random_tensor<float>({1, 5, 16, 16}, rng);
  auto w = oracle::random_tensor<float>({5, 5, 4, 4}, rng);
  auto y = transpose_conv2d(x, w, Tensor32::zeros({5}), 2);
  CHECK(y.shape() == Shape{1, 5, 32, 32});
  CHECK(oracle::max_relative_error(y.data(), oracle::transpose_conv2d(x, w, Tensor32::zeros({5}), 2)) <
        1e-5);
}

TEST_CASE("transpose_conv2d is the adjoint of conv2d") {
  auto rng = rng_for(5);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = oracle::random_tensor<double>({2, 3, 6, 6}, rng);   // small side
    auto y = oracle::random_tensor<double>({2, 4, 12, 12}, rng); // large side
    auto w = oracle::random_tensor<double>({3, 4, 4, 4}, rng);
    auto tx = transpose_conv2d(x, w, Tensor64::zeros({4}), 2);
    auto cy = conv2d(y, w, Tensor64::zeros({3}), 2, Padding::same);
    CHECK(oracle::dot(tx.data(), y.data()) == doctest::Approx(oracle::dot(x.data(), cy.data())).epsilon(1e-10));
  }
}

TEST_CASE("transpose_conv2d input gradient equals conv2d forward") {
  auto rng = rng_for(6);
  auto x = oracle::random_tensor<double>({1, 2, 4, 4}, rng, -1.0, 1.0, true);
  auto w = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
  auto g = oracle::random_tensor<double>({1, 3, 8, 8}, rng);
  sum(mul(transpose_conv2d(x, w, Tensor64::zeros({3}), 2), g)).backward();
  auto expected = conv2d(g, w, Tensor64::zeros({2}), 2, Padding::same);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(expected.data()[i]));
}

TEST_CASE("avg_pool2d window means") {
  auto c = Tensor32::full({1, 2, 9, 9}, 0.375f);
  auto pooled = avg_pool2d(c, 5);
  for (float v : pooled.data()) CHECK(v == doctest::Approx(0.375f).epsilon(1e-7));

  std::vector<float> spike(25, 0.0f);
  spike[12] = 1.0f;
  auto y = avg_pool2d(Tensor32::from({1, 1, 5, 5}, spike), 5);
  CHECK(y.data()[12] == doctest::Approx(1.0 / 25.0));

  auto rng = rng_for(9);
  auto x = oracle::random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
  CHECK(oracle::max_relative_error(avg_pool2d(x, 5).data(), oracle::avg_pool2d(x, 5)) < 1e-6);
  // Even kernel: extra tap on the bottom/right.
  CHECK(oracle::max_relative_error(avg_pool2d(x, 10).data(), oracle::avg_pool2d(x, 10)) < 1e-6);
}

TEST_CASE("avg_pool2d rejects kernels larger than twice the input") {
  CHECK_THROWS_AS(avg_pool2d(Tensor32::zeros({1, 1, 4, 4}), 9), ShapeError);
  CHECK_NOTHROW(avg_pool2d(Tensor32::zeros({1, 1, 4, 4}), 8));
}

TEST_CASE("relu and leaky_relu") {
  auto x = Tensor32::from({3}, {-1, 0, 2});
  auto r = relu(x);
  CHECK(std::vector<float>(r.data().begin(), r.data().end()) == std::vector<float>{0, 0, 2});
  auto l = leaky_relu(x, 0.2f);
  CHECK(l.data()[0] == doctest::Approx(-0.2f));
  CHECK(l.data()[1] == 0.0f);
  CHECK(l.data()[2] == 2.0f);

  auto neg = Tensor64::from({1}, {-3.0}, true);
  sum(leaky_relu(neg, 0.2)).backward();
  CHECK(neg.grad()[0] == doctest::Approx(0.2));

  auto zero = Tensor64::from({1}, {0.0}, true);
  sum(leaky_relu(zero, 0.2)).backward();
  CHECK(zero.grad()[0] == 0.0);
}

TEST_CASE("dense affine map") {
  auto x = Tensor32::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto eye = Tensor32::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto b = Tensor32::from({3}, {0.5f, -1.0f, 2.0f});
  auto y = dense(x, eye, b);
  for (std::size_t i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i] + b.data()[i % 3]);
  auto z = dense(x, Tensor32::zeros({3, 3}), b);
  for (std::size_t i = 0; i < 6; ++i) CHECK(z.data()[i] == b.data()[i % 3]);

  auto rng = rng_for(13);
  auto xr = oracle::random_tensor<float>({5, 7}, rng);
  auto wr = oracle::random_tensor<float>({7, 4}, rng);
  auto br = oracle::random_tensor<float>({4}, rng);
  CHECK(oracle::max_relative_error(dense(xr, wr, br).data(), oracle::dense(xr, wr, br)) < 1e-5);
  CHECK_THROWS_AS(dense(xr, Tensor32::zeros({6, 4}), br), ShapeError);
}

TEST_CASE("backward basics") {
  auto x = Tensor64::from({2}, {1, 2}, true);
  sum(x).backward();
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 1.0);

  x.zero_grad();
  sum(square(x)).backward();
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);

  CHECK_THROWS_AS(square(x).backward(), ShapeError);
}

TEST_CASE("gradients accumulate across uses; unreachable params stay zero") {
  auto a = Tensor64::from({1}, {3.0}, true);
  auto unused = Tensor64::from({1}, {5.0}, true);
  a.zero_grad();
  unused.zero_grad();
  // loss = a*a + a  -> d/da = 2a + 1
  sum(add(mul(a, a), a)).backward();
  CHECK(a.grad()[0] == 7.0);
  CHECK(unused.grad()[0] == 0.0);
}

TEST_CASE("no-grad guard records nothing") {
  auto a = Tensor64::from({1}, {3.0}, true);
  NoGradGuard guard;
  auto y = square(a);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("concat and slice channel wiring") {
  auto rng = rng_for(21);
  auto a = oracle::random_tensor<double>({2, 3, 4, 4}, rng, -1.0, 1.0, true);
  auto b = oracle::random_tensor<double>({2, 1, 4, 4}, rng, -1.0, 1.0, true);
  auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape{2, 4, 4, 4});
  auto back = slice_channels(c, 3, 1);
  for (std::size_t i = 0; i < b.numel(); ++i) CHECK(back.data()[i] == b.data()[i]);
}

TEST_CASE("softmax rows sum to one") {
  auto x = Tensor64::from({2, 3}, {1, 2, 3, -100, 0, 100});
  auto p = softmax_rows(x);
  CHECK(p.data()[0] + p.data()[1] + p.data()[2] == doctest::Approx(1.0));
  CHECK(p.data()[3] + p.data()[4] + p.data()[5] == doctest::Approx(1.0));
}

TEST_CASE("kernel gradients match finite differences") {
  auto rng = rng_for(77);
  SUBCASE("conv2d") {
    auto x = oracle::random_tensor<double>({2, 3, 7, 7}, rng, -1.0, 1.0, true);
    auto w = oracle::random_tensor<double>({4, 3, 3, 3}, rng, -1.0, 1.0, true);
    auto b = oracle::random_tensor<double>({4}, rng, -1.0, 1.0, true);
    auto r = oracle::random_tensor<double>({2, 4, 4, 4}, rng);
    auto res = oracle::gradcheck([&] { return sum(mul(conv2d(x, w, b, 2, Padding::same), r)); },
                                 {x, w, b}, 100, rng);
    CHECK(res.worst_relative_error < 1e-4);
  }
  SUBCASE("transpose_conv2d") {
    auto x = oracle::random_tensor<double>({2, 3, 4, 4}, rng, -1.0, 1.0, true);
    auto w = oracle::random_tensor<double>({3, 2, 4, 4}, rng, -1.0, 1.0, true);
    auto b = oracle::random_tensor<double>({2}, rng, -1.0, 1.0, true);
    auto r = oracle::random_tensor<double>({2, 2, 8, 8}, rng);
    auto res = oracle::gradcheck([&] { return sum(mul(transpose_conv2d(x, w, b, 2), r)); },
                                 {x, w, b}, 100, rng);
    CHECK(res.worst_relative_error < 1e-4);
  }
  SUBCASE("avg_pool2d") {
    auto x = oracle::random_tensor<double>({1, 2, 12, 12}, rng, -1.0, 1.0, true);
    auto r = oracle::random_tensor<double>({1, 2, 12, 12}, rng);
    for (std::size_t k : {5, 7, 10}) {
      auto res = oracle::gradcheck([&] { return sum(mul(avg_pool2d(x, k), r)); }, {x}, 100, rng);
      CHECK(res.worst_relative_error < 1e-4);
    }
  }
  SUBCASE("dense") {
    auto x = oracle::random_tensor<double>({3, 6}, rng, -1.0, 1.0, true);
    auto w = oracle::random_tensor<double>({6, 5}, rng, -1.0, 1.0, true);
    auto b = oracle::random_tensor<double>({5}, rng, -1.0, 1.0, true);
    auto r = oracle::random_tensor<double>({3, 5}, rng);
    auto res = oracle::gradcheck([&] { return sum(mul(dense(x, w, b), r)); }, {x, w, b}, 100, rng);
    CHECK(res.worst_relative_error < 1e-4);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto p = Tensor64::from({3}, {1, -2, 3}, true);
  Adam<double> opt({p}, {});
  opt.zero_grad();
  opt.step();
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: closed-form first step") {
  auto p = Tensor64::from({1}, {0.5}, true);
  Adam<double> opt({p}, {.learning_rate = 1e-4, .beta1 = 0.9, .beta2 = 0.999, .epsilon = 1e-8});
  opt.zero_grad();
  sum(p).backward();  // g = 1
  opt.step();
  CHECK(p.data()[0] - 0.5 == doctest::Approx(-1e-4 / (1 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("adam: minimizing theta^2 shrinks |theta|") {
  auto p = Tensor64::from({1}, {1.0}, true);
  Adam<double> opt({p}, {.learning_rate = 1e-2});
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    opt.zero_grad();
    sum(square(p)).backward();
    opt.step();
    CHECK(std::abs(p.data()[0]) < prev);
    prev = std::abs(p.data()[0]);
  }
}

TEST_CASE("adam: missing gradient is an error") {
  auto p = Tensor64::from({1}, {1.0}, true);
  Adam<double> opt({p}, {});
  CHECK_THROWS_AS(opt.step(), Error);
}

TEST_CASE("forward passes are deterministic") {
  auto rng = rng_for(1);
  auto x = oracle::random_tensor<float>({1, 3, 16, 16}, rng);
  auto w = oracle::random_tensor<float>({8, 3, 3, 3}, rng);
  auto b = oracle::random_tensor<float>({8}, rng);
  auto y1 = conv2d(x, w, b, 1, Padding::same);
  auto y2 = conv2d(x, w, b, 1, Padding::same);
  CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}
