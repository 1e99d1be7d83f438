#include <cmath>
#include <cstring>
#include <vector>

#include <doctest.h>

#include "corella/autodiff.hpp"
#include "corella/rng.hpp"

using namespace corella;
namespace adx = corella::ad;

TEST_CASE("matmul of ones counts the contraction length") {
  adx::Tensor a = adx::Tensor::constant({2, 3}, std::vector<double>(6, 1.0));
  adx::Tensor b = adx::Tensor::constant({3, 2}, std::vector<double>(6, 1.0));
  adx::Tensor c = adx::matmul(a, b);
  REQUIRE(c.shape() == std::vector<int>({2, 2}));
  for (double v : c.value()) CHECK(v == 3.0);
}

TEST_CASE("sigmoid at zero is one half") {
  adx::Tensor x = adx::Tensor::constant({1}, {0.0});
  CHECK(adx::sigmoid(x).value()[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax of a constant row is uniform") {
  for (double c : {-7.5, 0.0, 3.25, 1e4}) {
    adx::Tensor x = adx::Tensor::constant({3}, {c, c, c});
    const auto y = adx::softmax_rows(x).value();
    for (double v : y) CHECK(std::abs(v - 1.0 / 3.0) < 1e-15);
  }
}

TEST_CASE("softmax rows sum to one and shift-invariance holds") {
  Rng rng(11);
  adx::Tensor x = adx::Tensor::randn({5, 7}, rng, 2.0, false);
  const auto y = adx::softmax_rows(x).value();
  for (int i = 0; i < 5; ++i) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += y[static_cast<std::size_t>(i) * 7 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  std::vector<double> shifted = x.value();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) shifted[static_cast<std::size_t>(i) * 7 + j] += 13.5;
  const auto y2 = adx::softmax_rows(adx::Tensor::constant({5, 7}, shifted)).value();
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - y2[i]) < 1e-12);
}

TEST_CASE("backward of sum gives all-ones") {
  adx::Tensor x = adx::Tensor::param({2, 3}, {1, -2, 3, 4, -5, 6});
  adx::backward(adx::sum_all(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
  adx::Tensor w = adx::Tensor::param({1}, {0.0});
  adx::backward(adx::sum_all(adx::sigmoid(w)));
  CHECK(w.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("bce-of-sigmoid gradient matches the finite-difference oracle") {
  // d/dz BCE(sigmoid(z), y=1) at z = 0: central difference gives -0.5.
  auto f = [](double z) {
    adx::Tensor w = adx::Tensor::param({1}, {z});
    return adx::bce_mean(adx::sigmoid(w), {1.0}).scalar_value();
  };
  const double h = 1e-5;
  const double central = (f(h) - f(-h)) / (2.0 * h);
  CHECK(central == doctest::Approx(-0.5).epsilon(1e-8));

  adx::Tensor w = adx::Tensor::param({1}, {0.0});
  adx::backward(adx::bce_mean(adx::sigmoid(w), {1.0}));
  CHECK(w.grad()[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(std::abs(w.grad()[0] - central) < 1e-6);
}

TEST_CASE("diamond-shaped graph accumulates both paths") {
  // y = s*s + s with s = sigmoid(x); dy/dx = (2s + 1) * s(1-s).
  const double x0 = 0.3;
  adx::Tensor x = adx::Tensor::param({1}, {x0});
  adx::Tensor s = adx::sigmoid(x);
  adx::backward(adx::sum_all(adx::add(adx::mul(s, s), s)));
  const double sv = 1.0 / (1.0 + std::exp(-x0));
  const double expected = (2.0 * sv + 1.0) * sv * (1.0 - sv);
  CHECK(x.grad()[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("grad_check on a sum of squares is essentially exact") {
  Rng rng(3);
  adx::GradCheckCase c;
  c.leaves = {adx::Tensor::randn({4, 3}, rng, 1.0)};
  c.build = [](const std::vector<adx::Tensor>& l) { return adx::sum_all(adx::pow_const(l[0], 2.0)); };
  Rng check_rng(7);
  CHECK(adx::grad_check(c, 200, 1e-5, check_rng) < 1e-8);
}

TEST_CASE("every registered op passes grad_check over random shapes") {
  for (const adx::OpCheck& op : adx::op_check_registry()) {
    CAPTURE(op.name);
    Rng rng(0xC0FFEE);
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      adx::GradCheckCase c = op.make(rng);
      worst = std::max(worst, adx::grad_check(c, 15, 1e-5, rng));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("backward rejects a non-scalar root") {
  adx::Tensor x = adx::Tensor::param({2}, {1.0, 2.0});
  CHECK_THROWS_AS(adx::backward(adx::scale(x, 2.0)), adx::AutodiffError);
}

TEST_CASE("backward twice on the same root is rejected") {
  adx::Tensor x = adx::Tensor::param({2}, {1.0, 2.0});
  adx::Tensor root = adx::sum_all(x);
  adx::backward(root);
  CHECK_THROWS_AS(adx::backward(root), adx::AutodiffError);
}

TEST_CASE("backward rejects a graph whose parameters changed after forward") {
  adx::Tensor x = adx::Tensor::param({2}, {1.0, 2.0});
  adx::Tensor root = adx::sum_all(adx::pow_const(x, 2.0));
  x.set_value(0, 5.0);
  CHECK_THROWS_AS(adx::backward(root), adx::AutodiffError);
}

TEST_CASE("backward on distinct roots accumulates additively into shared leaves") {
  adx::Tensor x = adx::Tensor::param({2}, {1.0, 2.0});
  adx::Tensor mid = adx::scale(x, 3.0);
  adx::backward(adx::sum_all(mid));                    // d/dx = 3
  adx::backward(adx::sum_all(adx::mul(mid, mid)));     // d/dx = 18x
  CHECK(x.grad()[0] == doctest::Approx(3.0 + 18.0 * 1.0).epsilon(1e-14));
  CHECK(x.grad()[1] == doctest::Approx(3.0 + 18.0 * 2.0).epsilon(1e-14));
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
  adx::Tensor a = adx::Tensor::param({2, 3}, std::vector<double>(6, 1.0));
  adx::Tensor b = adx::Tensor::param({2, 2}, std::vector<double>(4, 1.0));
  try {
    adx::add(a, b);
    FAIL("expected AutodiffError");
  } catch (const adx::AutodiffError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("log rejects non-positive input, non-finite results carry the op tag") {
  adx::Tensor x = adx::Tensor::param({1}, {0.0});
  CHECK_THROWS_AS(adx::log(x), adx::AutodiffError);
  adx::Tensor big = adx::Tensor::param({1}, {1e308});
  try {
    adx::add(big, big);
    FAIL("expected AutodiffError");
  } catch (const adx::AutodiffError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("same seed and graph give bit-identical values and grads") {
  auto run = [] {
    Rng rng(99);
    adx::Tensor a = adx::Tensor::randn({4, 4}, rng, 1.0);
    adx::Tensor b = adx::Tensor::randn({4, 4}, rng, 1.0);
    adx::Tensor root = adx::mean_all(adx::gelu(adx::matmul(a, b)));
    adx::backward(root);
    return std::tuple{root.scalar_value(), a.grad(), b.grad()};
  };
  const auto [v1, ga1, gb1] = run();
  const auto [v2, ga2, gb2] = run();
  CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
  CHECK(std::memcmp(ga1.data(), ga2.data(), ga1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(gb1.data(), gb2.data(), gb1.size() * sizeof(double)) == 0);
}

TEST_CASE("attention rows sum to one under the causal mask") {
  Rng rng(5);
  const int len = 6, d = 4;
  adx::Tensor q = adx::Tensor::randn({len, d}, rng, 1.0, false);
  adx::Tensor k = adx::Tensor::randn({len, d}, rng, 1.0, false);
  adx::Tensor scores = adx::scale(adx::matmul(q, adx::transpose(k)), 1.0 / std::sqrt(4.0));
  std::vector<double> mask(len * len, 0.0);
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j) mask[static_cast<std::size_t>(i) * len + j] = -1e9;
  const auto w = adx::softmax_rows(adx::add(scores, adx::Tensor::constant({len, len}, mask))).value();
  for (int i = 0; i < len; ++i) {
    double s = 0.0;
    for (int j = 0; j < len; ++j) {
      s += w[static_cast<std::size_t>(i) * len + j];
      if (j > i) CHECK(w[static_cast<std::size_t>(i) * len + j] == 0.0);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("rng stream is deterministic and named") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(std::string(Rng::algorithm_id()) == "splitmix64");
}
