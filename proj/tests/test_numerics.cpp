#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "molspec/gradcheck.hpp"
#include "molspec/ops.hpp"
#include "molspec/rng.hpp"
#include "molspec/tensor.hpp"

using namespace molspec;
using namespace molspec::numerics;

TEST_CASE("tensor shape/data consistency is enforced") {
  CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1.0, 2.0}), std::invalid_argument);
  Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(t.rows() == 2);
  CHECK(t.at(1, 0) == 3.0);
}

TEST_CASE("gradients accumulate on tensor reuse") {
  Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
  Tensor loss = add(sum(x), sum(x));
  loss.backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("softmax_row matches hand-evaluated cases") {
  Tensor a = softmax_row(Tensor::from_data({1, 2}, {0.0, 0.0}));
  CHECK(a.data()[0] == doctest::Approx(0.5));
  CHECK(a.data()[1] == doctest::Approx(0.5));

  Tensor b = softmax_row(Tensor::from_data({1, 2}, {std::log(2.0), 0.0}));
  CHECK(b.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(b.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor c = softmax_row(Tensor::from_data({1, 1}, {7.3}));
  CHECK(c.data()[0] == doctest::Approx(1.0));
}

TEST_CASE("softmax_row rejects non-finite input") {
  CHECK_THROWS_AS(
      softmax_row(Tensor::from_data({1, 2}, {1.0, std::nan("")})),
      std::invalid_argument);
  CHECK_THROWS_AS(
      softmax_row(Tensor::from_data(
          {1, 2}, {std::numeric_limits<double>::infinity(), 0.0})),
      std::invalid_argument);
}

TEST_CASE("softmax_row rows sum to one and stay stable for large inputs") {
  Rng rng(7);
  Tensor x = Tensor::uniform({4, 9}, -800.0, 800.0, rng, false);
  Tensor y = softmax_row(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      const double v = y.at(r, c);
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax_row is permutation-equivariant") {
  Rng rng(13);
  std::vector<double> v(7);
  for (auto& x : v) x = rng.uniform(-3, 3);
  Tensor base = softmax_row(Tensor::from_data({1, 7}, v));

  // Rotate-by-3 permutation.
  std::vector<double> pv(7);
  for (std::size_t i = 0; i < 7; ++i) pv[i] = v[(i + 3) % 7];
  Tensor perm = softmax_row(Tensor::from_data({1, 7}, pv));
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(perm.data()[i] == doctest::Approx(base.data()[(i + 3) % 7]).epsilon(1e-15));
  }
}

TEST_CASE("batchnorm normalizes a feature column") {
  Tensor x = Tensor::from_data({2, 1}, {1.0, 3.0});
  Tensor gamma = Tensor::from_data({1}, {1.0});
  Tensor beta = Tensor::from_data({1}, {0.0});
  BatchNormState state(1);
  // mean 2, biased std 1; eps -> 0 gives exactly [-1, 1]
  Tensor y = batchnorm(x, gamma, beta, state, BatchNormMode::kTrain, 0.1, 1e-14);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-9));
  // running stats moved toward the batch stats with momentum 0.1
  CHECK(state.running_mean[0] == doctest::Approx(0.2));
  CHECK(state.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));
}

TEST_CASE("batchnorm handles a constant column via eps") {
  Tensor x = Tensor::from_data({2, 1}, {5.0, 5.0});
  Tensor gamma = Tensor::from_data({1}, {1.0});
  Tensor beta = Tensor::from_data({1}, {0.0});
  BatchNormState state(1);
  Tensor y = batchnorm(x, gamma, beta, state, BatchNormMode::kTrain);
  CHECK(y.data()[0] == doctest::Approx(0.0));
  CHECK(y.data()[1] == doctest::Approx(0.0));
}

TEST_CASE("batchnorm eval mode uses running stats only") {
  Tensor x = Tensor::from_data({2, 2}, {0.3, -1.2, 0.9, 2.0});
  Tensor gamma = Tensor::from_data({2}, {1.0, 1.0});
  Tensor beta = Tensor::from_data({2}, {0.0, 0.0});
  BatchNormState state(2);  // mean 0, var 1
  Tensor y = batchnorm(x, gamma, beta, state, BatchNormMode::kEval);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-4));
  }
  CHECK(state.running_mean[0] == 0.0);
}

TEST_CASE("batchnorm rejects an empty batch") {
  Tensor gamma = Tensor::from_data({1}, {1.0});
  Tensor beta = Tensor::from_data({1}, {0.0});
  BatchNormState state(1);
  Tensor empty = Tensor::zeros({0, 1});
  CHECK_THROWS_AS(batchnorm(empty, gamma, beta, state, BatchNormMode::kTrain),
                  std::invalid_argument);
}

TEST_CASE("batchnorm train output is invariant to a constant column shift") {
  Rng rng(21);
  Tensor x = Tensor::uniform({5, 3}, -2, 2, rng, false);
  Tensor gamma = Tensor::from_data({3}, {1.3, 0.7, 2.0});
  Tensor beta = Tensor::from_data({3}, {0.1, -0.4, 0.0});
  BatchNormState s1(3), s2(3);
  Tensor y1 = batchnorm(x, gamma, beta, s1, BatchNormMode::kTrainNoUpdate);

  std::vector<double> shifted = x.data();
  for (std::size_t r = 0; r < 5; ++r) shifted[r * 3 + 1] += 17.25;
  Tensor y2 = batchnorm(Tensor::from_data({5, 3}, shifted), gamma, beta, s2,
                        BatchNormMode::kTrainNoUpdate);
  for (std::size_t i = 0; i < y1.size(); ++i) {
    CHECK(std::abs(y1.data()[i] - y2.data()[i]) < 1e-10);
  }
}

TEST_CASE("grad_check: quadratic has derivative 6 at x=3") {
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  auto f = [&]() { return mul(x, x); };
  GradReport r = grad_check(f, {{"x", x}}, 1e-5, 1e-4);
  CHECK(r.pass);
  CHECK(r.per_param[0].analytic == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(r.per_param[0].max_rel_err < 1e-9);
}

TEST_CASE("grad_check: constant function has zero gradient") {
  Tensor x = Tensor::from_data({2}, {1.0, -2.0}, true);
  auto f = [&]() { return scale(sum(mul(x, Tensor::zeros({2}))), 1.0); };
  GradReport r = grad_check(f, {{"x", x}});
  CHECK(r.pass);
  Tensor loss = f();
  loss.backward();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("grad_check rejects eps outside its window") {
  Tensor x = Tensor::scalar(1.0, true);
  auto f = [&]() { return mul(x, x); };
  CHECK_THROWS_AS(grad_check(f, {{"x", x}}, 1e-2), std::invalid_argument);
}

TEST_CASE("grad_check rejects a non-deterministic objective") {
  Tensor x = Tensor::scalar(1.0, true);
  int calls = 0;
  auto f = [&]() {
    ++calls;
    return add_scalar(mul(x, x), static_cast<double>(calls));
  };
  CHECK_THROWS_AS(grad_check(f, {{"x", x}}), std::invalid_argument);
}

TEST_CASE("chain rule holds through a random composite of every primitive") {
  Rng rng(99);
  Tensor w1 = Tensor::uniform({4, 5}, -1, 1, rng);
  Tensor w2 = Tensor::uniform({5, 3}, -1, 1, rng);
  Tensor bias = Tensor::uniform({3}, -1, 1, rng);
  Tensor gamma = Tensor::uniform({3}, 0.5, 1.5, rng);
  Tensor beta = Tensor::uniform({3}, -0.5, 0.5, rng);
  Tensor colw = Tensor::uniform({4, 1}, 0.5, 1.5, rng);
  Tensor x = Tensor::uniform({4, 4}, -1, 1, rng, false);
  BatchNormState state(3);

  auto f = [&]() {
    Tensor h = matmul(x, w1);          // 4x5
    h = gelu(h);
    h = matmul(h, w2);                 // 4x3
    h = add_rowvec(h, bias);
    h = batchnorm(h, gamma, beta, state, BatchNormMode::kEval);
    h = mul_colvec(h, colw);
    Tensor sm = softmax_row(h);
    Tensor picked = gather_rows(sm, {0, 2, 2});
    Tensor packed = scatter_add_rows(picked, {1, 0, 1}, 2);
    Tensor tail = slice_rows(transpose(h), 1, 2);  // 2x4 -> reshaped below
    Tensor flat = concat_cols({packed, reshape(tail, {2, 4})});
    Tensor lsm = log_softmax_row(concat_rows({flat, flat}));
    return add(mean(mul(lsm, lsm)), mean(scale_rows(h, {0.5, 1.5, 2.0, 1.0})));
  };
  GradReport r = grad_check(
      f, {{"w1", w1}, {"w2", w2}, {"bias", bias}, {"gamma", gamma},
          {"beta", beta}, {"colw", colw}},
      1e-5, 1e-4);
  INFO("max rel err ", r.max_rel_err);
  CHECK(r.pass);
}

TEST_CASE("train-mode batchnorm gradient is exact for batch statistics") {
  Rng rng(5);
  Tensor x = Tensor::uniform({6, 3}, -2, 2, rng);
  Tensor gamma = Tensor::uniform({3}, 0.5, 1.5, rng);
  Tensor beta = Tensor::uniform({3}, -0.5, 0.5, rng);
  BatchNormState state(3);
  auto f = [&]() {
    Tensor y = batchnorm(x, gamma, beta, state, BatchNormMode::kTrainNoUpdate);
    return mean(mul(y, add_scalar(y, 0.3)));
  };
  GradReport r = grad_check(f, {{"x", x}, {"gamma", gamma}, {"beta", beta}});
  INFO("max rel err ", r.max_rel_err);
  CHECK(r.pass);
}

TEST_CASE("matmul agrees with a hand-computed product") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(58));
  CHECK(c.at(0, 1) == doctest::Approx(64));
  CHECK(c.at(1, 0) == doctest::Approx(139));
  CHECK(c.at(1, 1) == doctest::Approx(154));
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("rng streams are deterministic and serializable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  auto snap = a.state();
  const double x = a.uniform();
  Rng c;
  c.set_state(snap);
  CHECK(c.uniform() == x);
  CHECK(derive_seed(1, "noise") != derive_seed(1, "mask"));
  CHECK(derive_seed(1, "noise", 5) != derive_seed(1, "noise", 6));
}
