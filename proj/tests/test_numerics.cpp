#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "panda/ops.hpp"
#include "panda/rng.hpp"
#include "panda/tensor.hpp"

using namespace panda;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = false, double std_dev = 1.0) {
  return Tensor::from_data(shape, gradcheck::random_values(rng, shape, std_dev), requires_grad);
}

Tensor identity(int64_t n) {
  std::vector<float> v(static_cast<size_t>(n * n), 0.0f);
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0f;
  return Tensor::from_data({n, n}, std::move(v));
}

}  // namespace

TEST_CASE("matmul multiplies and validates shapes") {
  Rng rng(7);
  Tensor b = random_tensor(rng, {3, 3});
  Tensor ib = matmul(identity(3), b);
  for (size_t i = 0; i < b.data().size(); ++i) CHECK(ib.data()[i] == b.data()[i]);

  Tensor bi = matmul(b, identity(3));
  for (size_t i = 0; i < b.data().size(); ++i) CHECK(bi.data()[i] == b.data()[i]);

  Tensor c = matmul(Tensor::from_data({1, 1}, {2.0f}), Tensor::from_data({1, 1}, {3.0f}));
  CHECK(c.item() == 6.0f);

  Tensor a = random_tensor(rng, {5, 4});
  Tensor b2 = random_tensor(rng, {4, 3});
  Tensor prod = matmul(a, b2);
  for (int64_t i = 0; i < 5; ++i) {
    for (int64_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (int64_t t = 0; t < 4; ++t) {
        ref += static_cast<double>(a.data()[static_cast<size_t>(i * 4 + t)]) *
               static_cast<double>(b2.data()[static_cast<size_t>(t * 3 + j)]);
      }
      CHECK(std::abs(prod.data()[static_cast<size_t>(i * 3 + j)] - ref) <= 1e-6);
    }
  }

  CHECK_THROWS_WITH_AS(matmul(a, random_tensor(rng, {5, 2})),
                       doctest::Contains("[5x4] vs [5x2]"), std::invalid_argument);
}

TEST_CASE("softmax normalizes with max subtraction") {
  Tensor flat = softmax(Tensor::from_data({4}, {2.5f, 2.5f, 2.5f, 2.5f}), 0);
  for (float v : flat.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));

  Rng rng(11);
  Tensor x = random_tensor(rng, {8});
  Tensor y = softmax(x, 0);

  // direct exp/sum oracle
  double denom = 0.0;
  for (float v : x.data()) denom += std::exp(static_cast<double>(v));
  for (size_t i = 0; i < 8; ++i) {
    CHECK(std::abs(y.data()[i] - std::exp(static_cast<double>(x.data()[i])) / denom) <= 1e-6);
  }

  // shift invariance
  std::vector<float> shifted(x.data());
  for (float& v : shifted) v += 13.0f;
  Tensor ys = softmax(Tensor::from_data({8}, shifted), 0);
  for (size_t i = 0; i < 8; ++i) CHECK(std::abs(ys.data()[i] - y.data()[i]) <= 1e-6);

  // rows sum to 1 even at the edge of the supported input range
  std::vector<float> wide(6 * 5);
  for (float& v : wide) v = static_cast<float>(rng.canonical() * 100.0 - 50.0);
  Tensor rows = softmax(Tensor::from_data({6, 5}, wide), -1);
  for (int64_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < 5; ++j) s += rows.data()[static_cast<size_t>(i * 5 + j)];
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("softmax works along a leading axis") {
  Rng rng(12);
  Tensor x = random_tensor(rng, {3, 4});
  Tensor y = softmax(x, 0);
  for (int64_t j = 0; j < 4; ++j) {
    double denom = 0.0;
    for (int64_t i = 0; i < 3; ++i) denom += std::exp(static_cast<double>(x.data()[static_cast<size_t>(i * 4 + j)]));
    for (int64_t i = 0; i < 3; ++i) {
      double ref = std::exp(static_cast<double>(x.data()[static_cast<size_t>(i * 4 + j)])) / denom;
      CHECK(std::abs(y.data()[static_cast<size_t>(i * 4 + j)] - ref) <= 1e-6);
    }
  }
}

TEST_CASE("cross_entropy_masked averages -log p over masked positions") {
  // uniform logits: loss is ln V regardless of mask
  Tensor uniform = Tensor::full({3, 16}, 0.37f);
  Tensor loss = cross_entropy_masked(uniform, {4, 9, 0}, {1, 0, 1});
  CHECK(loss.item_f64() == doctest::Approx(std::log(16.0)).epsilon(1e-6));

  // a huge logit on the target drives the loss to zero
  std::vector<float> peaked(2 * 8, 0.0f);
  peaked[5] = 50.0f;
  Tensor sure = cross_entropy_masked(Tensor::from_data({2, 8}, peaked), {5, 1}, {1, 0});
  CHECK(sure.item_f64() <= 1e-6);

  // random case against a scalar loop
  Rng rng(21);
  Tensor logits = random_tensor(rng, {5, 7});
  std::vector<int32_t> targets = {3, 0, 6, 2, 5};
  std::vector<uint8_t> mask = {1, 1, 0, 1, 0};
  double ref = 0.0;
  int n = 0;
  for (int64_t t = 0; t < 5; ++t) {
    if (!mask[static_cast<size_t>(t)]) continue;
    double denom = 0.0;
    for (int64_t j = 0; j < 7; ++j) denom += std::exp(static_cast<double>(logits.data()[static_cast<size_t>(t * 7 + j)]));
    ref -= std::log(std::exp(static_cast<double>(logits.data()[static_cast<size_t>(t * 7 + targets[static_cast<size_t>(t)])])) / denom);
    ++n;
  }
  ref /= n;
  Tensor got = cross_entropy_masked(logits, targets, mask);
  CHECK(std::abs(got.item_f64() - ref) <= 1e-6);

  CHECK_THROWS_WITH_AS(cross_entropy_masked(logits, targets, {0, 0, 0, 0, 0}),
                       doctest::Contains("mask selects no positions"), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy_masked(logits, {3, 0, 6, 2, 7}, {1, 1, 1, 1, 1}),
                  std::out_of_range);
}

TEST_CASE("cross_entropy_masked ignores logits at unmasked positions") {
  Rng rng(22);
  Tensor logits = random_tensor(rng, {4, 6});
  std::vector<int32_t> targets = {1, 5, 0, 3};
  std::vector<uint8_t> mask = {1, 0, 1, 0};
  double base = cross_entropy_masked(logits, targets, mask).item_f64();

  std::vector<float> tampered(logits.data());
  for (int64_t j = 0; j < 6; ++j) {
    tampered[static_cast<size_t>(1 * 6 + j)] = 1e6f;
    tampered[static_cast<size_t>(3 * 6 + j)] = -42.0f;
  }
  double same = cross_entropy_masked(Tensor::from_data({4, 6}, tampered), targets, mask).item_f64();
  CHECK(same == base);
}

TEST_CASE("backward on simple expressions") {
  // d(x*x)/dx = 2x
  Tensor x = Tensor::from_data({1}, {3.0f}, true);
  Gradients g = backward(sum(x * x));
  CHECK(g.grad_for(x).data()[0] == doctest::Approx(6.0));

  // a parameter the loss never touches reads back as zero
  Tensor unused = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  CHECK_FALSE(g.contains(unused));
  Tensor zero_grad = g.grad_for(unused);
  for (float v : zero_grad.data()) CHECK(v == 0.0f);

  // gradient accumulates when a tensor feeds the loss twice
  Tensor y = Tensor::from_data({1}, {2.0f}, true);
  Gradients g2 = backward(sum(add(y * y, y * 3.0)));
  Tensor gy = g2.grad_for(y);
  CHECK(gy.data()[0] == doctest::Approx(7.0));

  CHECK_THROWS_WITH_AS(backward(add(unused, unused)), doctest::Contains("scalar"),
                       std::invalid_argument);
}

TEST_CASE("reshape shares storage and transpose round-trips") {
  Rng rng(31);
  Tensor x = random_tensor(rng, {3, 4});
  Tensor flat = reshape(x, {12});
  CHECK(&flat.data() == &x.data());
  CHECK_THROWS_AS(reshape(x, {5, 3}), std::invalid_argument);

  Tensor tt = transpose(transpose(x));
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(tt.data()[i] == x.data()[i]);
}

TEST_CASE("causal_mask zeroes future attention weights") {
  Rng rng(32);
  Tensor scores = random_tensor(rng, {4, 4});
  Tensor w = softmax(causal_mask(scores), -1);
  for (int64_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < 4; ++j) {
      float v = w.data()[static_cast<size_t>(i * 4 + j)];
      if (j > i) CHECK(v == 0.0f);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  CHECK_THROWS_AS(causal_mask(random_tensor(rng, {3, 4})), std::invalid_argument);
}

TEST_CASE("slice and concat are inverse column operations") {
  Rng rng(33);
  Tensor x = random_tensor(rng, {3, 6});
  Tensor back = concat_cols({slice_cols(x, 0, 2), slice_cols(x, 2, 5), slice_cols(x, 5, 6)});
  CHECK(back.shape() == x.shape());
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(back.data()[i] == x.data()[i]);
  CHECK_THROWS_AS(slice_cols(x, 4, 3), std::invalid_argument);
  CHECK_THROWS_AS(slice_cols(x, 0, 7), std::invalid_argument);
}

TEST_CASE("embedding_lookup gathers rows and bounds-checks ids") {
  Rng rng(34);
  Tensor table = random_tensor(rng, {5, 3});
  Tensor rows = embedding_lookup(table, {4, 0, 4});
  CHECK(rows.shape() == Shape{3, 3});
  for (int64_t j = 0; j < 3; ++j) {
    CHECK(rows.data()[static_cast<size_t>(j)] == table.data()[static_cast<size_t>(4 * 3 + j)]);
    CHECK(rows.data()[static_cast<size_t>(3 + j)] == table.data()[static_cast<size_t>(j)]);
  }
  CHECK_THROWS_AS(embedding_lookup(table, {5}), std::out_of_range);
  CHECK_THROWS_AS(embedding_lookup(table, {-1}), std::out_of_range);
}

TEST_CASE("finite differences validate every op gradient") {
  Rng rng(101);
  const double tol = 1e-3;

  auto weighted_sum = [](const Tensor& y, const Tensor& r) { return sum(y * r); };

  SUBCASE("matmul") {
    Tensor r = random_tensor(rng, {3, 2});
    auto report = gradcheck::run(
        {{3, 4}, {4, 2}},
        {gradcheck::random_values(rng, {3, 4}), gradcheck::random_values(rng, {4, 2})},
        [&](const std::vector<Tensor>& p) { return weighted_sum(matmul(p[0], p[1]), r); });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("transpose") {
    Tensor r = random_tensor(rng, {4, 3});
    auto report = gradcheck::run(
        {{3, 4}}, {gradcheck::random_values(rng, {3, 4})},
        [&](const std::vector<Tensor>& p) { return weighted_sum(transpose(p[0]), r); });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("add and mul") {
    Tensor r = random_tensor(rng, {3, 4});
    auto report = gradcheck::run(
        {{3, 4}, {3, 4}},
        {gradcheck::random_values(rng, {3, 4}), gradcheck::random_values(rng, {3, 4})},
        [&](const std::vector<Tensor>& p) { return weighted_sum(add(p[0], p[1]) * mul(p[0], p[1]), r); });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("scale") {
    Tensor r = random_tensor(rng, {3, 4});
    auto report = gradcheck::run(
        {{3, 4}}, {gradcheck::random_values(rng, {3, 4})},
        [&](const std::vector<Tensor>& p) { return weighted_sum(p[0] * 1.7, r); });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("silu") {
    Tensor r = random_tensor(rng, {3, 4});
    auto report = gradcheck::run(
        {{3, 4}}, {gradcheck::random_values(rng, {3, 4})},
        [&](const std::vector<Tensor>& p) { return weighted_sum(silu(p[0]), r); });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("softmax along both axes") {
    Tensor r = random_tensor(rng, {3, 5});
    for (int axis : {-1, 0}) {
      auto report = gradcheck::run(
          {{3, 5}}, {gradcheck::random_values(rng, {3, 5})},
          [&](const std::vector<Tensor>& p) { return weighted_sum(softmax(p[0], axis), r); });
      CHECK(report.max_rel <= tol);
    }
  }

  SUBCASE("causal_mask through softmax") {
    Tensor r = random_tensor(rng, {4, 4});
    auto report = gradcheck::run(
        {{4, 4}}, {gradcheck::random_values(rng, {4, 4})},
        [&](const std::vector<Tensor>& p) {
          return weighted_sum(softmax(causal_mask(p[0]), -1), r);
        });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("reshape") {
    Tensor r = random_tensor(rng, {2, 6});
    auto report = gradcheck::run(
        {{3, 4}}, {gradcheck::random_values(rng, {3, 4})},
        [&](const std::vector<Tensor>& p) { return weighted_sum(reshape(p[0], {2, 6}), r); });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("slice_cols and concat_cols") {
    Tensor r = random_tensor(rng, {3, 5});
    auto report = gradcheck::run(
        {{3, 2}, {3, 6}},
        {gradcheck::random_values(rng, {3, 2}), gradcheck::random_values(rng, {3, 6})},
        [&](const std::vector<Tensor>& p) {
          return weighted_sum(concat_cols({p[0], slice_cols(p[1], 1, 4)}), r);
        });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("embedding_lookup with repeated ids") {
    Tensor r = random_tensor(rng, {4, 3});
    auto report = gradcheck::run(
        {{5, 3}}, {gradcheck::random_values(rng, {5, 3})},
        [&](const std::vector<Tensor>& p) {
          return weighted_sum(embedding_lookup(p[0], {0, 2, 2, 4}), r);
        });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("cross_entropy_masked") {
    auto report = gradcheck::run(
        {{4, 6}}, {gradcheck::random_values(rng, {4, 6})},
        [&](const std::vector<Tensor>& p) {
          return cross_entropy_masked(p[0], {1, 5, 0, 3}, {1, 0, 1, 1});
        });
    CHECK(report.max_rel <= tol);
  }

  SUBCASE("sum") {
    auto report = gradcheck::run(
        {{3, 4}}, {gradcheck::random_values(rng, {3, 4})},
        [&](const std::vector<Tensor>& p) { return sum(p[0]); });
    CHECK(report.max_rel <= tol);
  }
}
