// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "citab/rng.hpp"
#include "citab/tensor.hpp"
#include "oracles.hpp"

using namespace citab;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false,
                     double scale = 1.0) {
  size_t count = 1;
  for (int e : shape) count *= static_cast<size_t>(e);
  std::vector<double> v(count);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Wraps an op into a scalar loss with a fixed random weighting so the
// incoming gradient is non-uniform.
double check_op(const std::function<Tensor(const Tensor&)>& op, std::vector<int> xshape,
                uint64_t seed, double eps = 1e-5) {
  Rng rng(seed);
  Tensor x = random_tensor(xshape, rng, true);
  Tensor y0 = op(x);
  Tensor weights = random_tensor(y0.shape(), rng);
  auto loss = [&](const Tensor& t) { return sum_all(mul(op(t), weights)); };
  return grad_check(loss, x, eps);
}

}  // namespace

TEST_CASE("tensor construction enforces invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 2}, {}), DimensionError);
  CHECK_THROWS_AS(Tensor({-1}, {1.0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), ValueError);
  CHECK_THROWS_AS(Tensor({1}, {INFINITY}), ValueError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.value_at(1, 2) == 6.0);
}

TEST_CASE("matmul identity and annihilator") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor i2 = Tensor::identity(2);
  CHECK(matmul(i2, a).values() == a.values());
  Tensor z = Tensor::zeros({2, 3});
  Rng rng(17);
  Tensor b = random_tensor({3, 2}, rng);
  Tensor zb = matmul(z, b);
  for (double v : zb.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  // Tiny pinned case first: [[1,2]] x [[3],[4]] = [[11]].
  Tensor a({1, 2}, {1, 2});
  Tensor b({2, 1}, {3, 4});
  oracle::Mat oa(1, 2, {1, 2}), ob(2, 1, {3, 4});
  const oracle::Mat expected = oracle::matmul(oa, ob);
  CHECK(expected.v[0] == 11.0);
  CHECK(matmul(a, b).scalar_value() == doctest::Approx(11.0).epsilon(1e-15));

  Rng rng(5);
  for (int it = 0; it < 5; ++it) {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor y = random_tensor({4, 2}, rng);
    oracle::Mat ox(3, 4, x.values()), oy(4, 2, y.values());
    CHECK(oracle::max_abs_diff(matmul(x, y).values(), oracle::matmul(ox, oy).v) < 1e-12);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}, std::vector<double>(6, 1.0));
  Tensor b({2, 3}, std::vector<double>(6, 1.0));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax_rows closed forms") {
  Tensor x({1, 2}, {0.0, 0.0});
  CHECK(softmax_rows(x).values()[0] == doctest::Approx(0.5).epsilon(1e-15));

  Tensor y({1, 2}, {std::log(2.0), 0.0});
  const auto v = softmax_rows(y).values();
  CHECK(v[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(v[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(11);
  for (int it = 0; it < 20; ++it) {
    const int r = 1 + static_cast<int>(rng.uniform_int(4));
    const int c = 2 + static_cast<int>(rng.uniform_int(6));
    std::vector<double> data(static_cast<size_t>(r) * c);
    for (auto& d : data) d = rng.uniform(-50.0, 50.0);
    Tensor x({r, c}, data);
    Tensor s = softmax_rows(x);
    for (int i = 0; i < r; ++i) {
      double sum = 0.0;
      for (int j = 0; j < c; ++j) {
        CHECK(s.value_at(i, j) >= 0.0);
        sum += s.value_at(i, j);
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
    const double shift = rng.uniform(-100.0, 100.0);
    std::vector<double> shifted = data;
    for (auto& d : shifted) d += shift;
    Tensor s2 = softmax_rows(Tensor({r, c}, shifted));
    CHECK(oracle::max_abs_diff(s.values(), s2.values()) < 1e-12);
  }
}

TEST_CASE("elementwise identities") {
  Rng rng(3);
  Tensor v = random_tensor({3, 4}, rng);
  Tensor ones = Tensor::full({3, 4}, 1.0);
  CHECK(mul(v, ones).values() == v.values());

  // mean over the row axis gives column means
  Tensor m({2, 2}, {1, 3, 5, 7});
  const auto pooled = mean_pool(m, 0).values();
  CHECK(pooled[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(pooled[1] == doctest::Approx(5.0).epsilon(1e-15));

  CHECK_THROWS_AS(add(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("layer_norm normalizes the last axis") {
  Tensor gain = Tensor::row({1, 1, 1});
  Tensor bias = Tensor::row({0, 0, 0});
  // eps=1e-5 bounds how close the output variance can get to 1; the bound
  // tightens as the input variance grows.
  for (double s : {1.0, 10.0}) {
    Tensor x({1, 3}, {1 * s, 2 * s, 3 * s});
    const auto y = layer_norm(x, gain, bias).values();
    CHECK(std::fabs(oracle::mean(y)) < 1e-12);
    const double var_tol = 2.0 * kLayerNormEps / (s * s * 2.0 / 3.0);
    const double std_out = oracle::population_std(y);
    CHECK(std::fabs(std_out * std_out - 1.0) <= var_tol);
  }
  Tensor x10({1, 3}, {10, 20, 30});
  const auto y10 = layer_norm(x10, gain, bias).values();
  CHECK(std::fabs(oracle::population_std(y10) - 1.0) <= 1e-6);
}

TEST_CASE("masked attention: one-hot and all-valid cases") {
  Rng rng(23);
  const int d = 4, lk = 3;
  Tensor q = random_tensor({lk, d}, rng);
  Tensor k = random_tensor({lk, d}, rng);
  Tensor v = random_tensor({lk, d}, rng);

  // Single valid key: every valid query row returns that key's value row.
  std::vector<bool> only1 = {false, true, false};
  Tensor out = masked_attention(q, k, v, only1, 2);
  for (int j = 0; j < d; ++j) {
    CHECK(out.value_at(1, j) == doctest::Approx(v.value_at(1, j)).epsilon(1e-15));
    CHECK(out.value_at(0, j) == 0.0);  // invalid query rows are zeroed
    CHECK(out.value_at(2, j) == 0.0);
  }

  // All-valid mask equals unmasked attention (oracle without bias).
  std::vector<bool> all(lk, true);
  Tensor out2 = masked_attention(q, k, v, all, 2);
  oracle::Mat oq(lk, d, q.values()), ok(lk, d, k.values()), ov(lk, d, v.values());
  const oracle::Mat ref = oracle::attention(oq, ok, ov, all, 2, 0.0);
  CHECK(oracle::max_abs_diff(out2.values(), ref.v) < 1e-12);
}

TEST_CASE("masked attention matches dense oracle, 2 tokens, 1 head, D=2") {
  Rng rng(29);
  Tensor q = random_tensor({2, 2}, rng);
  Tensor k = random_tensor({2, 2}, rng);
  Tensor v = random_tensor({2, 2}, rng);
  std::vector<bool> mask = {true, true};
  Tensor out = masked_attention(q, k, v, mask, 1);
  oracle::Mat oq(2, 2, q.values()), ok(2, 2, k.values()), ov(2, 2, v.values());
  const oracle::Mat ref = oracle::attention(oq, ok, ov, mask, 1, kAttentionMaskBias);
  CHECK(oracle::max_abs_diff(out.values(), ref.v) < 1e-12);
}

TEST_CASE("masked attention ignores masked key/value content exactly") {
  Rng rng(31);
  const int d = 4, lk = 4;
  Tensor q = random_tensor({lk, d}, rng);
  std::vector<double> kv = random_tensor({lk, d}, rng).values();
  std::vector<double> vv = random_tensor({lk, d}, rng).values();
  std::vector<bool> mask = {true, false, true, false};

  Tensor base = masked_attention(q, Tensor({lk, d}, kv), Tensor({lk, d}, vv), mask, 2);
  // Scribble over the masked rows.
  for (int row : {1, 3})
    for (int j = 0; j < d; ++j) {
      kv[static_cast<size_t>(row) * d + j] = rng.uniform(-100.0, 100.0);
      vv[static_cast<size_t>(row) * d + j] = rng.uniform(-100.0, 100.0);
    }
  Tensor scribbled = masked_attention(q, Tensor({lk, d}, kv), Tensor({lk, d}, vv), mask, 2);
  CHECK(base.values() == scribbled.values());  // bitwise
}

TEST_CASE("masked attention rejects bad head counts") {
  Tensor q({2, 3}, std::vector<double>(6, 0.5));
  CHECK_THROWS_AS(masked_attention(q, q, q, {true, true}, 2), ConfigError);
}

TEST_CASE("backward: sum of squares") {
  Tensor x({1, 2}, {1, 2}, true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("backward: detached leaves stay grad-free") {
  Tensor x({1, 2}, {1, 2}, true);
  Tensor c({1, 2}, {5, 6});  // requires_grad = false
  Tensor loss = sum_all(mul(x, c));
  backward(loss);
  CHECK(x.has_grad());
  CHECK_FALSE(c.has_grad());
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x({1, 2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), DimensionError);
}

TEST_CASE("backward accumulates across fan-out") {
  Tensor x({1, 1}, {3.0}, true);
  Tensor y = add(x, x);  // dy/dx = 2
  backward(sum_all(y));
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("grad_check: linear layer is exact to 1e-7") {
  Rng rng(41);
  Tensor w = random_tensor({3, 2}, rng);
  Tensor b = random_tensor({1, 2}, rng);
  Tensor x = random_tensor({4, 3}, rng, true);
  Tensor weights = random_tensor({4, 2}, rng);
  auto f = [&](const Tensor& t) { return sum_all(mul(linear(t, w, b), weights)); };
  CHECK(grad_check(f, x, 1e-5) <= 1e-7);
}

TEST_CASE("grad_check: constant function reports zero error") {
  Tensor x({2, 2}, {1, 2, 3, 4}, true);
  auto f = [](const Tensor&) { return Tensor::scalar(3.5); };
  CHECK(grad_check(f, x, 1e-5) == 0.0);
}

TEST_CASE("grad_check: matmul against central differences") {
  Rng rng(43);
  Tensor b = random_tensor({3, 3}, rng);
  auto f = [&](const Tensor& t) { return sum_all(matmul(t, b)); };
  Tensor x = random_tensor({3, 3}, rng, true);
  CHECK(grad_check(f, x, 1e-5) <= 1e-6);
}

TEST_CASE("every differentiable op passes grad_check on seeded instances") {
  Rng seeds(4242);
  for (int i = 0; i < 10; ++i) {
    const uint64_t s = seeds.next_u64();
    Rng rng(s);

    CHECK(check_op([](const Tensor& t) { return gelu(t); }, {3, 4}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return sigmoid(t); }, {3, 4}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return citab::exp(t); }, {2, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return citab::log(add_scalar(mul(t, t), 1.0)); },
                   {2, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return pow_scalar(add_scalar(mul(t, t), 0.5), -0.5); },
                   {2, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return softmax_rows(t); }, {3, 5}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return log_softmax_rows(t); }, {3, 5}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return transpose(t); }, {3, 4}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return row_sums(t); }, {4, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return mean_pool(t, 0); }, {4, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return mean_pool(t, 1); }, {4, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return slice_rows(t, 1, 3); }, {4, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return slice_cols(t, 0, 2); }, {4, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return concat_rows({t, t}); }, {2, 3}, s) <= 1e-5);
    CHECK(check_op([](const Tensor& t) { return concat_cols({t, scale(t, 2.0)}); }, {2, 3}, s) <=
          1e-5);
    CHECK(check_op([](const Tensor& t) { return l2_normalize_rows(t); }, {3, 4}, s) <= 1e-5);

    Tensor m2 = random_tensor({4, 3}, rng);
    CHECK(check_op([m2](const Tensor& t) { return matmul(t, m2); }, {2, 4}, s) <= 1e-5);
    CHECK(check_op([m2](const Tensor& t) { return mul(t, m2); }, {4, 3}, s) <= 1e-5);
    Tensor rowb = random_tensor({1, 3}, rng);
    CHECK(check_op([rowb](const Tensor& t) { return add(t, rowb); }, {4, 3}, s) <= 1e-5);
    CHECK(check_op([rowb](const Tensor& t) { return mul(t, rowb); }, {4, 3}, s) <= 1e-5);
    // broadcast operand itself
    Tensor base = random_tensor({4, 3}, rng);
    CHECK(check_op([base](const Tensor& t) { return mul(base, t); }, {1, 3}, s) <= 1e-5);
    Tensor vcol = random_tensor({4, 1}, rng);
    CHECK(check_op([vcol](const Tensor& t) { return scale_rows(t, vcol); }, {4, 3}, s) <= 1e-5);
    Tensor mat = random_tensor({4, 3}, rng);
    CHECK(check_op([mat](const Tensor& t) { return scale_rows(mat, t); }, {4, 1}, s) <= 1e-5);

    Tensor gn = random_tensor({1, 4}, rng);
    Tensor bs = random_tensor({1, 4}, rng);
    CHECK(check_op([gn, bs](const Tensor& t) { return layer_norm(t, gn, bs); }, {3, 4}, s) <=
          1e-5);
    Tensor lx = random_tensor({3, 4}, rng);
    CHECK(check_op([lx, bs](const Tensor& t) { return layer_norm(lx, t, bs); }, {1, 4}, s) <=
          1e-5);

    Tensor k = random_tensor({3, 4}, rng);
    Tensor v = random_tensor({3, 4}, rng);
    std::vector<bool> mask = {true, true, false};
    CHECK(check_op([k, v, mask](const Tensor& t) { return masked_attention(t, k, v, mask, 2); },
                   {3, 4}, s) <= 1e-5);
    Tensor q = random_tensor({3, 4}, rng);
    CHECK(check_op([q, v, mask](const Tensor& t) { return masked_attention(q, t, v, mask, 2); },
                   {3, 4}, s) <= 1e-5);
    CHECK(check_op([q, k, mask](const Tensor& t) { return masked_attention(q, k, t, mask, 2); },
                   {3, 4}, s) <= 1e-5);
  }
}

TEST_CASE("forward replay is bitwise deterministic") {
  Rng rng(77);
  Tensor x = random_tensor({4, 4}, rng);
  Tensor w = random_tensor({4, 4}, rng);
  Tensor g = random_tensor({1, 4}, rng);
  Tensor b = random_tensor({1, 4}, rng);
  auto run = [&]() {
    return softmax_rows(layer_norm(gelu(matmul(x, w)), g, b)).values();
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite results are rejected") {
  Tensor big = Tensor::full({1, 1}, 1e308);
  CHECK_THROWS_AS(mul(big, big), ValueError);
  Tensor neg({1, 2}, {-1.0, 2.0});
  CHECK_THROWS_AS(citab::log(neg), ValueError);
}
