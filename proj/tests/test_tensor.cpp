#include "doctest.h"
#include "omenn/tensor.hpp"
#include "oracles.hpp"

using namespace omenn;
using testing::random_matrix;

TEST_CASE("tensor construction and shape checks") {
  const Tensor a = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 3);
  CHECK(a(1, 2) == 6);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);
  CHECK_THROWS_AS(matmul(a, a), Error);
  CHECK(Tensor::identity(3)(1, 1) == 1.0);
  CHECK(Tensor::identity(3)(1, 2) == 0.0);
  CHECK(a.reshaped({3, 2})(2, 1) == 6);
}

TEST_CASE("vec is column-major stacking") {
  CHECK(vec(Tensor::from_rows({{1, 2}, {3, 4}})).storage() == std::vector<double>{1, 3, 2, 4});
  CHECK(vec(Tensor::from_rows({{5}})).storage() == std::vector<double>{5});
  CHECK_THROWS_AS(vec(Tensor({2, 2, 2})), Error);

  Uniform rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_matrix(rng, 1 + rng.below(5), 1 + rng.below(5));
    const Tensor v = vec(x);
    CHECK(v == testing::naive_vec(x));
    CHECK(unvec(v, x.rows(), x.cols()) == x);
    const VecView view(x);
    for (std::size_t k = 0; k < v.size(); ++k) CHECK(view[k] == v[k]);
    CHECK(vec_index(x.rows() - 1, x.cols() - 1, x.rows()) == x.size() - 1);
  }
}

TEST_CASE("kron definition") {
  CHECK(kron(Tensor::identity(2), Tensor::identity(2)) == Tensor::identity(4));
  CHECK(kron(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}})) ==
        Tensor::from_rows({{3, 6}, {4, 8}}));
  Uniform rng(2);
  const Tensor a = random_matrix(rng, 2, 3), b = random_matrix(rng, 4, 2);
  const Tensor k = kron(a, b);
  REQUIRE(k.rows() == 8);
  REQUIRE(k.cols() == 6);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t q = 0; q < 2; ++q) CHECK(k(i * 4 + p, j * 2 + q) == a(i, j) * b(p, q));
}

TEST_CASE("kronecker and vec identities on random matrices") {
  Uniform rng(3);
  auto dim = [&] { return 1 + rng.below(4); };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = dim(), n = dim(), p = dim(), q = dim(), r = dim();
    // Distributivity.
    const Tensor a = random_matrix(rng, m, n);
    const Tensor b = random_matrix(rng, p, q), c = random_matrix(rng, p, q);
    CHECK(max_abs_diff(kron(a, add(b, c)), add(kron(a, b), kron(a, c))) <= 1e-10);
    // Mixed product.
    const Tensor a2 = random_matrix(rng, n, r), d = random_matrix(rng, q, m);
    CHECK(max_abs_diff(testing::naive_matmul(kron(a, b), kron(a2, d)),
                       kron(testing::naive_matmul(a, a2), testing::naive_matmul(b, d))) <= 1e-10);
    // vec is linear.
    CHECK(vec(add(b, c)) == add(vec(b), vec(c)));
    // vec(ABC) = (C^T kron A) vec(B).
    const Tensor x = random_matrix(rng, n, p), y = random_matrix(rng, p, r);
    const Tensor lhs = vec(testing::naive_matmul(testing::naive_matmul(a, x), y));
    const Tensor rhs = testing::naive_matmul(kron(transpose(y), a), testing::as_column(vec(x)));
    CHECK(max_abs_diff(lhs, rhs.reshaped({rhs.size()})) <= 1e-10);
  }
}

TEST_CASE("im2col layout") {
  ConvGeometry g{2, 2, 1, 1, 1, 0};
  const Tensor x = Tensor::from_rows({{1}, {2}, {3}, {4}});
  CHECK(im2col(x, g) == Tensor::from_rows({{1, 2, 3, 4}}));

  ConvGeometry g3{3, 3, 2, 2, 1, 0};
  const Tensor x3 = Tensor::from_rows({{1}, {2}, {3}, {4}, {5}, {6}, {7}, {8}, {9}});
  const Tensor cols = im2col(x3, g3);
  REQUIRE(cols.rows() == 4);
  REQUIRE(cols.cols() == 4);
  CHECK(cols(0, 0) == 1);
  CHECK(cols(1, 0) == 2);
  CHECK(cols(2, 0) == 4);
  CHECK(cols(3, 0) == 5);

  ConvGeometry too_big{2, 2, 3, 3, 1, 0};
  CHECK_THROWS_AS(im2col(Tensor({4, 1}), too_big), Error);
}

TEST_CASE("im2col matches direct cross-correlation") {
  Uniform rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = 2 + rng.below(5), w = 2 + rng.below(5), din = 1 + rng.below(3),
                      dout = 1 + rng.below(3), kh = 1 + rng.below(std::min<std::size_t>(h, 3)),
                      kw = 1 + rng.below(std::min<std::size_t>(w, 3)), stride = 1 + rng.below(2),
                      pad = rng.below(2);
    if (pad >= std::min(kh, kw)) continue;
    const ConvGeometry g{h, w, kh, kw, stride, pad};
    const Tensor x = random_matrix(rng, h * w, din);
    Tensor k({kh, kw, din, dout});
    for (double& v : k.storage()) v = rng.next(-1, 1);
    const Tensor kmat = k.reshaped({kh * kw * din, dout});
    const Tensor y = transpose(testing::naive_matmul(transpose(kmat), im2col(x, g)));
    CHECK(max_abs_diff(y, testing::naive_conv(x, k, h, w, stride, pad)) <= 1e-10);
  }
}

TEST_CASE("doubly block-Toeplitz matrix") {
  ConvGeometry g{2, 2, 1, 1, 1, 0};
  CHECK(dbt_matrix(Tensor({1, 1, 1, 1}, std::vector<double>{2.0}), g) ==
        scale(Tensor::identity(4), 2.0));
  ConvGeometry g2{3, 3, 2, 2, 1, 1};
  CHECK(max_abs(dbt_matrix(Tensor({2, 2, 2, 3}), g2)) == 0.0);
  ConvGeometry big{40, 40, 3, 3, 1, 1};
  CHECK_THROWS_AS(dbt_matrix(Tensor({3, 3, 3, 3}), big), Error);

  Uniform rng(5);
  int checked = 0;
  for (int trial = 0; trial < 80; ++trial) {
    const std::size_t h = 3 + rng.below(4), w = 3 + rng.below(4), din = 1 + rng.below(2),
                      dout = 1 + rng.below(3), kh = 1 + rng.below(3), kw = 1 + rng.below(3),
                      stride = 1 + rng.below(2), pad = rng.below(2);
    const ConvGeometry geom{h, w, kh, kw, stride, pad};
    Tensor k({kh, kw, din, dout});
    for (double& v : k.storage()) v = rng.next(-1, 1);
    const Tensor x = random_matrix(rng, h * w, din);
    const Tensor t = dbt_matrix(k, geom);
    const Tensor y = testing::naive_matmul(t, testing::as_column(vec(x)));
    const Tensor ref = vec(testing::naive_conv(x, k, h, w, stride, pad));
    CHECK(max_abs_diff(y.reshaped({y.size()}), ref) <= 1e-10);
    ++checked;
  }
  CHECK(checked >= 50);
}
