#include <cmath>

#include "doctest.h"
#include "omenn/engine.hpp"
#include "omenn/layers.hpp"
#include "oracles.hpp"

using namespace omenn;
using testing::random_matrix;
using testing::random_vector;

namespace {

ModelGraph single_fc(Tensor w, Tensor b, std::size_t tokens = 1) {
  ModelGraph m;
  m.input = flat_shape(tokens, w.rows());
  m.logits = tokens * w.cols();
  m.layers.push_back(fc_layer(std::move(w), std::move(b)));
  return m;
}

ModelGraph generated(const std::string& arch, std::uint64_t seed) {
  return generate_random_model(parse_arch_spec(arch), seed);
}

}  // namespace

TEST_CASE("augmentation") {
  const auto a = augment(Tensor::from_rows({{1, 2}}));
  CHECK(a.x_aug == Tensor::from_rows({{1, 2, 1}}));
  const auto z = augment(Tensor({2, 3}));
  CHECK(z.x_aug == Tensor::from_rows({{0, 0, 0, 1}, {0, 0, 0, 1}}));
  Uniform rng(31);
  const Tensor x = random_matrix(rng, 4, 3);
  CHECK(strip(augment(x)) == x);
  CHECK_THROWS_AS(augment(x, flat_shape(3, 3)), Error);
}

TEST_CASE("freezing a network") {
  Uniform rng(32);
  const Tensor w = random_matrix(rng, 3, 2), b = random_vector(rng, 2);
  const ModelGraph fc = single_fc(w, b, 2);
  const Tensor x = random_matrix(rng, 2, 3);
  const FrozenTrace t = freeze_network(fc, x);
  CHECK(t.ops.size() == 1);
  Tensor expect = testing::naive_matmul(x, w);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) expect(i, j) += b[j];
  CHECK(max_abs_diff(t.output, expect) <= 1e-15);
  CHECK(t.logits.size() == 4);

  const ModelGraph mlp = generated("mlp:in=3,hidden=5,out=2,act=gelu", 1);
  const Tensor xm = random_input(mlp.input, 2);
  const FrozenTrace tm = freeze_network(mlp, xm);
  CHECK(max_abs_diff(strip_ones(tm.apply(tm.input.x_aug)), tm.output) <= 1e-12);
  CHECK(max_abs_diff(tm.logits, model_logits(mlp, xm)) == 0.0);

  const ModelGraph vit = generated("vit-block:h=4,w=4,c=2,dim=4,heads=2", 3);
  const Tensor xv = random_input(vit.input, 4);
  const FrozenTrace tv = freeze_network(vit, xv);
  const Tensor out = tv.apply(tv.input.x_aug);
  CHECK(max_abs_diff(strip_ones(out), tv.output) <= 1e-10);
  for (std::size_t i = 0; i < out.rows(); ++i) CHECK(out(i, out.cols() - 1) == 1.0);

  CHECK_THROWS_AS(freeze_network(fc, random_matrix(rng, 3, 3)), Error);
}

TEST_CASE("unsupported layers are reported by index") {
  ModelGraph m = single_fc(Tensor({2, 2}), Tensor({2}));
  m.layers.push_back(opaque_layer(LayerKind::Tanh));
  try {
    freeze_network(m, Tensor({1, 2}));
    FAIL("expected capability error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Capability);
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("contribution rows") {
  // Empty network: the row is one-hot at the logit's coordinate.
  ModelGraph id;
  id.input = flat_shape(2, 2);
  id.logits = 4;
  const Tensor x = Tensor::from_rows({{1, 2}, {3, 4}});
  const FrozenTrace ti = freeze_network(id, x);
  for (std::size_t k = 0; k < 4; ++k) {
    const Tensor r = contribution_row(ti, k);
    Tensor expect({2, 3});
    expect(k / 2, k % 2) = 1.0;
    CHECK(r == expect);
  }

  // Single FC with one token: [W[:, k]; b[k]].
  Uniform rng(33);
  const Tensor w = random_matrix(rng, 3, 2), b = random_vector(rng, 2);
  const FrozenTrace tf = freeze_network(single_fc(w, b), random_matrix(rng, 1, 3));
  for (std::size_t k = 0; k < 2; ++k) {
    const Tensor r = contribution_row(tf, k);
    for (std::size_t j = 0; j < 3; ++j) CHECK(r(0, j) == w(j, k));
    CHECK(r(0, 3) == b[k]);
  }
  CHECK_THROWS_AS(contribution_row(tf, 2), Error);

  for (const char* arch : {"mlp:in=4,hidden=6x5,out=3", "cnn:h=5,w=5,c=2,filters=2",
                           "vit-block:h=4,w=4,c=1"}) {
    const ModelGraph m = generated(arch, 5);
    const Tensor xm = random_input(m.input, 6);
    const FrozenTrace t = freeze_network(m, xm);
    for (std::size_t k = 0; k < m.logits; ++k) {
      CHECK(std::abs(dot(contribution_row(t, k), t.input.x_aug) - t.logits[k]) <= 1e-8);
    }
  }
}

TEST_CASE("explanations") {
  const ModelGraph bias = single_fc(Tensor({3, 1}), Tensor({1}, std::vector<double>{5}));
  const Tensor x = Tensor::from_rows({{0.4, -1, 2}});
  const ExplanationResult r = explain(bias, x, 0);
  CHECK(max_abs(hadamard(r.c_w, x)) == 0.0);
  CHECK(sum(r.c_b) == 5.0);
  CHECK(sum(r.c) == 5.0);
  CHECK(r.logit == 5.0);
  CHECK(r.completeness_residual == 0.0);
  CHECK_FALSE(r.flagged);

  ModelGraph id;
  id.input = flat_shape(1, 1);
  id.logits = 1;
  const Tensor xi = Tensor::from_rows({{-2.5}});
  const ExplanationResult ri = explain(id, xi, 0);
  CHECK(ri.c == xi);
  CHECK(ri.logit == -2.5);

  const ModelGraph vit = generated("vit-block:h=6,w=6,c=2,patch=3,dim=6,heads=3", 7);
  const Tensor xv = random_input(vit.input, 8);
  for (std::size_t k = 0; k < vit.logits; ++k) {
    const ExplanationResult rv = explain(vit, xv, k);
    CHECK(std::abs(sum(rv.c) - rv.logit) <= 1e-6 * std::max(1.0, std::abs(rv.logit)));
    // C is rebuilt from its parts exactly.
    CHECK(rv.c == add(sum_channels(hadamard(rv.c_w, xv)), rv.c_b));
  }
}

TEST_CASE("completeness tolerance and hard cap") {
  const Tensor c_wb = Tensor::from_rows({{1, 1}});
  const Tensor x = Tensor::from_rows({{2}});
  CHECK_FALSE(assemble_explanation(c_wb, x, 3.0).flagged);
  CHECK(assemble_explanation(c_wb, x, 3.0 + 1e-5).flagged);
  try {
    assemble_explanation(c_wb, x, 3.1);
    FAIL("expected integrity error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Integrity);
  }
}

TEST_CASE("gradient baselines") {
  ModelGraph gelu;
  gelu.input = flat_shape(1, 1);
  gelu.logits = 1;
  gelu.layers.push_back(activation_layer(ActivationKind::GELU));
  const Tensor x = Tensor::from_rows({{-0.75}});
  CHECK(std::abs(explain_gradient(gelu, x, 0)[0]) < 0.01);
  CHECK(explain(gelu, x, 0).c_wb(0, 0) == doctest::Approx(0.2266).epsilon(1e-3));

  // Without activations both methods agree once the bias path is added.
  Uniform rng(34);
  ModelGraph lin = single_fc(random_matrix(rng, 3, 4), random_vector(rng, 4), 2);
  lin.layers.push_back(fc_layer(random_matrix(rng, 4, 2), random_vector(rng, 2)));
  lin.logits = 4;
  const Tensor xl = random_matrix(rng, 2, 3);
  for (std::size_t k = 0; k < 4; ++k) {
    const ExplanationResult r = explain(lin, xl, k);
    const Tensor gxi = gradient_times_input(explain_gradient(lin, xl, k), xl);
    CHECK(max_abs_diff(add(gxi, r.c_b), r.c) <= 1e-12);
  }

  for (const char* arch : {"mlp:in=3,hidden=4,out=2,act=swish", "vit-block:h=4,w=4,c=1,dim=4",
                           "cnn:h=5,w=5,c=1,filters=2,act=gelu,pool=avg,batchnorm=1"}) {
    const ModelGraph m = generated(arch, 9);
    const Tensor xm = random_input(m.input, 10);
    const Tensor g = explain_gradient(m, xm, 1);
    const Tensor fd = testing::finite_difference_gradient(m, xm, 1);
    CHECK(max_abs_diff(g, fd) <= 1e-6);
  }
}

TEST_CASE("piecewise-linear networks: OMENN equals gradient times input") {
  for (const char* arch :
       {"mlp:in=5,hidden=8x6,out=3,act=relu", "mlp:in=4,hidden=7,out=2,act=leaky_relu,alpha=0.2",
        "cnn:h=6,w=6,c=2,filters=3,act=relu,pool=max", "cnn:h=6,w=6,c=1,act=leaky_relu,pool=avg",
        "cnn:h=7,w=7,c=2,filters=2,blocks=2,padding=1,pool=none,act=relu"}) {
    CAPTURE(arch);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const ModelGraph m = generated(arch, seed);
      const Tensor x = random_input(m.input, seed + 100);
      for (std::size_t k = 0; k < m.logits; ++k) {
        const ExplanationResult r = explain(m, x, k);
        const Tensor g = explain_gradient(m, x, k);
        CHECK(max_abs_diff(hadamard(r.c_w, x), hadamard(g, x)) <= 1e-8);
        CHECK(max_abs_diff(g, testing::finite_difference_gradient(m, x, k)) <= 1e-4);
      }
    }
  }
}
