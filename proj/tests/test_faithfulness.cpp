#include <cmath>

#include "doctest.h"
#include "omenn/engine.hpp"
#include "omenn/faithfulness.hpp"
#include "omenn/grid_io.hpp"
#include "omenn/model_format.hpp"
#include "oracles.hpp"

using namespace omenn;

namespace {

/// One-logit linear model over `tokens` scalar tokens.
ModelGraph linear_model(std::size_t tokens, Uniform& rng) {
  ModelGraph m;
  m.input = flat_shape(tokens, 1);
  m.logits = 1;
  m.layers.push_back(flatten_layer());
  m.layers.push_back(fc_layer(testing::random_matrix(rng, tokens, 1),
                              testing::random_vector(rng, 1)));
  return m;
}

}  // namespace

TEST_CASE("pearson correlation") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> neg{-1, -2, -3, -4, -5};
  CHECK(pearson(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  // Hand computation: deviations give S_ab = 5, S_aa = 10, S_bb = 10.
  const std::vector<double> b{2, 5, 3, 6, 4};
  CHECK(pearson(a, b) == doctest::Approx(0.5).epsilon(1e-14));

  Uniform rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(10), y(10), ys(10);
    for (std::size_t i = 0; i < 10; ++i) {
      x[i] = rng.next();
      y[i] = rng.next();
    }
    const double s = rng.next(0.1, 10), o = rng.next(-5, 5);
    for (std::size_t i = 0; i < 10; ++i) ys[i] = s * y[i] + o;
    CHECK(std::abs(pearson(x, y) - pearson(x, ys)) <= 1e-12);
  }
  const std::vector<double> flat{2, 2, 2};
  try {
    pearson(flat, std::vector<double>{1, 2, 3});
    FAIL("expected undefined correlation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UndefinedCorrelation);
  }
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST_CASE("random attribution") {
  const Tensor a = random_attribution(100, 9), b = random_attribution(100, 9);
  CHECK(a == b);
  CHECK_FALSE(a == random_attribution(100, 10));
  const Tensor big = random_attribution(10000, 1);
  double mean = 0.0;
  for (double v : big.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    mean += v;
  }
  CHECK(std::abs(mean / 10000 - 0.5) <= 0.02);
}

TEST_CASE("exact attribution of a linear model scores one") {
  Uniform rng(62);
  const ModelGraph m = linear_model(20, rng);
  const Tensor x = testing::random_matrix(rng, 20, 1);
  const Tensor w = std::get<FcParams>(m.layers[1].params).weight;
  const Tensor exact = hadamard(w, x);  // zeroing token i changes the logit by w_i x_i
  FaithfulnessConfig cfg;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    CHECK(faithfulness_correlation(m, x, exact, 0, cfg) == doctest::Approx(1.0).epsilon(1e-6));
  }
  // OMENN's input part C_w * X is exactly that attribution.
  const Tensor cw = sum_channels(hadamard(explain(m, x, 0).c_w, x));
  CHECK(faithfulness_correlation(m, x, cw, 0, cfg) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("degenerate inputs") {
  ModelGraph zero;
  zero.input = flat_shape(10, 1);
  zero.logits = 1;
  zero.layers.push_back(flatten_layer());
  zero.layers.push_back(fc_layer(Tensor({10, 1}), Tensor({1})));
  Uniform rng(63);
  const Tensor x = testing::random_matrix(rng, 10, 1);
  try {
    faithfulness_correlation(zero, x, random_attribution(10, 1), 0);
    FAIL("expected undefined correlation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UndefinedCorrelation);
  }
  CHECK_THROWS_AS(faithfulness_correlation(zero, x, random_attribution(9, 1), 0), Error);
  CHECK_THROWS_AS((FaithfulnessConfig{0.0, 30, 0}.validate()), Error);
  CHECK_THROWS_AS((FaithfulnessConfig{0.5, 1, 0}.validate()), Error);
  CHECK_THROWS_AS(faithfulness_correlation(zero, x, random_attribution(10, 1), 0, {0.05, 30, 0}),
                  Error);
}

TEST_CASE("trials are reproducible") {
  const ModelGraph m = format::load_model(testing::fixture_dir("toy_cnn"));
  const Tensor x = load_input(testing::fixture_dir("toy_cnn") / "probes/p00.grid", m.input);
  const Tensor c = explain(m, x, 0).c;
  const FaithfulnessConfig cfg{0.2, 30, 17};
  const auto a = faithfulness_trials(m, x, c, 0, cfg), b = faithfulness_trials(m, x, c, 0, cfg);
  CHECK(a.delta_logit == b.delta_logit);
  CHECK(a.attribution_sum == b.attribution_sum);
}

TEST_CASE("attribution methods") {
  CHECK(parse_method("gradxinput") == AttributionMethod::GradientTimesInput);
  CHECK_THROWS_AS(parse_method("lrp"), Error);
  const ModelGraph m = generate_random_model(parse_arch_spec("cnn:h=4,w=4,c=2"), 1);
  const Tensor x = random_input(m.input, 2);
  for (auto method : {AttributionMethod::Omenn, AttributionMethod::Gradient,
                      AttributionMethod::GradientTimesInput, AttributionMethod::Random}) {
    const Tensor a = attribute(m, x, 1, method, 3);
    CHECK(a.rows() == 16);
    CHECK(a.cols() == 1);
  }
}
