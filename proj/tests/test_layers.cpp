#include <cmath>

#include "doctest.h"
#include "omenn/dynlinear.hpp"
#include "omenn/layers.hpp"
#include "oracles.hpp"

using namespace omenn;
using testing::random_matrix;
using testing::random_vector;

namespace {

Tensor apply_aug(const OpPtr& op, const Tensor& x) { return op->apply(augment_matrix(x)); }

Tensor random_kernel(Uniform& rng, std::size_t kh, std::size_t kw, std::size_t din,
                     std::size_t dout) {
  Tensor k({kh, kw, din, dout});
  for (double& v : k.storage()) v = rng.next(-1, 1);
  return k;
}

AttentionHead random_head(Uniform& rng, std::size_t din, std::size_t dh) {
  return {random_matrix(rng, din, dh), random_vector(rng, dh), random_matrix(rng, din, dh),
          random_vector(rng, dh),      random_matrix(rng, din, dh), random_vector(rng, dh)};
}

/// A random layer of the given kind together with a fitting input shape.
std::pair<Layer, Shape2D> random_layer(Uniform& rng, LayerKind kind) {
  const std::size_t t = 1 + rng.below(4), d = 1 + rng.below(4);
  switch (kind) {
    case LayerKind::FullyConnected: {
      const std::size_t o = 1 + rng.below(4);
      return {fc_layer(random_matrix(rng, d, o), random_vector(rng, o)), flat_shape(t, d)};
    }
    case LayerKind::Normalization:
      if (rng.below(2) == 0) {
        return {batch_norm_layer(random_vector(rng, d), random_vector(rng, d),
                                 random_vector(rng, d), random_vector(rng, d, 0.2, 2.0), 1e-5),
                flat_shape(t, d)};
      }
      return {layer_norm_layer(random_vector(rng, d + 1), random_vector(rng, d + 1), 1e-5),
              flat_shape(t, d + 1)};
    case LayerKind::Conv2D: {
      const std::size_t h = 2 + rng.below(4), w = 2 + rng.below(4), k = 1 + rng.below(2);
      const std::size_t o = 1 + rng.below(3);
      return {conv_layer(random_kernel(rng, k, k, d, o), random_vector(rng, o), 1 + rng.below(2),
                         rng.below(k)),
              image_shape(h, w, d)};
    }
    case LayerKind::Activation: {
      const auto a = static_cast<ActivationKind>(rng.below(5));
      return {activation_layer(a, a == ActivationKind::LeakyReLU ? rng.next(0, 0.9) : 0.0),
              flat_shape(t, d)};
    }
    case LayerKind::Attention: {
      const std::size_t dh = 1 + rng.below(3);
      return {attention_layer(random_head(rng, d, dh)), flat_shape(t + 1, d)};
    }
    case LayerKind::MultiHeadAttention: {
      const std::size_t heads = 1 + rng.below(3), dh = 1 + rng.below(3), o = 1 + rng.below(4);
      std::vector<AttentionHead> hs;
      for (std::size_t i = 0; i < heads; ++i) hs.push_back(random_head(rng, d, dh));
      return {multihead_layer(std::move(hs), random_matrix(rng, heads * dh, o),
                              random_vector(rng, o)),
              flat_shape(t + 1, d)};
    }
    case LayerKind::Residual: {
      std::vector<Layer> branch{fc_layer(random_matrix(rng, d, d), random_vector(rng, d)),
                                activation_layer(ActivationKind::GELU)};
      return {residual_layer({{}, std::move(branch)}, 0), flat_shape(t, d)};
    }
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D: {
      const std::size_t h = 2 + rng.below(5), w = 2 + rng.below(5);
      const std::size_t win = 1 + rng.below(2), s = 1 + rng.below(2);
      return {kind == LayerKind::MaxPool2D ? maxpool_layer(win, s) : avgpool_layer(win, s),
              image_shape(h, w, d)};
    }
    case LayerKind::Flatten:
      return {flatten_layer(), image_shape(2, 1 + rng.below(3), d)};
    case LayerKind::TokenSelect:
      if (rng.below(2) == 0) return {token_select_layer(TokenSelectMode::Mean), flat_shape(t, d)};
      return {token_select_layer(TokenSelectMode::Index, rng.below(t)), flat_shape(t, d)};
    default:
      break;
  }
  FAIL("no generator for kind");
  return {};
}

const LayerKind kLinearKinds[] = {
    LayerKind::FullyConnected, LayerKind::Normalization,      LayerKind::Conv2D,
    LayerKind::Activation,     LayerKind::Attention,          LayerKind::MultiHeadAttention,
    LayerKind::Residual,       LayerKind::MaxPool2D,          LayerKind::AvgPool2D,
    LayerKind::Flatten,        LayerKind::TokenSelect};

}  // namespace

TEST_CASE("fully connected freezing") {
  const Shape2D one = flat_shape(1, 2);
  FcParams p{Tensor::identity(2), Tensor({2}, std::vector<double>{1, 1})};
  CHECK(freeze_fc(p, Tensor::from_rows({{1, 2, 1}}), one)->apply(Tensor::from_rows({{1, 2, 1}})) ==
        Tensor::from_rows({{2, 3, 1}}));

  FcParams bias{Tensor({3, 1}), Tensor({1}, std::vector<double>{5})};
  const Tensor xa = Tensor::from_rows({{0.3, -2, 7, 1}});
  CHECK(freeze_fc(bias, xa, flat_shape(1, 3))->apply(xa) == Tensor::from_rows({{5, 1}}));

  Uniform rng(21);
  const Tensor x = random_matrix(rng, 2, 3);
  const Layer l = fc_layer(random_matrix(rng, 3, 2), random_vector(rng, 2));
  const Tensor direct = augment_matrix(testing::naive_matmul(x, std::get<FcParams>(l.params).weight));
  Tensor expect = direct;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) expect(i, j) += std::get<FcParams>(l.params).bias[j];
  CHECK(max_abs_diff(apply_aug(freeze_layer(l, augment_matrix(x), flat_shape(2, 3)), x), expect) <=
        1e-12);

  CHECK_THROWS_AS(freeze_fc(bias, Tensor::from_rows({{1, 2, 1}}), flat_shape(1, 2)), Error);
}

TEST_CASE("normalization freezing") {
  const Tensor one({1}, std::vector<double>{1.0});
  NormParams p;
  p.mode = NormMode::Batch;
  p.gamma = Tensor({1}, std::vector<double>{2});
  p.beta = Tensor({1});
  p.mean = one;
  p.variance = Tensor({1}, std::vector<double>{4});
  p.eps = 0.0;
  const Tensor xa = Tensor::from_rows({{3, 1}});
  const auto op = freeze_norm(p, xa, flat_shape(1, 1));
  CHECK(op->apply(xa) == Tensor::from_rows({{2, 1}}));
  const auto* tw = dynamic_cast<const TokenwiseAffineOp*>(op.get());
  const auto* fa = dynamic_cast<const FusedAffineOp*>(op.get());
  REQUIRE((tw != nullptr || fa != nullptr));
  if (fa != nullptr) {
    CHECK(fa->fused_weight()(0, 0) == 1.0);
    CHECK(fa->fused_weight()(1, 0) == -1.0);
  }

  p.gamma = one;
  p.mean = Tensor({1});
  p.variance = one;
  const Tensor xb = Tensor::from_rows({{-0.7, 1}});
  CHECK(freeze_norm(p, xb, flat_shape(1, 1))->apply(xb) == xb);

  // Layer norm on a constant token hits the stabilizer and says so.
  Diagnostics diag;
  NormParams ln;
  ln.mode = NormMode::Layer;
  ln.gamma = Tensor({3}, 1.0);
  ln.beta = Tensor({3});
  ln.eps = 0.0;
  const Tensor flat = Tensor::from_rows({{2, 2, 2, 1}});
  const Tensor y = freeze_norm(ln, flat, flat_shape(1, 3), &diag)->apply(flat);
  CHECK(y.all_finite());
  CHECK_FALSE(diag.messages.empty());
}

TEST_CASE("activation freezing") {
  const ActivationParams gelu{ActivationKind::GELU, 0.0};
  const Tensor xa = Tensor::from_rows({{-0.75, 1}});
  const auto op = freeze_activation(gelu, xa, flat_shape(1, 1));
  const auto* diag = dynamic_cast<const DiagonalOp*>(op.get());
  REQUIRE(diag != nullptr);
  CHECK(diag->multiplier()(0, 0) == doctest::Approx(0.2266).epsilon(1e-3));
  CHECK(op->apply(xa)(0, 0) == doctest::Approx(-0.17).epsilon(1e-2));
  CHECK(op->apply(xa)(0, 1) == 1.0);

  const Tensor x4 = Tensor::from_rows({{-4, 1}});
  CHECK(std::abs(freeze_activation(gelu, x4, flat_shape(1, 1))->apply(x4)(0, 0)) < 1e-3);

  const ActivationParams relu{ActivationKind::ReLU, 0.0};
  const Tensor xr = Tensor::from_rows({{-1, 2, 1}});
  const auto rop = freeze_activation(relu, xr, flat_shape(1, 2));
  CHECK(dynamic_cast<const DiagonalOp*>(rop.get())->multiplier() == Tensor::from_rows({{0, 1, 1}}));
  CHECK(rop->apply(xr) == Tensor::from_rows({{0, 2, 1}}));
}

TEST_CASE("activation multipliers and derivatives") {
  const ActivationParams relu{ActivationKind::ReLU, 0.0};
  const ActivationParams leaky{ActivationKind::LeakyReLU, 0.2};
  for (double x : {-3.0, -0.5, 0.25, 4.0}) {
    // Piecewise-linear: the frozen multiplier is the derivative off the kink.
    CHECK(act::multiplier(relu, x) == act::derivative(relu, x));
    CHECK(act::multiplier(leaky, x) == act::derivative(leaky, x));
  }
  for (auto kind : {ActivationKind::GELU, ActivationKind::GELUTanh, ActivationKind::SWISH,
                    ActivationKind::ReLU, ActivationKind::LeakyReLU}) {
    const ActivationParams p{kind, 0.1};
    for (double x : {-2.3, -0.4, 0.7, 1.9}) {
      CHECK(act::apply(p, x) == doctest::Approx(x * act::multiplier(p, x)).epsilon(1e-14));
      const double h = 1e-6;
      const double fd = (act::apply(p, x + h) - act::apply(p, x - h)) / (2 * h);
      CHECK(act::derivative(p, x) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  CHECK(act::gaussian_cdf(0.0) == 0.5);
  CHECK(act::gaussian_cdf(-0.75) == doctest::Approx(0.226627).epsilon(1e-5));
}

TEST_CASE("attention freezing") {
  Uniform rng(22);
  // A single token attends only to itself.
  const AttentionHead h = random_head(rng, 3, 2);
  const Tensor x1 = random_matrix(rng, 1, 3);
  const auto op1 = freeze_attention({h, 0.0}, augment_matrix(x1), flat_shape(1, 3));
  Tensor v = testing::naive_matmul(x1, h.wv);
  for (std::size_t j = 0; j < 2; ++j) v(0, j) += h.bv[j];
  CHECK(max_abs_diff(apply_aug(op1, x1), augment_matrix(v)) <= 1e-12);
  CHECK(dynamic_cast<const AttentionOp*>(op1.get())->attention()[0] == Tensor::identity(1));

  // Orthogonal tokens with large Q/K scale make A nearly the identity.
  AttentionHead id;
  id.wq = scale(Tensor::identity(3), 20.0);
  id.wk = scale(Tensor::identity(3), 20.0);
  id.wv = Tensor::identity(3);
  id.bq = id.bk = id.bv = Tensor({3});
  const Tensor xo = Tensor::identity(3);
  const Tensor yo = apply_aug(freeze_attention({id, 1.0}, augment_matrix(xo), flat_shape(3, 3)), xo);
  CHECK(max_abs_diff(strip_ones(yo), testing::naive_attention(id, 1.0, xo)) <= 1e-8);
  CHECK(max_abs_diff(strip_ones(yo), xo) <= 1e-8);

  const Tensor x3 = random_matrix(rng, 3, 3);
  const auto op3 = freeze_attention({h, 0.0}, augment_matrix(x3), flat_shape(3, 3));
  CHECK(max_abs_diff(strip_ones(apply_aug(op3, x3)), testing::naive_attention(h, 0.0, x3)) <=
        1e-12);
  CHECK_THROWS_AS(freeze_attention({h, -1.0}, augment_matrix(x3), flat_shape(3, 3)), Error);
}

TEST_CASE("multi-head attention freezing") {
  Uniform rng(23);
  const Tensor x = random_matrix(rng, 4, 3);
  const Tensor xa = augment_matrix(x);
  const Shape2D in = flat_shape(4, 3);

  // One head is attention followed by the output projection.
  const AttentionHead h0 = random_head(rng, 3, 2);
  const Tensor wu = random_matrix(rng, 2, 3), bu = random_vector(rng, 3);
  const auto mh = freeze_multihead({{h0}, 0.0, wu, bu}, xa, in);
  const auto att = freeze_attention({h0, 0.0}, xa, in);
  const auto fc = freeze_fc({wu, bu}, att->apply(xa), att->out_shape());
  CHECK(max_abs_diff(mh->apply(xa), fc->apply(att->apply(xa))) <= 1e-12);

  // Zero value paths leave only the output bias.
  AttentionHead z = random_head(rng, 3, 2);
  z.wv = Tensor({3, 2});
  z.bv = Tensor({2});
  const Tensor b = Tensor({3}, std::vector<double>{1, -2, 3});
  const Tensor yz = freeze_multihead({{z, z}, 0.0, random_matrix(rng, 4, 3), b}, xa, in)->apply(xa);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(yz(i, 0) == 1.0);
    CHECK(yz(i, 1) == -2.0);
    CHECK(yz(i, 2) == 3.0);
    CHECK(yz(i, 3) == 1.0);
  }

  // Two heads against the direct formula.
  const AttentionHead h1 = random_head(rng, 3, 2);
  const Tensor wu2 = random_matrix(rng, 4, 3);
  const auto op = freeze_multihead({{h0, h1}, 0.0, wu2, bu}, xa, in);
  const Tensor a0 = testing::naive_attention(h0, 0.0, x), a1 = testing::naive_attention(h1, 0.0, x);
  Tensor cat({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      cat(i, j) = a0(i, j);
      cat(i, 2 + j) = a1(i, j);
    }
  Tensor expect = testing::naive_matmul(cat, wu2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) expect(i, j) += bu[j];
  CHECK(max_abs_diff(strip_ones(op->apply(xa)), expect) <= 1e-12);

  AttentionHead bad = random_head(rng, 3, 3);
  CHECK_THROWS_AS(freeze_multihead({{h0, bad}, 0.0, random_matrix(rng, 5, 3), bu}, xa, in), Error);
}

TEST_CASE("convolution freezing") {
  // 1x1 kernel with weight 2 doubles the image.
  const Tensor x = Tensor::from_rows({{1}, {2}, {3}, {4}});
  ConvParams p{Tensor({1, 1, 1, 1}, std::vector<double>{2}), Tensor({1}), 1, 0};
  const Tensor y = apply_aug(freeze_conv(p, augment_matrix(x), image_shape(2, 2, 1)), x);
  CHECK(y == augment_matrix(scale(x, 2.0)));

  // Pure bias: every output is 5 and the ones path carries it, s_i = 4.
  Uniform rng(24);
  ConvParams pb{Tensor({2, 2, 1, 1}), Tensor({1}, std::vector<double>{5}), 1, 0};
  const Tensor x9 = random_matrix(rng, 9, 1);
  const auto op = freeze_conv(pb, augment_matrix(x9), image_shape(3, 3, 1));
  const auto* conv = dynamic_cast<const ConvOp*>(op.get());
  REQUIRE(conv != nullptr);
  CHECK(conv->patch_sums() == std::vector<double>(4, 4.0));
  CHECK(op->apply(augment_matrix(x9)) == augment_matrix(Tensor({4, 1}, 5.0)));

  // Padded border positions see fewer ones but still get the full bias.
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 3 + rng.below(4), w = 3 + rng.below(4), din = 1 + rng.below(3),
                      dout = 1 + rng.below(3), k = 2 + rng.below(2), stride = 1 + rng.below(2);
    const std::size_t pad = 1;
    ConvParams pc{random_kernel(rng, k, k, din, dout), random_vector(rng, dout), stride, pad};
    const Tensor xi = random_matrix(rng, h * w, din);
    const auto cop = freeze_conv(pc, augment_matrix(xi), image_shape(h, w, din));
    Tensor expect = testing::naive_conv(xi, pc.kernel, h, w, stride, pad);
    for (std::size_t i = 0; i < expect.rows(); ++i)
      for (std::size_t o = 0; o < dout; ++o) expect(i, o) += pc.bias[o];
    CHECK(max_abs_diff(cop->apply(augment_matrix(xi)), augment_matrix(expect)) <= 1e-10);
    const auto& s = dynamic_cast<const ConvOp*>(cop.get())->patch_sums();
    CHECK(s.front() < static_cast<double>(k * k));
  }

  // A window made entirely of padding has no ones to carry the bias.
  ConvParams deg{Tensor({1, 1, 1, 1}, std::vector<double>{1}), Tensor({1}), 1, 1};
  CHECK_THROWS_AS(freeze_conv(deg, augment_matrix(x), image_shape(2, 2, 1)), Error);
}

TEST_CASE("residual freezing") {
  Uniform rng(25);
  const Tensor x = random_matrix(rng, 3, 2);
  const Tensor xa = augment_matrix(x);
  const Shape2D in = flat_shape(3, 2);
  const auto identity = std::make_shared<SequenceOp>(std::vector<OpPtr>{}, in);
  const auto zero = freeze_fc({Tensor({2, 2}), Tensor({2})}, xa, in);
  CHECK(freeze_residual({identity, zero}, xa)->apply(xa) == xa);
  const Tensor twice = freeze_residual({identity, identity}, xa)->apply(xa);
  CHECK(twice == augment_matrix(scale(x, 2.0)));

  const Layer fc = fc_layer(random_matrix(rng, 2, 2), random_vector(rng, 2));
  const Layer res = residual_layer({{}, {fc}}, 0);
  const Tensor y = apply_aug(freeze_layer(res, xa, in), x);
  CHECK(max_abs_diff(y, augment_matrix(add(x, forward(fc, x, in)))) <= 1e-12);

  const auto other = freeze_fc({Tensor({2, 3}), Tensor({3})}, xa, in);
  CHECK_THROWS_AS(freeze_residual({identity, other}, xa), Error);
}

TEST_CASE("max-pool freezing") {
  const Tensor w = Tensor::from_rows({{1}, {3}, {2}, {0}});
  const auto op = freeze_maxpool({2, 2}, augment_matrix(w), image_shape(2, 2, 1));
  const auto* g = dynamic_cast<const GatherOp*>(op.get());
  REQUIRE(g != nullptr);
  CHECK(g->sources()[0].token == 1);
  CHECK(op->apply(augment_matrix(w)) == Tensor::from_rows({{3, 1}}));

  const Tensor flat = Tensor({4, 1}, 7.0);
  const auto tie = freeze_maxpool({2, 2}, augment_matrix(flat), image_shape(2, 2, 1));
  CHECK(dynamic_cast<const GatherOp*>(tie.get())->sources()[0].token == 0);

  Uniform rng(26);
  const Tensor x = random_matrix(rng, 36, 2);
  const Tensor y = apply_aug(freeze_maxpool({2, 2}, augment_matrix(x), image_shape(6, 6, 2)), x);
  Tensor expect({9, 2});
  for (std::size_t oi = 0; oi < 3; ++oi)
    for (std::size_t oj = 0; oj < 3; ++oj)
      for (std::size_t c = 0; c < 2; ++c) {
        double m = -1e300;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) m = std::max(m, x((2 * oi + a) * 6 + 2 * oj + b, c));
        expect(oi * 3 + oj, c) = m;
      }
  CHECK(max_abs_diff(y, augment_matrix(expect)) <= 1e-12);
}

TEST_CASE("every frozen kind reproduces the forward pass and has an exact adjoint") {
  Uniform rng(27);
  for (LayerKind kind : kLinearKinds) {
    CAPTURE(to_string(kind));
    for (int trial = 0; trial < 100; ++trial) {
      const auto [layer, in] = random_layer(rng, kind);
      const Tensor x = random_matrix(rng, in.tokens, in.channels);
      const auto op = freeze_layer(layer, augment_matrix(x), in);
      const Tensor y = op->apply(augment_matrix(x));
      const Tensor ref = augment_matrix(forward(layer, x, in));
      REQUIRE(max_abs_diff(y, ref) <= 1e-10);

      const Shape2D out = op->out_shape();
      const Tensor u = random_matrix(rng, in.tokens, in.channels + 1);
      const Tensor v = random_matrix(rng, out.tokens, out.channels + 1);
      const double lhs = dot(op->apply(u), v), rhs = dot(u, op->apply_adjoint(v));
      REQUIRE(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST_CASE("layer VJPs match finite differences") {
  Uniform rng(28);
  for (LayerKind kind : kLinearKinds) {
    CAPTURE(to_string(kind));
    for (int trial = 0; trial < 10; ++trial) {
      const auto [layer, in] = random_layer(rng, kind);
      const Tensor x = random_matrix(rng, in.tokens, in.channels);
      const Shape2D out = output_shape(layer, in);
      const Tensor g = random_matrix(rng, out.tokens, out.channels);
      const Tensor grad = vjp(layer, x, in, g);
      for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor xp = x, xm = x;
        const double h = 1e-6;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (dot(forward(layer, xp, in), g) - dot(forward(layer, xm, in), g)) / (2 * h);
        // Max-pool and ReLU kinks are measure-zero for random inputs.
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
      }
    }
  }
}

TEST_CASE("shape chain and capability errors") {
  const Layer fc = fc_layer(Tensor({3, 2}), Tensor({2}));
  CHECK_THROWS_AS(output_shape(fc, flat_shape(1, 4)), Error);
  try {
    output_shape(std::vector<Layer>{fc, fc}, flat_shape(1, 3));
    FAIL("expected a shape-chain error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeChain);
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
  for (LayerKind k : {LayerKind::Softmax, LayerKind::Sigmoid, LayerKind::Tanh}) {
    try {
      freeze_layer(opaque_layer(k), Tensor::from_rows({{1, 2, 1}}), flat_shape(1, 2));
      FAIL("expected a capability error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Capability);
    }
  }
}
