#include "omenn/oracle.hpp"

#include <string>

#include "omenn/kernels.hpp"

namespace omenn::oracle {
namespace {

namespace serial = kernels::serial;

std::size_t aug_length(const Shape2D& s) { return s.tokens * (s.channels + 1); }

void check_cap(const DynLinearOp& op, const OracleOptions& options) {
  const std::size_t in = aug_length(op.in_shape()), out = aug_length(op.out_shape());
  if (in > options.cap || out > options.cap) {
    fail(ErrorCode::Resource, "oracle: " + std::string(op.kind()) + " needs a " +
                                  std::to_string(out) + "x" + std::to_string(in) +
                                  " dense matrix, above the cap of " +
                                  std::to_string(options.cap));
  }
}

Tensor fc_form(const Tensor& fused_weight, std::size_t tokens) {
  // vec(X~ W~) = (W~^T kron I) vec(X~)
  return kron(transpose(fused_weight), Tensor::identity(tokens));
}

Tensor tokenwise_form(const TokenwiseAffineOp& op) {
  const Shape2D s = op.in_shape();
  const std::size_t t = s.tokens, d = s.channels;
  Tensor m({t * (d + 1), t * (d + 1)});
  for (std::size_t i = 0; i < t; ++i) {
    Tensor wi({d + 1, d + 1});
    for (std::size_t j = 0; j < d; ++j) {
      wi(j, j) = op.scale()(i, j);
      wi(d, j) = op.shift()(i, j);
    }
    wi(d, d) = 1.0;
    Tensor sel({t, t});
    sel(i, i) = 1.0;
    m = add(m, kron(transpose(wi), sel));
  }
  return m;
}

Tensor diagonal_form(const DiagonalOp& op) {
  const Tensor w = vec(op.multiplier());
  Tensor m({w.size(), w.size()});
  for (std::size_t k = 0; k < w.size(); ++k) m(k, k) = w[k];
  return m;
}

Tensor attention_form(const AttentionOp& op) {
  const Shape2D in = op.in_shape(), out = op.out_shape();
  const std::size_t t = in.tokens, n = aug_length(in);
  Tensor m({aug_length(out), n});
  std::size_t row = 0;
  auto stack = [&](const Tensor& block) {
    for (std::size_t i = 0; i < block.rows(); ++i, ++row)
      for (std::size_t j = 0; j < n; ++j) m(row, j) = block(i, j);
  };
  for (std::size_t h = 0; h < op.attention().size(); ++h) {
    stack(kron(transpose(op.fused_values()[h]), op.attention()[h]));
  }
  stack(kron(transpose(op.ones_passthrough()), Tensor::identity(t)));
  return m;
}

Tensor conv_form(const ConvOp& op) {
  const Shape2D in = op.in_shape(), out = op.out_shape();
  const ConvGeometry& g = op.geometry();
  const Tensor& k = op.kernel();
  const std::size_t kh = k.dim(0), kw = k.dim(1), din = k.dim(2), dout = k.dim(3);

  // Static kernel K~_w: K in the value block, zeros for the ones channel.
  Tensor kw_aug({kh, kw, din + 1, dout + 1});
  for (std::size_t a = 0; a < kh; ++a)
    for (std::size_t b = 0; b < kw; ++b)
      for (std::size_t c = 0; c < din; ++c)
        for (std::size_t o = 0; o < dout; ++o) {
          kw_aug[((a * kw + b) * (din + 1) + c) * (dout + 1) + o] =
              k[((a * kw + b) * din + c) * dout + o];
        }
  Tensor m = dbt_matrix(kw_aug, g, std::max(aug_length(in), aug_length(out)));

  // Dynamic kernels K~_b_i = (1/s_i) [[0, B~], [0, 1]]: one row block per
  // output position, reading only the ones channel of the receptive field.
  const std::size_t tin = in.tokens, tout = out.tokens, wo = g.out_width();
  for (std::size_t oi = 0; oi < g.out_height(); ++oi)
    for (std::size_t oj = 0; oj < wo; ++oj) {
      const std::size_t to = oi * wo + oj;
      const double inv = 1.0 / op.patch_sums()[to];
      for (std::size_t a = 0; a < kh; ++a)
        for (std::size_t b = 0; b < kw; ++b) {
          const long src = g.source_token(oi, oj, a, b);
          if (src < 0) continue;
          const std::size_t col = vec_index(static_cast<std::size_t>(src), din, tin);
          for (std::size_t o = 0; o < dout; ++o) m(vec_index(to, o, tout), col) += inv * op.bias()[o];
          m(vec_index(to, dout, tout), col) += inv;
        }
    }
  return m;
}

Tensor gather_form(const GatherOp& op) {
  const Shape2D in = op.in_shape(), out = op.out_shape();
  Tensor m({aug_length(out), aug_length(in)});
  const std::size_t w = out.channels + 1;
  for (std::size_t k = 0; k < op.sources().size(); ++k) {
    const auto& s = op.sources()[k];
    m(vec_index(k / w, k % w, out.tokens), vec_index(s.token, s.channel, in.tokens)) = 1.0;
  }
  return m;
}

Tensor token_mix_form(const TokenMixOp& op) {
  // vec(P X~) = (I kron P) vec(X~)
  return kron(Tensor::identity(op.in_shape().channels + 1), op.mix());
}

Tensor dense(const DynLinearOp& op, const OracleOptions& options);

Tensor sequence_form(const SequenceOp& op, const OracleOptions& options) {
  if (op.ops().empty()) return Tensor::identity(aug_length(op.in_shape()));
  Tensor m = dense(*op.ops().front(), options);
  for (std::size_t i = 1; i < op.ops().size(); ++i) m = serial::matmul(dense(*op.ops()[i], options), m);
  return m;
}

Tensor residual_form(const ResidualOp& op, const OracleOptions& options) {
  const Shape2D out = op.out_shape();
  Tensor m;
  for (std::size_t b = 0; b < op.branches().size(); ++b) {
    Tensor mb = dense(*op.branches()[b], options);
    if (b != op.ones_owner()) {
      for (std::size_t i = 0; i < out.tokens; ++i) {
        const std::size_t row = vec_index(i, out.channels, out.tokens);
        for (std::size_t j = 0; j < mb.cols(); ++j) mb(row, j) = 0.0;
      }
    }
    m = b == 0 ? std::move(mb) : add(m, mb);
  }
  return m;
}

Tensor dense(const DynLinearOp& op, const OracleOptions& options) {
  check_cap(op, options);
  if (const auto* p = dynamic_cast<const FusedAffineOp*>(&op)) {
    return fc_form(p->fused_weight(), op.in_shape().tokens);
  }
  if (const auto* p = dynamic_cast<const TokenwiseAffineOp*>(&op)) return tokenwise_form(*p);
  if (const auto* p = dynamic_cast<const DiagonalOp*>(&op)) return diagonal_form(*p);
  if (const auto* p = dynamic_cast<const AttentionOp*>(&op)) return attention_form(*p);
  if (const auto* p = dynamic_cast<const ConvOp*>(&op)) return conv_form(*p);
  if (const auto* p = dynamic_cast<const GatherOp*>(&op)) return gather_form(*p);
  if (const auto* p = dynamic_cast<const TokenMixOp*>(&op)) return token_mix_form(*p);
  if (const auto* p = dynamic_cast<const SequenceOp*>(&op)) return sequence_form(*p, options);
  if (const auto* p = dynamic_cast<const ResidualOp*>(&op)) return residual_form(*p, options);
  fail(ErrorCode::Capability, "oracle: no dense form for " + std::string(op.kind()));
}

}  // namespace

DenseAffine materialize(const DynLinearOp& op, const OracleOptions& options) {
  return {dense(op, options), Tensor{}};
}

DenseAffine materialize_unfused(const DynLinearOp& op, const OracleOptions& options) {
  const Tensor fused = dense(op, options);
  const Shape2D in = op.in_shape(), out = op.out_shape();
  const std::size_t nin = in.size(), nout = out.size();
  // Value coordinates come first in column-major order; ones follow.
  DenseAffine r{Tensor({nout, nin}), Tensor({nout})};
  for (std::size_t i = 0; i < nout; ++i) {
    for (std::size_t j = 0; j < nin; ++j) r.w(i, j) = fused(i, j);
    double b = 0.0;
    for (std::size_t j = nin; j < fused.cols(); ++j) b += fused(i, j);
    r.b[i] = b;
  }
  return r;
}

UnfusedComposition compose_unfused(const std::vector<DenseAffine>& layers) {
  if (layers.empty()) fail(ErrorCode::Shape, "compose_unfused: at least one layer required");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.w.rank() != 2 || l.b.size() != l.w.rows()) {
      fail(ErrorCode::Shape, "compose_unfused: layer " + std::to_string(i) + " is not W, b");
    }
    if (i > 0 && l.w.cols() != layers[i - 1].w.rows()) {
      fail(ErrorCode::Shape, "compose_unfused: layer " + std::to_string(i) + " does not chain");
    }
  }
  const std::size_t n = layers.size();
  UnfusedComposition r;
  r.omega_w = layers.front().w;
  for (std::size_t i = 1; i < n; ++i) r.omega_w = serial::matmul(layers[i].w, r.omega_w);

  // Omega_{b_i} = W_n ... W_{i+1}; Omega_{b_n} = I.
  r.bias_total = layers.back().b;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    Tensor omega_b = layers[i + 1].w;
    for (std::size_t j = i + 2; j < n; ++j) omega_b = serial::matmul(layers[j].w, omega_b);
    const Tensor contrib = serial::matmul(omega_b, layers[i].b.reshaped({layers[i].b.size(), 1}));
    for (std::size_t k = 0; k < contrib.size(); ++k) r.bias_total[k] += contrib[k];
  }
  return r;
}

Tensor compose_fused(const std::vector<DenseAffine>& layers) {
  if (layers.empty()) fail(ErrorCode::Shape, "compose_fused: at least one layer required");
  Tensor omega = layers.front().w;
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].w.cols() != omega.rows()) {
      fail(ErrorCode::Shape, "compose_fused: layer " + std::to_string(i) + " does not chain");
    }
    omega = serial::matmul(layers[i].w, omega);
  }
  return omega;
}

ExplanationResult oracle_explain(const FrozenTrace& trace, std::size_t class_index,
                                 const OracleOptions& options) {
  if (class_index >= trace.logits.size()) {
    fail(ErrorCode::OutOfRange, "oracle: logit index " + std::to_string(class_index) +
                                    " out of range");
  }
  const Shape2D in = trace.input.shape;
  if (aug_length(in) > options.cap) fail(ErrorCode::Resource, "oracle: input above the cap");
  Tensor omega;
  if (trace.ops.empty()) {
    omega = Tensor::identity(aug_length(in));
  } else {
    std::vector<DenseAffine> fused;
    fused.reserve(trace.ops.size());
    for (const auto& op : trace.ops) fused.push_back(materialize(*op, options));
    omega = compose_fused(fused);
  }
  const std::size_t tout = trace.output.rows(), dout = trace.output.cols();
  const std::size_t row = vec_index(class_index / dout, class_index % dout, tout);
  Tensor r({omega.cols()});
  for (std::size_t j = 0; j < omega.cols(); ++j) r[j] = omega(row, j);
  const Tensor c_wb = unvec(r, in.tokens, in.channels + 1);
  return assemble_explanation(c_wb, strip(trace.input), trace.logits[class_index]);
}

ExplanationResult oracle_explain(const ModelGraph& model, const Tensor& x,
                                 std::size_t class_index, const OracleOptions& options) {
  if (aug_length(model.input) > options.cap) fail(ErrorCode::Resource, "oracle: input above cap");
  return oracle_explain(freeze_network(model, x), class_index, options);
}

}  // namespace omenn::oracle
