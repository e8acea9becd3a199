#include "omenn/dynlinear.hpp"

#include <string>

#include "omenn/kernels.hpp"

namespace omenn {
namespace {

using kernels::parallel::matmul_nt;
using kernels::parallel::matmul_tn;

std::string shape_text(std::size_t t, std::size_t d) {
  return std::to_string(t) + "x" + std::to_string(d);
}

void check_augmented(const Tensor& x_aug, const Shape2D& in, const char* what) {
  if (x_aug.rank() != 2 || x_aug.rows() != in.tokens || x_aug.cols() != in.channels + 1) {
    fail(ErrorCode::Shape, std::string(what) + ": augmented input must be " +
                               shape_text(in.tokens, in.channels + 1));
  }
  for (std::size_t i = 0; i < in.tokens; ++i) {
    if (x_aug(i, in.channels) != 1.0) {
      fail(ErrorCode::Shape, std::string(what) + ": trailing ones channel missing");
    }
  }
}

Tensor value_columns(const Tensor& u, std::size_t channels) {
  Tensor v({u.rows(), channels});
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < channels; ++j) v(i, j) = u(i, j);
  return v;
}

}  // namespace

Tensor augment_matrix(const Tensor& x) {
  if (x.rank() != 2) fail(ErrorCode::Shape, "augment: expected tokens x channels");
  Tensor a({x.rows(), x.cols() + 1});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) a(i, j) = x(i, j);
    a(i, x.cols()) = 1.0;
  }
  return a;
}

Tensor strip_ones(const Tensor& x_aug) {
  if (x_aug.rank() != 2 || x_aug.cols() < 2) fail(ErrorCode::Shape, "strip: expected augmented");
  return value_columns(x_aug, x_aug.cols() - 1);
}

void DynLinearOp::check_input(const Tensor& u) const {
  const Shape2D s = in_shape();
  if (u.rank() != 2 || u.rows() != s.tokens || u.cols() != s.channels + 1) {
    fail(ErrorCode::Shape, std::string(kind()) + ": operand must be " +
                               shape_text(s.tokens, s.channels + 1));
  }
}

void DynLinearOp::check_cotangent(const Tensor& g) const {
  const Shape2D s = out_shape();
  if (g.rank() != 2 || g.rows() != s.tokens || g.cols() != s.channels + 1) {
    fail(ErrorCode::Shape, std::string(kind()) + ": cotangent must be " +
                               shape_text(s.tokens, s.channels + 1));
  }
}

// ---------------------------------------------------------------------------

FusedAffineOp::FusedAffineOp(Tensor fused_weight, Shape2D in, Shape2D out)
    : w_(std::move(fused_weight)), in_(in), out_(out) {
  if (w_.rows() != in.channels + 1 || w_.cols() != out.channels + 1 || in.tokens != out.tokens) {
    fail(ErrorCode::Shape, "fused_affine: weight does not match shapes");
  }
}

Tensor FusedAffineOp::apply(const Tensor& u) const {
  check_input(u);
  return matmul(u, w_);
}

Tensor FusedAffineOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  return matmul_nt(g, w_);
}

TokenwiseAffineOp::TokenwiseAffineOp(Tensor scale, Tensor shift, Shape2D shape)
    : scale_(std::move(scale)), shift_(std::move(shift)), shape_(shape) {
  if (scale_.rows() != shape.tokens || scale_.cols() != shape.channels ||
      shift_.shape() != scale_.shape()) {
    fail(ErrorCode::Shape, "tokenwise_affine: coefficient shape mismatch");
  }
}

Tensor TokenwiseAffineOp::apply(const Tensor& u) const {
  check_input(u);
  const std::size_t d = shape_.channels;
  Tensor y({u.rows(), d + 1});
  for (std::size_t i = 0; i < u.rows(); ++i) {
    const double ones = u(i, d);
    for (std::size_t j = 0; j < d; ++j) y(i, j) = u(i, j) * scale_(i, j) + ones * shift_(i, j);
    y(i, d) = ones;
  }
  return y;
}

Tensor TokenwiseAffineOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  const std::size_t d = shape_.channels;
  Tensor r({g.rows(), d + 1});
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double acc = g(i, d);
    for (std::size_t j = 0; j < d; ++j) {
      r(i, j) = g(i, j) * scale_(i, j);
      acc += g(i, j) * shift_(i, j);
    }
    r(i, d) = acc;
  }
  return r;
}

DiagonalOp::DiagonalOp(Tensor multiplier, Shape2D shape) : m_(std::move(multiplier)), shape_(shape) {
  if (m_.rows() != shape.tokens || m_.cols() != shape.channels + 1) {
    fail(ErrorCode::Shape, "diagonal: multiplier shape mismatch");
  }
}

Tensor DiagonalOp::apply(const Tensor& u) const {
  check_input(u);
  return hadamard(u, m_);
}

Tensor DiagonalOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  return hadamard(g, m_);
}

AttentionOp::AttentionOp(std::vector<Tensor> attention, std::vector<Tensor> fused_values,
                         Shape2D in)
    : a_(std::move(attention)), wv_(std::move(fused_values)), in_(in) {
  if (a_.empty() || a_.size() != wv_.size()) fail(ErrorCode::Parameter, "attention: head count");
  head_width_ = wv_.front().cols();
  for (std::size_t h = 0; h < a_.size(); ++h) {
    if (a_[h].rows() != in.tokens || a_[h].cols() != in.tokens) {
      fail(ErrorCode::Shape, "attention: map must be tokens x tokens");
    }
    if (wv_[h].rows() != in.channels + 1 || wv_[h].cols() != head_width_) {
      fail(ErrorCode::Parameter, "attention: head dimensions differ");
    }
  }
  out_ = in;
  out_.channels = head_width_ * a_.size();
}

Tensor AttentionOp::ones_passthrough() const {
  Tensor w({in_.channels + 1, 1});
  w(in_.channels, 0) = 1.0;
  return w;
}

Tensor AttentionOp::apply(const Tensor& u) const {
  check_input(u);
  const std::size_t t = in_.tokens, dv = head_width_;
  Tensor y({t, out_.channels + 1});
  for (std::size_t h = 0; h < a_.size(); ++h) {
    const Tensor yh = matmul(a_[h], matmul(u, wv_[h]));
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < dv; ++j) y(i, h * dv + j) = yh(i, j);
  }
  for (std::size_t i = 0; i < t; ++i) y(i, out_.channels) = u(i, in_.channels);
  return y;
}

Tensor AttentionOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  const std::size_t t = in_.tokens, dv = head_width_;
  Tensor r({t, in_.channels + 1});
  for (std::size_t h = 0; h < a_.size(); ++h) {
    Tensor gh({t, dv});
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < dv; ++j) gh(i, j) = g(i, h * dv + j);
    r = add(r, matmul_nt(matmul_tn(a_[h], gh), wv_[h]));
  }
  for (std::size_t i = 0; i < t; ++i) r(i, in_.channels) += g(i, out_.channels);
  return r;
}

ConvOp::ConvOp(Tensor kernel, Tensor bias, ConvGeometry geom, std::vector<double> patch_sums,
               Shape2D in, Shape2D out)
    : kernel_(std::move(kernel)),
      kmat_(detail::kernel_matrix(kernel_)),
      bias_(std::move(bias)),
      geom_(geom),
      s_(std::move(patch_sums)),
      in_(in),
      out_(out) {
  if (s_.size() != out.tokens) fail(ErrorCode::Shape, "conv2d: one patch sum per output token");
}

Tensor ConvOp::apply(const Tensor& u) const {
  check_input(u);
  const std::size_t din = in_.channels, dout = out_.channels;
  const Tensor yv = kernels::parallel::conv2d(value_columns(u, din), kmat_, din, geom_);
  const std::size_t wo = geom_.out_width();
  Tensor y({out_.tokens, dout + 1});
  for (std::size_t oi = 0; oi < geom_.out_height(); ++oi)
    for (std::size_t oj = 0; oj < wo; ++oj) {
      const std::size_t to = oi * wo + oj;
      double ones = 0.0;
      for (std::size_t ki = 0; ki < geom_.kernel_height; ++ki)
        for (std::size_t kj = 0; kj < geom_.kernel_width; ++kj) {
          const long src = geom_.source_token(oi, oj, ki, kj);
          if (src >= 0) ones += u(static_cast<std::size_t>(src), din);
        }
      ones /= s_[to];
      for (std::size_t o = 0; o < dout; ++o) y(to, o) = yv(to, o) + bias_[o] * ones;
      y(to, dout) = ones;
    }
  return y;
}

Tensor ConvOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  const std::size_t din = in_.channels, dout = out_.channels;
  const Tensor gx = kernels::parallel::conv2d_adjoint(value_columns(g, dout), kmat_, din, geom_);
  Tensor r({in_.tokens, din + 1});
  for (std::size_t i = 0; i < in_.tokens; ++i)
    for (std::size_t c = 0; c < din; ++c) r(i, c) = gx(i, c);
  const std::size_t wo = geom_.out_width();
  for (std::size_t oi = 0; oi < geom_.out_height(); ++oi)
    for (std::size_t oj = 0; oj < wo; ++oj) {
      const std::size_t to = oi * wo + oj;
      double w = g(to, dout);
      for (std::size_t o = 0; o < dout; ++o) w += bias_[o] * g(to, o);
      w /= s_[to];
      for (std::size_t ki = 0; ki < geom_.kernel_height; ++ki)
        for (std::size_t kj = 0; kj < geom_.kernel_width; ++kj) {
          const long src = geom_.source_token(oi, oj, ki, kj);
          if (src >= 0) r(static_cast<std::size_t>(src), din) += w;
        }
    }
  return r;
}

GatherOp::GatherOp(std::string_view kind, std::vector<Source> sources, Shape2D in, Shape2D out)
    : kind_(kind), src_(std::move(sources)), in_(in), out_(out) {
  if (src_.size() != out.tokens * (out.channels + 1)) {
    fail(ErrorCode::Shape, "gather: one source per output cell required");
  }
  for (const auto& s : src_) {
    if (s.token >= in.tokens || s.channel > in.channels) {
      fail(ErrorCode::Shape, "gather: source out of range");
    }
  }
}

Tensor GatherOp::apply(const Tensor& u) const {
  check_input(u);
  Tensor y({out_.tokens, out_.channels + 1});
  for (std::size_t k = 0; k < src_.size(); ++k) y[k] = u(src_[k].token, src_[k].channel);
  return y;
}

Tensor GatherOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  Tensor r({in_.tokens, in_.channels + 1});
  for (std::size_t k = 0; k < src_.size(); ++k) r(src_[k].token, src_[k].channel) += g[k];
  return r;
}

TokenMixOp::TokenMixOp(std::string_view kind, Tensor mix, Shape2D in, Shape2D out)
    : kind_(kind), p_(std::move(mix)), in_(in), out_(out) {
  if (p_.rows() != out.tokens || p_.cols() != in.tokens || in.channels != out.channels) {
    fail(ErrorCode::Shape, "token_mix: mixing matrix shape mismatch");
  }
}

Tensor TokenMixOp::apply(const Tensor& u) const {
  check_input(u);
  return matmul(p_, u);
}

Tensor TokenMixOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  return matmul_tn(p_, g);
}

SequenceOp::SequenceOp(std::vector<OpPtr> ops, Shape2D shape_if_empty)
    : ops_(std::move(ops)), identity_shape_(shape_if_empty) {
  for (std::size_t i = 1; i < ops_.size(); ++i) {
    const Shape2D a = ops_[i - 1]->out_shape(), b = ops_[i]->in_shape();
    if (a.tokens != b.tokens || a.channels != b.channels) {
      fail(ErrorCode::Shape, "sequence: op " + std::to_string(i) + " does not chain");
    }
  }
}

Shape2D SequenceOp::in_shape() const noexcept {
  return ops_.empty() ? identity_shape_ : ops_.front()->in_shape();
}

Shape2D SequenceOp::out_shape() const noexcept {
  return ops_.empty() ? identity_shape_ : ops_.back()->out_shape();
}

Tensor SequenceOp::apply(const Tensor& u) const {
  check_input(u);
  Tensor cur = u;
  for (const auto& op : ops_) cur = op->apply(cur);
  return cur;
}

Tensor SequenceOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  Tensor cur = g;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) cur = (*it)->apply_adjoint(cur);
  return cur;
}

ResidualOp::ResidualOp(std::vector<OpPtr> branches, std::size_t ones_owner)
    : branches_(std::move(branches)), owner_(ones_owner) {
  if (branches_.empty()) fail(ErrorCode::Shape, "residual: at least one branch required");
  if (owner_ >= branches_.size()) fail(ErrorCode::Parameter, "residual: ones owner out of range");
  const Shape2D in = branches_.front()->in_shape(), out = branches_.front()->out_shape();
  for (const auto& b : branches_) {
    const Shape2D bi = b->in_shape(), bo = b->out_shape();
    if (bi.tokens != in.tokens || bi.channels != in.channels || bo.tokens != out.tokens ||
        bo.channels != out.channels) {
      fail(ErrorCode::Shape, "residual: branch shapes differ");
    }
  }
}

Tensor ResidualOp::apply(const Tensor& u) const {
  check_input(u);
  const std::size_t ones = out_shape().channels;
  Tensor y;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Tensor yb = branches_[b]->apply(u);
    if (b != owner_)
      for (std::size_t i = 0; i < yb.rows(); ++i) yb(i, ones) = 0.0;
    y = b == 0 ? std::move(yb) : add(y, yb);
  }
  return y;
}

Tensor ResidualOp::apply_adjoint(const Tensor& g) const {
  check_cotangent(g);
  const std::size_t ones = out_shape().channels;
  Tensor masked = g;
  for (std::size_t i = 0; i < masked.rows(); ++i) masked(i, ones) = 0.0;
  Tensor r;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Tensor rb = branches_[b]->apply_adjoint(b == owner_ ? g : masked);
    r = b == 0 ? std::move(rb) : add(r, rb);
  }
  return r;
}

// ---------------------------------------------------------------------------

OpPtr freeze_fc(const FcParams& params, const Tensor& x_aug, const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_fc");
  const std::size_t din = params.weight.rows(), dout = params.weight.cols();
  if (din != in.channels) fail(ErrorCode::Shape, "freeze_fc: weight rows do not match input");
  Tensor w({din + 1, dout + 1});
  for (std::size_t i = 0; i < din; ++i)
    for (std::size_t j = 0; j < dout; ++j) w(i, j) = params.weight(i, j);
  for (std::size_t j = 0; j < dout; ++j) w(din, j) = params.bias[j];
  w(din, dout) = 1.0;
  Shape2D out = in;
  out.channels = dout;
  return std::make_shared<FusedAffineOp>(std::move(w), in, out);
}

OpPtr freeze_norm(const NormParams& params, const Tensor& x_aug, const Shape2D& in,
                  Diagnostics* diag) {
  check_augmented(x_aug, in, "freeze_norm");
  const auto c = detail::norm_coefficients(params, strip_ones(x_aug), diag);
  if (params.mode == NormMode::Batch) {
    const std::size_t d = in.channels;
    FcParams fc{Tensor({d, d}), Tensor({d})};
    for (std::size_t j = 0; j < d; ++j) {
      fc.weight(j, j) = c.scale(0, j);
      fc.bias[j] = c.shift(0, j);
    }
    return freeze_fc(fc, x_aug, in);
  }
  return std::make_shared<TokenwiseAffineOp>(c.scale, c.shift, in);
}

OpPtr freeze_activation(const ActivationParams& params, const Tensor& x_aug, const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_activation");
  Tensor m({in.tokens, in.channels + 1});
  for (std::size_t i = 0; i < in.tokens; ++i) {
    for (std::size_t j = 0; j < in.channels; ++j) m(i, j) = act::multiplier(params, x_aug(i, j));
    m(i, in.channels) = 1.0;
  }
  return std::make_shared<DiagonalOp>(std::move(m), in);
}

namespace {

Tensor fused_value_weight(const AttentionHead& head) {
  const std::size_t din = head.wv.rows(), dv = head.wv.cols();
  Tensor w({din + 1, dv});
  for (std::size_t i = 0; i < din; ++i)
    for (std::size_t j = 0; j < dv; ++j) w(i, j) = head.wv(i, j);
  for (std::size_t j = 0; j < dv; ++j) w(din, j) = head.bv[j];
  return w;
}

std::shared_ptr<const AttentionOp> freeze_heads(const std::vector<const AttentionHead*>& heads,
                                                double dk, const Tensor& x_aug,
                                                const Shape2D& in) {
  const Tensor x = strip_ones(x_aug);
  std::vector<Tensor> maps, values;
  for (const AttentionHead* h : heads) {
    if (h->wv.rows() != in.channels) fail(ErrorCode::Shape, "attention: W_v rows mismatch");
    maps.push_back(detail::attention_head(*h, dk, x).attention);
    values.push_back(fused_value_weight(*h));
  }
  return std::make_shared<AttentionOp>(std::move(maps), std::move(values), in);
}

}  // namespace

OpPtr freeze_attention(const AttentionParams& params, const Tensor& x_aug, const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_attention");
  if (params.dk < 0.0) fail(ErrorCode::Parameter, "attention: d_k must be positive");
  return freeze_heads({&params.head}, params.dk, x_aug, in);
}

OpPtr freeze_multihead(const MultiHeadParams& params, const Tensor& x_aug, const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_multihead");
  if (params.heads.empty()) fail(ErrorCode::Parameter, "multihead: no heads");
  if (params.dk < 0.0) fail(ErrorCode::Parameter, "multihead: d_k must be positive");
  std::vector<const AttentionHead*> heads;
  for (const auto& h : params.heads) {
    if (h.wq.cols() != params.heads[0].wq.cols() || h.wv.cols() != params.heads[0].wv.cols()) {
      fail(ErrorCode::Parameter, "multihead: head dimensions differ");
    }
    heads.push_back(&h);
  }
  auto attn = freeze_heads(heads, params.dk, x_aug, in);
  const Tensor concat_aug = attn->apply(x_aug);
  auto proj = freeze_fc(FcParams{params.wu, params.bu}, concat_aug, attn->out_shape());
  return std::make_shared<SequenceOp>(std::vector<OpPtr>{attn, proj}, in);
}

OpPtr freeze_conv(const ConvParams& params, const Tensor& x_aug, const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_conv");
  if (!in.spatial()) fail(ErrorCode::Shape, "freeze_conv: input has no spatial layout");
  if (params.kernel.rank() != 4 || params.kernel.dim(2) != in.channels) {
    fail(ErrorCode::Shape, "freeze_conv: kernel does not match input channels");
  }
  const ConvGeometry g = detail::conv_geometry(params, in);
  g.validate();
  const std::size_t wo = g.out_width();
  std::vector<double> s(g.out_tokens());
  for (std::size_t oi = 0; oi < g.out_height(); ++oi)
    for (std::size_t oj = 0; oj < wo; ++oj) {
      double acc = 0.0;
      for (std::size_t ki = 0; ki < g.kernel_height; ++ki)
        for (std::size_t kj = 0; kj < g.kernel_width; ++kj) {
          const long src = g.source_token(oi, oj, ki, kj);
          if (src >= 0) acc += x_aug(static_cast<std::size_t>(src), in.channels);
        }
      if (acc == 0.0) {
        fail(ErrorCode::Capability, "freeze_conv: degenerate receptive field at output token " +
                                       std::to_string(oi * wo + oj) + " (entirely padding)");
      }
      s[oi * wo + oj] = acc;
    }
  const Shape2D out = image_shape(g.out_height(), wo, params.kernel.dim(3));
  return std::make_shared<ConvOp>(params.kernel, params.bias, g, std::move(s), in, out);
}

OpPtr freeze_residual(std::vector<OpPtr> branch_ops, const Tensor& x_aug,
                      std::size_t ones_owner) {
  auto op = std::make_shared<ResidualOp>(std::move(branch_ops), ones_owner);
  check_augmented(x_aug, op->in_shape(), "freeze_residual");
  return op;
}

OpPtr freeze_maxpool(const PoolParams& params, const Tensor& x_aug, const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_maxpool");
  const auto argmax = detail::maxpool_argmax(params, strip_ones(x_aug), in);
  const ConvGeometry g = detail::pool_geometry(params, in);
  const std::size_t d = in.channels, wo = g.out_width();
  const Shape2D out = image_shape(g.out_height(), wo, d);
  std::vector<GatherOp::Source> src;
  src.reserve(out.tokens * (d + 1));
  for (std::size_t to = 0; to < out.tokens; ++to) {
    for (std::size_t c = 0; c < d; ++c) src.push_back({argmax[to * d + c], c});
    const auto anchor = g.source_token(to / wo, to % wo, 0, 0);
    src.push_back({static_cast<std::size_t>(anchor), d});
  }
  return std::make_shared<GatherOp>("maxpool2d", std::move(src), in, out);
}

OpPtr freeze_avgpool(const PoolParams& params, const Tensor& x_aug, const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_avgpool");
  const ConvGeometry g = detail::pool_geometry(params, in);
  const std::size_t wo = g.out_width();
  const Shape2D out = image_shape(g.out_height(), wo, in.channels);
  Tensor p({out.tokens, in.tokens});
  const double w = 1.0 / static_cast<double>(params.window * params.window);
  for (std::size_t to = 0; to < out.tokens; ++to)
    for (std::size_t ki = 0; ki < params.window; ++ki)
      for (std::size_t kj = 0; kj < params.window; ++kj) {
        p(to, static_cast<std::size_t>(g.source_token(to / wo, to % wo, ki, kj))) += w;
      }
  return std::make_shared<TokenMixOp>("avgpool2d", std::move(p), in, out);
}

OpPtr freeze_flatten(const Tensor& x_aug, const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_flatten");
  const Shape2D out = flat_shape(1, in.tokens * in.channels);
  std::vector<GatherOp::Source> src;
  src.reserve(out.channels + 1);
  for (std::size_t i = 0; i < in.tokens; ++i)
    for (std::size_t c = 0; c < in.channels; ++c) src.push_back({i, c});
  src.push_back({0, in.channels});
  return std::make_shared<GatherOp>("flatten", std::move(src), in, out);
}

OpPtr freeze_token_select(const TokenSelectParams& params, const Tensor& x_aug,
                          const Shape2D& in) {
  check_augmented(x_aug, in, "freeze_token_select");
  const Shape2D out = flat_shape(1, in.channels);
  if (params.mode == TokenSelectMode::Mean) {
    Tensor p({1, in.tokens}, 1.0 / static_cast<double>(in.tokens));
    return std::make_shared<TokenMixOp>("token_select", std::move(p), in, out);
  }
  if (params.index >= in.tokens) fail(ErrorCode::Shape, "token_select: index out of range");
  std::vector<GatherOp::Source> src;
  for (std::size_t c = 0; c <= in.channels; ++c) src.push_back({params.index, c});
  return std::make_shared<GatherOp>("token_select", std::move(src), in, out);
}

OpPtr freeze_layer(const Layer& layer, const Tensor& x_aug, const Shape2D& in,
                   Diagnostics* diag) {
  switch (layer.kind) {
    case LayerKind::FullyConnected:
      return freeze_fc(std::get<FcParams>(layer.params), x_aug, in);
    case LayerKind::Normalization:
      return freeze_norm(std::get<NormParams>(layer.params), x_aug, in, diag);
    case LayerKind::Conv2D:
      return freeze_conv(std::get<ConvParams>(layer.params), x_aug, in);
    case LayerKind::Activation:
      return freeze_activation(std::get<ActivationParams>(layer.params), x_aug, in);
    case LayerKind::Attention:
      return freeze_attention(std::get<AttentionParams>(layer.params), x_aug, in);
    case LayerKind::MultiHeadAttention:
      return freeze_multihead(std::get<MultiHeadParams>(layer.params), x_aug, in);
    case LayerKind::Residual: {
      const auto& p = std::get<ResidualParams>(layer.params);
      std::vector<OpPtr> branches;
      for (const auto& branch : p.branches) {
        branches.push_back(freeze_chain(branch, x_aug, in, diag));
      }
      return freeze_residual(std::move(branches), x_aug, p.ones_owner);
    }
    case LayerKind::MaxPool2D:
      return freeze_maxpool(std::get<PoolParams>(layer.params), x_aug, in);
    case LayerKind::AvgPool2D:
      return freeze_avgpool(std::get<PoolParams>(layer.params), x_aug, in);
    case LayerKind::Flatten:
      return freeze_flatten(x_aug, in);
    case LayerKind::TokenSelect:
      return freeze_token_select(std::get<TokenSelectParams>(layer.params), x_aug, in);
    case LayerKind::Softmax:
    case LayerKind::Sigmoid:
    case LayerKind::Tanh:
      break;
  }
  std::string name = to_string(layer.kind);
  if (!layer.name.empty()) name += " '" + layer.name + "'";
  fail(ErrorCode::Capability,
       name + " cannot be formulated as an input-dependent linear transformation");
}

OpPtr freeze_chain(const std::vector<Layer>& layers, const Tensor& x_aug, const Shape2D& in,
                   Diagnostics* diag) {
  std::vector<OpPtr> ops;
  Tensor cur = x_aug;
  Shape2D shape = in;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    OpPtr op;
    try {
      op = freeze_layer(layers[i], cur, shape, diag);
    } catch (const Error& e) {
      fail(e.code(), "layer " + std::to_string(i) + ": " + e.what());
    }
    cur = op->apply(cur);
    // Token averaging can leave the ones channel an ulp away from 1; pin it so
    // the next freeze sees exact ones.
    for (std::size_t r = 0; r < cur.rows(); ++r) cur(r, cur.cols() - 1) = 1.0;
    shape = op->out_shape();
    ops.push_back(std::move(op));
  }
  return std::make_shared<SequenceOp>(std::move(ops), in);
}

}  // namespace omenn
