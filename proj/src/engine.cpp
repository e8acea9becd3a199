#include "omenn/engine.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace omenn {
namespace {

void check_input(const ModelGraph& model, const Tensor& x) {
  if (x.rank() != 2 || x.rows() != model.input.tokens || x.cols() != model.input.channels) {
    fail(ErrorCode::Shape, "input must be " + std::to_string(model.input.tokens) + "x" +
                               std::to_string(model.input.channels));
  }
}

void check_logit_index(std::size_t index, std::size_t count) {
  if (index >= count) {
    fail(ErrorCode::OutOfRange, "logit index " + std::to_string(index) + " out of range (" +
                                    std::to_string(count) + " logits)");
  }
}

}  // namespace

AugmentedInput augment(const Tensor& x, const Shape2D& shape) {
  if (x.rank() != 2 || x.rows() != shape.tokens || x.cols() != shape.channels) {
    fail(ErrorCode::Shape, "augment: input does not match its declared shape");
  }
  return {augment_matrix(x), shape};
}

AugmentedInput augment(const Tensor& x) {
  if (x.rank() != 2) fail(ErrorCode::Shape, "augment: expected tokens x channels");
  return augment(x, flat_shape(x.rows(), x.cols()));
}

Tensor strip(const AugmentedInput& input) { return strip_ones(input.x_aug); }

Tensor FrozenTrace::apply(const Tensor& x_aug) const {
  Tensor cur = x_aug;
  for (const auto& op : ops) cur = op->apply(cur);
  return cur;
}

FrozenTrace freeze_network(const ModelGraph& model, const Tensor& x) {
  check_input(model, x);
  output_shape(model.layers, model.input);

  FrozenTrace trace;
  trace.input = augment(x, model.input);
  trace.activations.reserve(model.layers.size() + 1);
  trace.activations.push_back(x);
  Shape2D shape = model.input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    const Tensor& cur = trace.activations.back();
    try {
      trace.ops.push_back(freeze_layer(layer, augment_matrix(cur), shape, &trace.diagnostics));
      trace.activations.push_back(forward(layer, cur, shape));
    } catch (const Error& e) {
      fail(e.code(), "layer " + std::to_string(i) + ": " + e.what());
    }
    shape = output_shape(layer, shape);
  }
  trace.output = trace.activations.back();
  trace.logits = trace.output.reshaped({trace.output.size()});
  if (model.logits != 0 && trace.logits.size() != model.logits) {
    fail(ErrorCode::ShapeChain, "network produces " + std::to_string(trace.logits.size()) +
                                    " outputs but the head declares " +
                                    std::to_string(model.logits));
  }
  return trace;
}

Tensor contribution_row(const FrozenTrace& trace, std::size_t logit_index) {
  check_logit_index(logit_index, trace.logits.size());
  const std::size_t d = trace.output.cols();
  Tensor g({trace.output.rows(), d + 1});
  g(logit_index / d, logit_index % d) = 1.0;
  for (auto it = trace.ops.rbegin(); it != trace.ops.rend(); ++it) g = (*it)->apply_adjoint(g);
  return g;
}

ExplanationResult assemble_explanation(const Tensor& c_wb, const Tensor& x, double logit,
                                       const ExplainOptions& options) {
  const std::size_t t = x.rows(), d = x.cols();
  if (c_wb.rank() != 2 || c_wb.rows() != t || c_wb.cols() != d + 1) {
    fail(ErrorCode::Shape, "explanation: C~_wb does not match the input");
  }
  ExplanationResult r;
  r.c_wb = c_wb;
  r.c_w = Tensor({t, d});
  r.c_b = Tensor({t, 1});
  r.c = Tensor({t, 1});
  for (std::size_t i = 0; i < t; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      r.c_w(i, j) = c_wb(i, j);
      acc += c_wb(i, j) * x(i, j);
    }
    r.c_b(i, 0) = c_wb(i, d);
    r.c(i, 0) = acc + c_wb(i, d);
  }
  r.logit = logit;
  r.completeness_residual = std::abs(sum(r.c) - logit);
  const double scale_ref = std::max(1.0, std::abs(logit));
  r.flagged = r.completeness_residual > options.tolerance * scale_ref;
  if (r.completeness_residual > options.hard_cap * scale_ref) {
    fail(ErrorCode::Integrity, "completeness residual " + std::to_string(r.completeness_residual) +
                                   " exceeds the hard cap for logit " + std::to_string(logit));
  }
  return r;
}

ExplanationResult explain(const FrozenTrace& trace, std::size_t class_index,
                          const ExplainOptions& options) {
  const Tensor row = contribution_row(trace, class_index);
  return assemble_explanation(row, strip(trace.input), trace.logits[class_index], options);
}

ExplanationResult explain(const ModelGraph& model, const Tensor& x, std::size_t class_index,
                          const ExplainOptions& options) {
  return explain(freeze_network(model, x), class_index, options);
}

Tensor model_logits(const ModelGraph& model, const Tensor& x) {
  check_input(model, x);
  const Tensor y = forward(model.layers, x, model.input);
  return y.reshaped({y.size()});
}

Tensor explain_gradient(const ModelGraph& model, const Tensor& x, std::size_t class_index) {
  check_input(model, x);
  const Shape2D out = output_shape(model.layers, model.input);
  check_logit_index(class_index, out.size());
  Tensor g({out.tokens, out.channels});
  g[class_index] = 1.0;
  return vjp(model.layers, x, model.input, g);
}

Tensor gradient_times_input(const Tensor& gradient, const Tensor& x) {
  return sum_channels(hadamard(gradient, x));
}

Tensor sum_channels(const Tensor& m) {
  Tensor r({m.rows(), 1});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r(i, 0) += m(i, j);
  return r;
}

}  // namespace omenn
