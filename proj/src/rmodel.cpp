#include "nado/rmodel.hpp"

#include <algorithm>
#include <cmath>

#include "nado/error.hpp"
#include "nado/random.hpp"

namespace nado {

void RModelShape::validate() const {
  NADO_CHECK(vocab_size >= 2, ErrorCode::kInvalidArgument, "RModel vocab_size must be at least 2");
  NADO_CHECK(eos_id >= 0 && eos_id < vocab_size, ErrorCode::kInvalidArgument, "RModel eos_id out of range");
  NADO_CHECK(num_conditions >= 1, ErrorCode::kInvalidArgument, "RModel needs at least one condition");
  NADO_CHECK(max_len >= 1, ErrorCode::kInvalidArgument, "RModel max_len must be positive");
  NADO_CHECK(window >= 0 && embed_dim >= 1, ErrorCode::kInvalidArgument, "RModel window/embed_dim invalid");
  for (int h : hidden) NADO_CHECK(h >= 1, ErrorCode::kInvalidArgument, "hidden width must be positive");
  NADO_CHECK(clamp_eps > 0.0 && clamp_eps < 0.5, ErrorCode::kInvalidArgument, "clamp_eps must lie in (0, 0.5)");
}

RModelShape RModelShape::For(const TabularBaseModel& base, int window, int embed_dim, std::vector<int> hidden) {
  RModelShape shape;
  shape.vocab_size = base.vocab().size();
  shape.eos_id = base.vocab().eos_id();
  shape.num_conditions = base.num_conditions();
  shape.max_len = base.max_len();
  shape.window = window;
  shape.embed_dim = embed_dim;
  shape.hidden = std::move(hidden);
  return shape;
}

RModelLayout RModelLayout::For(const RModelShape& shape) {
  RModelLayout layout;
  std::size_t offset = 0;
  auto take = [&](std::size_t n) {
    std::size_t at = offset;
    offset += n;
    return at;
  };
  const std::size_t d = shape.embed_dim;
  layout.condition_embedding = take(shape.num_conditions * d);
  layout.token_embedding = take((shape.vocab_size + 1) * d);
  layout.position_embedding = take(shape.max_len * d);
  int in = shape.input_dim();
  for (int width : shape.hidden) {
    Dense dense;
    dense.in = in;
    dense.out = width;
    dense.weights = take(static_cast<std::size_t>(width) * in);
    dense.bias = take(width);
    layout.hidden.push_back(dense);
    in = width;
  }
  layout.head.in = in;
  layout.head.out = shape.output_dim();
  layout.head.weights = take(static_cast<std::size_t>(layout.head.out) * in);
  layout.head.bias = take(layout.head.out);
  layout.size = offset;
  return layout;
}

RModel::RModel(RModelShape shape, std::uint64_t seed) : shape_(std::move(shape)) {
  shape_.validate();
  layout_ = RModelLayout::For(shape_);
  params_.assign(layout_.size, 0.0);
  Rng rng(SplitMix64(seed ^ 0x6e61646fULL));
  auto fill = [&](std::size_t from, std::size_t count, double scale) {
    for (std::size_t i = 0; i < count; ++i) params_[from + i] = scale * (2.0 * rng.uniform() - 1.0);
  };
  const std::size_t d = shape_.embed_dim;
  fill(layout_.condition_embedding, shape_.num_conditions * d, 0.5);
  fill(layout_.token_embedding, (shape_.vocab_size + 1) * d, 0.5);
  fill(layout_.position_embedding, shape_.max_len * d, 0.5);
  for (const auto& dense : layout_.hidden) {
    fill(dense.weights, static_cast<std::size_t>(dense.out) * dense.in, std::sqrt(6.0 / (dense.in + dense.out)));
  }
}

RModel::RModel(RModelShape shape, std::vector<double> parameters)
    : shape_(std::move(shape)), params_(std::move(parameters)) {
  shape_.validate();
  layout_ = RModelLayout::For(shape_);
  NADO_CHECK(params_.size() == layout_.size, ErrorCode::kInvalidArgument,
             "parameter vector has " + std::to_string(params_.size()) + " entries, shape needs " +
                 std::to_string(layout_.size));
}

void RModel::evaluate(ConditionId x, std::span<const TokenId> prefix, Trace& trace) const {
  NADO_CHECK(x >= 0 && x < shape_.num_conditions, ErrorCode::kMissingCondition,
             "condition " + std::to_string(x) + " unknown to RModel");
  NADO_CHECK(static_cast<int>(prefix.size()) < shape_.max_len, ErrorCode::kInvalidState,
             "prefix too long for RModel evaluation");
  const int v = shape_.vocab_size;
  const int d = shape_.embed_dim;
  trace.x = x;
  trace.position = static_cast<int>(prefix.size());
  trace.slots.assign(shape_.window, v);
  for (TokenId t : prefix) {
    NADO_CHECK(t >= 0 && t < v, ErrorCode::kInvalidArgument, "token out of range");
    NADO_CHECK(t != shape_.eos_id, ErrorCode::kInvalidState, "EOS inside an evaluated prefix");
  }
  for (int i = 0; i < shape_.window && i < static_cast<int>(prefix.size()); ++i) {
    trace.slots[i] = prefix[prefix.size() - 1 - i];
  }
  trace.layers.resize(layout_.hidden.size() + 1);
  std::vector<double>& input = trace.layers[0];
  input.resize(shape_.input_dim());
  auto copy_row = [&](std::size_t block, int row, int dest) {
    std::copy_n(params_.begin() + block + static_cast<std::size_t>(row) * d, d, input.begin() + dest * d);
  };
  copy_row(layout_.condition_embedding, x, 0);
  for (int i = 0; i < shape_.window; ++i) copy_row(layout_.token_embedding, trace.slots[i], i + 1);
  const int pooled = shape_.window + 1;
  std::fill_n(input.begin() + pooled * d, d, 0.0);
  for (int i = 0; i < shape_.window; ++i) {
    if (trace.slots[i] == v) continue;
    const double* row = params_.data() + layout_.token_embedding + static_cast<std::size_t>(trace.slots[i]) * d;
    for (int j = 0; j < d; ++j) input[pooled * d + j] += row[j];
  }
  copy_row(layout_.position_embedding, trace.position, shape_.window + 2);

  auto affine = [&](const RModelLayout::Dense& dense, const std::vector<double>& in, std::vector<double>& out) {
    out.resize(dense.out);
    const double* w = params_.data() + dense.weights;
    const double* b = params_.data() + dense.bias;
    for (int o = 0; o < dense.out; ++o) {
      double acc = b[o];
      const double* row = w + static_cast<std::size_t>(o) * dense.in;
      for (int i = 0; i < dense.in; ++i) acc += row[i] * in[i];
      out[o] = acc;
    }
  };
  for (std::size_t l = 0; l < layout_.hidden.size(); ++l) {
    affine(layout_.hidden[l], trace.layers[l], trace.layers[l + 1]);
    for (double& a : trace.layers[l + 1]) a = std::tanh(a);
  }
  affine(layout_.head, trace.layers.back(), trace.logits);
  trace.outputs.resize(trace.logits.size());
  const double lo = shape_.clamp_eps;
  const double hi = 1.0 - shape_.clamp_eps;
  for (std::size_t j = 0; j < trace.logits.size(); ++j) {
    trace.outputs[j] = std::clamp(1.0 / (1.0 + std::exp(-trace.logits[j])), lo, hi);
  }
}

void RModel::backward(const Trace& trace, std::span<const double> output_grad, std::span<double> grad) const {
  const double lo = shape_.clamp_eps;
  const double hi = 1.0 - shape_.clamp_eps;
  std::vector<double> upstream(trace.logits.size());
  bool any = false;
  for (std::size_t j = 0; j < trace.logits.size(); ++j) {
    if (output_grad[j] == 0.0) continue;
    const double s = 1.0 / (1.0 + std::exp(-trace.logits[j]));
    if (s <= lo || s >= hi) continue;
    upstream[j] = output_grad[j] * s * (1.0 - s);
    any = true;
  }
  if (!any) return;

  // Backprop through one affine layer: accumulates weight and bias gradients
  // and returns d(loss)/d(input).
  auto affine_back = [&](const RModelLayout::Dense& dense, const std::vector<double>& in,
                         const std::vector<double>& dout) {
    std::vector<double> din(dense.in, 0.0);
    const double* w = params_.data() + dense.weights;
    double* gw = grad.data() + dense.weights;
    double* gb = grad.data() + dense.bias;
    for (int o = 0; o < dense.out; ++o) {
      const double g = dout[o];
      if (g == 0.0) continue;
      gb[o] += g;
      const std::size_t row = static_cast<std::size_t>(o) * dense.in;
      for (int i = 0; i < dense.in; ++i) {
        gw[row + i] += g * in[i];
        din[i] += g * w[row + i];
      }
    }
    return din;
  };

  std::vector<double> delta = affine_back(layout_.head, trace.layers.back(), upstream);
  for (std::size_t l = layout_.hidden.size(); l-- > 0;) {
    const std::vector<double>& act = trace.layers[l + 1];
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= 1.0 - act[i] * act[i];
    delta = affine_back(layout_.hidden[l], trace.layers[l], delta);
  }
  const int d = shape_.embed_dim;
  auto scatter = [&](std::size_t block, int row, int src) {
    double* g = grad.data() + block + static_cast<std::size_t>(row) * d;
    for (int i = 0; i < d; ++i) g[i] += delta[src * d + i];
  };
  scatter(layout_.condition_embedding, trace.x, 0);
  for (int i = 0; i < shape_.window; ++i) {
    scatter(layout_.token_embedding, trace.slots[i], i + 1);
    if (trace.slots[i] != shape_.vocab_size) scatter(layout_.token_embedding, trace.slots[i], shape_.window + 1);
  }
  scatter(layout_.position_embedding, trace.position, shape_.window + 2);
}

RModel::Output RModel::forward(ConditionId x, std::span<const TokenId> prefix) const {
  Trace trace;
  evaluate(x, prefix, trace);
  Output out;
  out.successors.assign(trace.outputs.begin(), trace.outputs.begin() + shape_.vocab_size);
  if (prefix.empty()) {
    out.self = trace.outputs[shape_.vocab_size];
  } else {
    Trace parent;
    evaluate(x, prefix.first(prefix.size() - 1), parent);
    out.self = parent.outputs[prefix.back()];
  }
  return out;
}

double RModel::value(ConditionId x, std::span<const TokenId> prefix) const {
  Trace trace;
  if (prefix.empty()) {
    evaluate(x, prefix, trace);
    return trace.outputs[shape_.vocab_size];
  }
  evaluate(x, prefix.first(prefix.size() - 1), trace);
  return trace.outputs[prefix.back()];
}

std::vector<double> RModel::successors(ConditionId x, std::span<const TokenId> prefix) const {
  Trace trace;
  evaluate(x, prefix, trace);
  return std::vector<double>(trace.outputs.begin(), trace.outputs.begin() + shape_.vocab_size);
}

}  // namespace nado
