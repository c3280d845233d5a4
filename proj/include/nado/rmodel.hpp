#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nado/rfunction.hpp"
#include "nado/seqmodel.hpp"

namespace nado {

inline constexpr double kClampEps = 1e-6;

struct RModelShape {
  int vocab_size = 0;
  TokenId eos_id = 0;
  int num_conditions = 1;
  int max_len = 1;
  // Number of most recent tokens the context encoder sees.
  int window = 4;
  int embed_dim = 8;
  std::vector<int> hidden = {32};
  double clamp_eps = kClampEps;

  // Condition, one block per window slot, a summed block over the window's
  // tokens, and position.
  int input_dim() const { return embed_dim * (window + 3); }
  int output_dim() const { return vocab_size + 1; }
  void validate() const;

  // Shape matching a base model's vocabulary, conditions and horizon.
  static RModelShape For(const TabularBaseModel& base, int window = 4, int embed_dim = 8,
                         std::vector<int> hidden = {32});
};

// Offsets of each parameter block inside the flat parameter vector.
struct RModelLayout {
  struct Dense {
    std::size_t weights = 0;  // out x in, row-major
    std::size_t bias = 0;
    int in = 0;
    int out = 0;
  };
  std::size_t condition_embedding = 0;  // num_conditions x embed_dim
  std::size_t token_embedding = 0;      // (vocab_size + 1) x embed_dim, last row is the pad slot
  std::size_t position_embedding = 0;   // max_len x embed_dim
  std::vector<Dense> hidden;
  Dense head;                           // (vocab_size + 1) outputs
  std::size_t size = 0;

  static RModelLayout For(const RModelShape& shape);
};

// The learned approximator R_theta. One evaluation at a prefix yields
// R_theta(x, prefix + t) for every token t plus an extra head used only at the
// empty prefix, so R_theta(x, prefix) for a non-empty prefix is the parent's
// entry for its last token. Outputs are sigmoid values clamped to
// [clamp_eps, 1 - clamp_eps]; the clamp has zero gradient where active.
class RModel final : public RFunction {
 public:
  // Hidden layers and embeddings are drawn from the seed; the output head is
  // zero so every output starts at 0.5.
  RModel(RModelShape shape, std::uint64_t seed);
  RModel(RModelShape shape, std::vector<double> parameters);

  const RModelShape& shape() const { return shape_; }
  const RModelLayout& layout() const { return layout_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }

  struct Output {
    std::vector<double> successors;  // R_theta(x, prefix + t), clamped
    double self = 0.0;               // R_theta(x, prefix), clamped
  };
  Output forward(ConditionId x, std::span<const TokenId> prefix) const;

  double value(ConditionId x, std::span<const TokenId> prefix) const override;
  std::vector<double> successors(ConditionId x, std::span<const TokenId> prefix) const override;

  // Intermediate activations of one network evaluation, kept for backprop.
  struct Trace {
    ConditionId x = 0;
    int position = 0;
    std::vector<int> slots;                   // token slot per window position, most recent first
    std::vector<std::vector<double>> layers;  // input, then each hidden activation
    std::vector<double> logits;
    std::vector<double> outputs;              // clamped sigmoid of logits, size output_dim
  };

  // Raw evaluation at a prefix: outputs[t] for t < vocab_size are successor
  // values, outputs[vocab_size] is the empty-prefix head.
  void evaluate(ConditionId x, std::span<const TokenId> prefix, Trace& trace) const;

  // Accumulates d(loss)/d(theta) into grad given d(loss)/d(outputs).
  void backward(const Trace& trace, std::span<const double> output_grad, std::span<double> grad) const;

 private:
  RModelShape shape_;
  RModelLayout layout_;
  std::vector<double> params_;
};

}  // namespace nado
