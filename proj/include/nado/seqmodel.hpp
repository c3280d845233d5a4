#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nado/random.hpp"

namespace nado {

using TokenId = std::int32_t;
// Opaque input key. Each condition indexes its own slice of a tabular model.
using ConditionId = std::int32_t;

class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> tokens, TokenId eos_id);

  // "t0" .. "t{size-2}" followed by "</s>" as the EOS token.
  static Vocabulary Synthetic(int size);

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId eos_id() const { return eos_id_; }
  bool contains(TokenId id) const { return id >= 0 && id < size(); }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<TokenId> find(std::string_view text) const;
  // Throws kInvalidArgument for unknown strings.
  TokenId id_of(std::string_view text) const;

  std::string detokenize(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  TokenId eos_id_;
};

struct Sequence {
  ConditionId x = 0;
  std::vector<TokenId> y;
  bool terminated = false;

  // Tokens before the trailing EOS (all of y when not terminated).
  std::span<const TokenId> body() const {
    return terminated ? std::span<const TokenId>(y).first(y.size() - 1) : std::span<const TokenId>(y);
  }
};

// Builds a terminated sequence from a body, appending EOS.
Sequence Terminated(ConditionId x, std::vector<TokenId> body, TokenId eos_id);

struct TokenDistribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  double sum() const;
  // Non-negative entries summing to one within tol.
  bool is_valid(double tol = 1e-9) const;
};

// Anything that yields next-token distributions over a fixed vocabulary with a
// bounded horizon: base models, guided models, exact constrained models.
class AutoregressiveSource {
 public:
  virtual ~AutoregressiveSource() = default;

  virtual const Vocabulary& vocab() const = 0;
  // Maximum number of tokens in a sequence, EOS included.
  virtual int max_len() const = 0;
  virtual TokenDistribution next_token_dist(ConditionId x, std::span<const TokenId> prefix) const = 0;
};

// Throws unless prefix is a live (non-terminated) prefix shorter than max_len.
void CheckLivePrefix(const AutoregressiveSource& source, std::span<const TokenId> prefix);

// Order-k Markov model. Rows are indexed by (condition, window) where the
// window holds the last k tokens, most recent first, padded with a BOS slot
// (id == vocab size) before the sequence start. At prefix length max_len - 1
// the model emits EOS with probability one.
class TabularBaseModel final : public AutoregressiveSource {
 public:
  // rows: num_conditions * num_windows rows of vocab.size() probabilities,
  // condition-major.
  TabularBaseModel(Vocabulary vocab, int order, int max_len, int num_conditions,
                   std::vector<double> rows);

  const Vocabulary& vocab() const override { return vocab_; }
  int max_len() const override { return max_len_; }
  int order() const { return order_; }
  int num_conditions() const { return num_conditions_; }
  int num_windows() const { return num_windows_; }
  int pad_slot() const { return vocab_.size(); }

  int start_window() const { return start_window_; }
  int window_of(std::span<const TokenId> prefix) const;
  int advance_window(int window, TokenId token) const;
  // Window slots, most recent first; pad_slot() marks positions before start.
  std::vector<int> window_slots(int window) const;
  int window_from_slots(std::span<const int> slots) const;

  std::span<const double> row(ConditionId x, int window) const;
  bool forces_eos(std::size_t prefix_len) const {
    return static_cast<int>(prefix_len) + 1 >= max_len_;
  }

  TokenDistribution next_token_dist(ConditionId x, std::span<const TokenId> prefix) const override;

  const std::vector<double>& rows() const { return rows_; }

 private:
  Vocabulary vocab_;
  int order_;
  int max_len_;
  int num_conditions_;
  int num_windows_;
  int start_window_;
  std::vector<double> rows_;
};

double SequenceLogprob(const AutoregressiveSource& model, const Sequence& y);

struct SamplingOptions {
  double temperature = 1.0;
  double top_p = 1.0;
  // Forced EOS at this length; 0 means the source's max_len.
  int max_len = 0;
};

struct SampledSequence {
  Sequence sequence;
  // Log-probability under the unmodified source (no temperature, no nucleus).
  double logprob = 0.0;
};

// Applies temperature then keeps the smallest highest-probability set whose
// mass reaches top_p (ties broken toward lower ids), renormalized.
std::vector<double> ShapeDistribution(std::span<const double> probs, double temperature, double top_p);

SampledSequence SampleSequence(const AutoregressiveSource& model, ConditionId x, Rng& rng,
                               const SamplingOptions& options = {});
SampledSequence SampleSequence(const AutoregressiveSource& model, ConditionId x, std::uint64_t seed,
                               const SamplingOptions& options = {});

inline constexpr double kDefaultEnumerationGuard = 1e7;

// Upper bound on the number of distinct terminated sequences of the source.
double TerminatedSequenceCount(int vocab_size, int max_len);

using SequenceVisitor = std::function<void(const Sequence&, double probability)>;

// Depth-first, token-id ordered walk over every terminated sequence of
// positive probability. Throws kTooLarge when TerminatedSequenceCount exceeds
// the guard.
void EnumerateSequences(const AutoregressiveSource& model, ConditionId x, const SequenceVisitor& visit,
                        double guard = kDefaultEnumerationGuard);

struct RandomModelOptions {
  std::uint64_t seed = 0;
  int vocab_size = 4;
  int order = 1;
  int max_len = 6;
  double eos_floor = 0.1;
  int num_conditions = 1;
};

// Row masses are Exp(1) draws; EOS gets eos_floor + (1 - eos_floor) * its
// drawn share.
TabularBaseModel RandomTabularModel(const RandomModelOptions& options);

}  // namespace nado
