#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nado/seqmodel.hpp"

namespace nado {

// Sequence-level boolean predicate C(x, y). Only terminated sequences are
// accepted as input.
class Oracle {
 public:
  virtual ~Oracle() = default;

  // Throws kInvalidArgument for non-terminated input.
  bool evaluate(ConditionId x, const Sequence& y) const;
  virtual std::string descriptor() const = 0;

 protected:
  virtual bool evaluate_body(ConditionId x, std::span<const TokenId> body) const = 0;
};

class ConstantOracle final : public Oracle {
 public:
  explicit ConstantOracle(bool value) : value_(value) {}
  std::string descriptor() const override { return value_ ? "constant(1)" : "constant(0)"; }

 protected:
  bool evaluate_body(ConditionId, std::span<const TokenId>) const override { return value_; }

 private:
  bool value_;
};

// Wraps an arbitrary deterministic predicate over (condition, body).
class PredicateOracle final : public Oracle {
 public:
  using Predicate = std::function<bool(ConditionId, std::span<const TokenId>)>;
  PredicateOracle(Predicate predicate, std::string descriptor)
      : predicate_(std::move(predicate)), descriptor_(std::move(descriptor)) {}
  std::string descriptor() const override { return descriptor_; }

 protected:
  bool evaluate_body(ConditionId x, std::span<const TokenId> body) const override { return predicate_(x, body); }

 private:
  Predicate predicate_;
  std::string descriptor_;
};

using Pattern = std::vector<TokenId>;

// True iff every pattern registered for x occurs contiguously in the body.
// Conditions without patterns are vacuously satisfied.
class LexicalOracle final : public Oracle {
 public:
  // Throws kInvalidPattern for empty patterns or patterns containing EOS.
  LexicalOracle(std::map<ConditionId, std::vector<Pattern>> keywords, const Vocabulary& vocab);

  const std::vector<Pattern>& patterns(ConditionId x) const;
  const std::map<ConditionId, std::vector<Pattern>>& keywords() const { return keywords_; }
  std::string descriptor() const override { return descriptor_; }

 protected:
  bool evaluate_body(ConditionId x, std::span<const TokenId> body) const override;

 private:
  std::map<ConditionId, std::vector<Pattern>> keywords_;
  std::string descriptor_;
};

bool ContainsContiguous(std::span<const TokenId> body, std::span<const TokenId> pattern);

// Total deterministic automaton over a full vocabulary.
struct Dfa {
  int num_states = 0;
  int vocab_size = 0;
  int start = 0;
  std::vector<int> transitions;        // num_states * vocab_size, row-major
  std::vector<std::uint8_t> accepting;  // one flag per state

  // Throws kInvalidArgument if the table is not total and in range.
  void validate() const;

  int step(int state, TokenId token) const;
  int run(std::span<const TokenId> body) const;
  int run_from(int state, std::span<const TokenId> body) const;
  bool accepts(int state) const { return accepting.at(state) != 0; }
  int next_unchecked(int state, TokenId token) const { return transitions[state * vocab_size + token]; }

  // Accepting and closed under every token.
  bool is_absorbing_accept(int state) const;
  // No accepting state reachable from here.
  bool is_dead(int state) const;
};

class DfaOracle final : public Oracle {
 public:
  // Conditions absent from the map use `fallback`; without one they throw
  // kMissingCondition.
  explicit DfaOracle(std::map<ConditionId, Dfa> automata, std::string descriptor = "dfa",
                     std::optional<Dfa> fallback = std::nullopt);

  const Dfa& automaton(ConditionId x) const;
  const std::map<ConditionId, Dfa>& automata() const { return automata_; }
  const std::optional<Dfa>& fallback() const { return fallback_; }
  std::string descriptor() const override { return descriptor_; }

 protected:
  bool evaluate_body(ConditionId x, std::span<const TokenId> body) const override;

 private:
  std::map<ConditionId, Dfa> automata_;
  std::string descriptor_;
  std::optional<Dfa> fallback_;
};

// Failure-link substring matcher for one pattern: states 0..m count the
// matched prefix length, state m absorbs. EOS transitions are self loops.
Dfa PatternMatcher(std::span<const TokenId> pattern, const Vocabulary& vocab);

// Reachable product of per-pattern matchers; accepting iff every component
// has matched. An empty pattern set yields a single accepting state.
Dfa CompileLexicalToDfa(std::span<const Pattern> patterns, const Vocabulary& vocab);

DfaOracle CompileLexicalOracle(const LexicalOracle& oracle, const Vocabulary& vocab);

}  // namespace nado
