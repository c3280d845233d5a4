#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nado/oracle.hpp"
#include "nado/rfunction.hpp"
#include "nado/seqmodel.hpp"

namespace nado {

enum class ExactMethod { kEnumeration, kDynamicProgram };

// Ground-truth success rate R^C_p. The enumeration method sums over every
// continuation of the prefix; the dynamic program runs over
// (position, DFA state, Markov window) and needs a tabular base model with a
// DFA oracle. Results are memoized and the cache is mutex protected, so a
// single instance can be queried from several threads.
class ExactR final : public RFunction {
 public:
  static ExactR ByEnumeration(const AutoregressiveSource& base, const Oracle& oracle,
                              double guard = kDefaultEnumerationGuard);
  static ExactR ByDynamicProgram(const TabularBaseModel& base, const DfaOracle& oracle);
  // Both keep a reference to the oracle.
  static ExactR ByDynamicProgram(const TabularBaseModel&, DfaOracle&&) = delete;

  ExactMethod method() const { return method_; }
  const AutoregressiveSource& base() const { return *base_; }
  const Oracle& oracle() const { return *oracle_; }

  double value(ConditionId x, std::span<const TokenId> prefix) const override;
  std::vector<double> successors(ConditionId x, std::span<const TokenId> prefix) const override;

  // R^C_p(x), the success rate of the empty prefix.
  double total(ConditionId x) const { return value(x, {}); }

 private:
  struct DpTable;
  struct Cache {
    std::mutex mutex;
    std::unordered_map<std::string, double> enumerated;
    std::map<ConditionId, std::shared_ptr<const DpTable>> tables;
  };

  ExactR(ExactMethod method, const AutoregressiveSource& base, const Oracle& oracle,
         const TabularBaseModel* tabular, const DfaOracle* dfa, double guard);

  double enumerate_value(ConditionId x, std::span<const TokenId> prefix) const;
  std::shared_ptr<const DpTable> table(ConditionId x) const;

  ExactMethod method_;
  const AutoregressiveSource* base_;
  const Oracle* oracle_;
  const TabularBaseModel* tabular_;
  const DfaOracle* dfa_;
  double guard_;
  std::unique_ptr<Cache> cache_;
};

// One-shot DP evaluation of R^C_p(x, prefix) without an ExactR cache.
double ExactRDynamicProgram(const TabularBaseModel& base, const DfaOracle& oracle, ConditionId x,
                            std::span<const TokenId> prefix);

// q*(y|x) = p(y|x) C(x,y) / R^C_p(x). Throws kInfeasibleOracle when
// R^C_p(x) = 0.
double ExactQStarSequence(const ExactR& r, ConditionId x, const Sequence& y);

// q*(t|x,prefix) = R(x,prefix+t) / R(x,prefix) * p(t|x,prefix), without
// renormalization. Throws kInfeasiblePrefix when R(x,prefix) = 0.
TokenDistribution ExactQStarToken(const ExactR& r, ConditionId x, std::span<const TokenId> prefix);

// Soft constraint: r is the target mass of oracle-satisfying sequences, so
// r = 1 is the hard constraint and r = R^C_p(x) leaves p unchanged.
struct SoftSpec {
  double r = 1.0;
};

struct SoftCoefficients {
  double alpha = 1.0;  // multiplies satisfying mass
  double beta = 0.0;   // multiplies violating mass
};

// alpha = r / R^C_p(x), beta = (1 - r) / (1 - R^C_p(x)). Degenerate R^C_p(x)
// in {0, 1} is accepted only with the matching r; otherwise throws
// kInfeasibleSoftSpec.
SoftCoefficients ResolveSoftSpec(const SoftSpec& spec, double success_rate);

TokenDistribution SoftQStarToken(const ExactR& r, ConditionId x, std::span<const TokenId> prefix,
                                 const SoftSpec& spec);

// The closed-form constrained model as an autoregressive source: hard q* rows,
// or soft rows when a SoftSpec is given.
class ExactConstrainedModel final : public AutoregressiveSource {
 public:
  explicit ExactConstrainedModel(const ExactR& r, std::optional<SoftSpec> soft = std::nullopt)
      : r_(&r), soft_(soft) {}

  const Vocabulary& vocab() const override { return r_->base().vocab(); }
  int max_len() const override { return r_->base().max_len(); }
  TokenDistribution next_token_dist(ConditionId x, std::span<const TokenId> prefix) const override;

 private:
  const ExactR* r_;
  std::optional<SoftSpec> soft_;
};

}  // namespace nado
