#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "nado/exact.hpp"
#include "nado/oracle.hpp"
#include "nado/rfunction.hpp"
#include "nado/seqmodel.hpp"

namespace nado {

// KL between two explicit distributions over the same index set. Indices with
// a = 0 contribute nothing; a > 0 with b = 0 gives +infinity.
double KlDivergence(std::span<const double> a, std::span<const double> b);

// Sequence-level KL(a || b) for condition x by a joint walk over every
// terminated sequence with positive a-probability. +infinity on a support
// violation. Throws kTooLarge past the enumeration guard.
double KlFull(const AutoregressiveSource& a, const AutoregressiveSource& b, ConditionId x,
              double guard = kDefaultEnumerationGuard);

// sum over oracle-satisfying y of p(y) log(p(y) / q(y)). KL(p || q) itself is
// infinite for every q supported on the satisfying set; this is the part that
// depends on q, and q* minimizes it over that set.
double KlOnSatisfying(const AutoregressiveSource& p, const AutoregressiveSource& q, const Oracle& oracle,
                      ConditionId x, double guard = kDefaultEnumerationGuard);

// R(x, prefix) = min(1, R_inner(x, prefix) * factor(x, prefix)).
class MultiplicativeR final : public RFunction {
 public:
  using Factor = std::function<double(ConditionId, std::span<const TokenId>)>;
  MultiplicativeR(const RFunction& inner, Factor factor) : inner_(&inner), factor_(std::move(factor)) {}

  double value(ConditionId x, std::span<const TokenId> prefix) const override;
  std::vector<double> successors(ConditionId x, std::span<const TokenId> prefix) const override;

 private:
  const RFunction* inner_;
  Factor factor_;
};

// Deterministic per-prefix factor exp(u ln delta) with u uniform in [-1, 1],
// hashed from (seed, x, prefix).
MultiplicativeR::Factor HashedNoise(double delta, std::uint64_t seed);

// R_g(x, prefix) = E[g(x, y) | prefix] under the base model, tabulated by one
// walk over the sequence tree. Satisfies the consistency identity exactly.
class ExpectationR final : public RFunction {
 public:
  using Terminal = std::function<double(ConditionId, const Sequence&)>;
  ExpectationR(const AutoregressiveSource& base, Terminal g, std::span<const ConditionId> xs,
               double guard = kDefaultEnumerationGuard);

  double value(ConditionId x, std::span<const TokenId> prefix) const override;
  std::vector<double> successors(ConditionId x, std::span<const TokenId> prefix) const override;

 private:
  const AutoregressiveSource* base_;
  std::map<std::pair<ConditionId, std::vector<TokenId>>, double> table_;
};

struct DeltaEstimate {
  double delta = 1.0;  // +infinity when the ratio is unbounded
  std::vector<std::vector<TokenId>> offending;
};

// Smallest delta with 1/delta <= R_approx/R_exact <= delta over every prefix
// reachable with positive q* mass (terminated ones included) and the
// base-reachable children entering their normalizers. A child with exact R = 0
// and approximate R above the clamp floor makes delta infinite.
DeltaEstimate EstimateDelta(const RFunction& approx, const ExactR& exact, ConditionId x,
                            double floor = 1e-6 * (1.0 + 1e-9));

struct BoundReport {
  double delta = 1.0;
  int horizon = 0;
  double kl = 0.0;
  double bound_loose = 0.0;  // (2L + 2) ln delta
  double bound_tight = 0.0;  // 2 ln delta
  bool consistent_r = false;
  double max_residual = 0.0;
  bool holds = false;
  // delta is infinite; the bound says nothing.
  bool vacuous = false;
  std::vector<std::vector<TokenId>> offending;
};

// Composes q from R_approx with explicit normalization and checks
// KL(q* || q) <= (2L + 2) ln delta with L = max_len.
BoundReport CheckLemma1(const RFunction& approx, const ExactR& exact, ConditionId x);

// Builds R_g from a bounded terminal function g into (0, 1], verifies the
// consistency identity, and checks KL(q* || q_g) <= 2 ln delta.
BoundReport CheckLemma2(const ExpectationR::Terminal& g, const ExactR& exact, ConditionId x);

struct ResidualProfile {
  // |sum_t R(prefix + t) p(t|prefix) - R(prefix)| per live prefix reachable
  // under q*, keyed by prefix; filled only when requested.
  std::map<std::vector<TokenId>, double> residuals;
  double mean = 0.0;  // weighted by q* prefix mass
  double max = 0.0;
  std::size_t prefixes = 0;
};

ResidualProfile RegResidualProfile(const RFunction& r, const ExactR& exact, ConditionId x, bool keep_entries = false);

// Largest residual over every live prefix reachable under the base model.
double MaxRegResidual(const RFunction& r, const AutoregressiveSource& base, ConditionId x,
                      double guard = kDefaultEnumerationGuard);

// Seed of the i-th draw for condition x.
std::uint64_t DrawSeed(std::uint64_t seed, ConditionId x, int i);

struct CoverageCount {
  std::size_t satisfied = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(satisfied) / static_cast<double>(total); }
};

// Samples n_per_x sequences per condition from the decoder (seeded per draw)
// and counts oracle satisfaction.
CoverageCount Coverage(const AutoregressiveSource& decoder, const Oracle& oracle, std::span<const ConditionId> xs,
                       int n_per_x, std::uint64_t seed, double top_p = 1.0);
// Greedy decoding, one sequence per condition.
CoverageCount GreedyCoverage(const AutoregressiveSource& decoder, const Oracle& oracle,
                             std::span<const ConditionId> xs);

struct NgramStats {
  std::size_t matches = 0;  // clipped
  std::size_t total = 0;
};

// Corpus n-gram statistics for one order, one reference per candidate.
NgramStats CorpusNgrams(std::span<const std::vector<TokenId>> candidates,
                        std::span<const std::vector<TokenId>> references, int n);

// Corpus BLEU-n for n = 1..max_n: geometric mean of clipped precisions with
// add-one smoothing for n >= 2, times the brevity penalty.
std::map<int, double> BleuN(std::span<const std::vector<TokenId>> candidates,
                            std::span<const std::vector<TokenId>> references, int max_n);

struct EvalReport {
  double coverage = 0.0;
  double kl_to_qstar = 0.0;  // mean over conditions
  double mean_reg_residual = 0.0;
  std::map<int, double> bleu;
  std::size_t sample_size = 0;
};

struct EvalOptions {
  int n_per_x = 100;
  std::uint64_t seed = 0;
  double top_p = 1.0;
  int max_bleu_n = 4;
};

// Decodes from the composition of the base model with r, measures coverage,
// KL(q* || q), the q*-weighted residual and BLEU against q* samples.
EvalReport Evaluate(const RFunction& r, const ExactR& exact, std::span<const ConditionId> xs,
                    const EvalOptions& options);

}  // namespace nado
