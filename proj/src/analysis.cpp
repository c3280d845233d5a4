#include "nado/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nado/decode.hpp"
#include "nado/error.hpp"
#include "nado/random.hpp"

namespace nado {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxOffending = 16;

void CheckGuard(const AutoregressiveSource& source, double guard) {
  const double count = TerminatedSequenceCount(source.vocab().size(), source.max_len());
  NADO_CHECK(count <= guard, ErrorCode::kTooLarge,
             "enumeration would visit up to " + std::to_string(count) + " sequences (guard " +
                 std::to_string(guard) + ")");
}

double KlWalk(const AutoregressiveSource& a, const AutoregressiveSource& b, ConditionId x,
              std::vector<TokenId>& prefix) {
  const TokenDistribution da = a.next_token_dist(x, prefix);
  const TokenDistribution db = b.next_token_dist(x, prefix);
  const TokenId eos = a.vocab().eos_id();
  double total = 0.0;
  for (TokenId t = 0; t < static_cast<TokenId>(da.size()); ++t) {
    if (da[t] <= 0.0) continue;
    if (db[t] <= 0.0) return kInf;
    double term = std::log(da[t] / db[t]);
    if (t != eos) {
      prefix.push_back(t);
      term += KlWalk(a, b, x, prefix);
      prefix.pop_back();
      if (std::isinf(term)) return kInf;
    }
    total += da[t] * term;
  }
  return total;
}

struct SatisfyingWalk {
  const AutoregressiveSource& p;
  const AutoregressiveSource& q;
  const Oracle& oracle;
  ConditionId x;
  std::vector<TokenId> prefix;
  double total = 0.0;
  bool infinite = false;

  // q_mass is zero once q can no longer produce the prefix; q is not queried
  // past that point.
  void walk(double logp, double logq, bool q_alive) {
    if (infinite) return;
    const TokenDistribution dp = p.next_token_dist(x, prefix);
    TokenDistribution dq;
    if (q_alive) dq = q.next_token_dist(x, prefix);
    const TokenId eos = p.vocab().eos_id();
    for (TokenId t = 0; t < static_cast<TokenId>(dp.size()); ++t) {
      if (dp[t] <= 0.0) continue;
      const bool alive = q_alive && dq[t] > 0.0;
      const double lp = logp + std::log(dp[t]);
      const double lq = alive ? logq + std::log(dq[t]) : -kInf;
      prefix.push_back(t);
      if (t == eos) {
        if (oracle.evaluate(x, Sequence{x, prefix, true})) {
          if (!alive) {
            infinite = true;
          } else {
            total += std::exp(lp) * (lp - lq);
          }
        }
      } else {
        walk(lp, lq, alive);
      }
      prefix.pop_back();
      if (infinite) return;
    }
  }
};

void AddOffending(DeltaEstimate& est, std::span<const TokenId> prefix) {
  if (est.offending.size() < kMaxOffending) est.offending.emplace_back(prefix.begin(), prefix.end());
}

void UpdateRatio(DeltaEstimate& est, double approx, double exact, std::span<const TokenId> prefix) {
  if (approx <= 0.0) {
    est.delta = kInf;
    AddOffending(est, prefix);
    return;
  }
  const double ratio = std::max(approx / exact, exact / approx);
  est.delta = std::max(est.delta, ratio);
}

struct DeltaWalk {
  const RFunction& approx;
  const ExactR& exact;
  ConditionId x;
  double floor;
  bool include_dead_children;
  DeltaEstimate est;
  std::vector<TokenId> prefix;

  void walk() {
    const AutoregressiveSource& base = exact.base();
    const TokenDistribution dist = base.next_token_dist(x, prefix);
    const std::vector<double> re = exact.successors(x, prefix);
    const std::vector<double> ra = approx.successors(x, prefix);
    const TokenId eos = base.vocab().eos_id();
    for (TokenId t = 0; t < static_cast<TokenId>(dist.size()); ++t) {
      if (dist[t] <= 0.0) continue;
      prefix.push_back(t);
      if (re[t] > 0.0) {
        UpdateRatio(est, ra[t], re[t], prefix);
        if (t != eos) walk();
      } else if (include_dead_children && ra[t] > floor) {
        est.delta = kInf;
        AddOffending(est, prefix);
      }
      prefix.pop_back();
    }
  }
};

DeltaEstimate EstimateDeltaImpl(const RFunction& approx, const ExactR& exact, ConditionId x, double floor,
                                bool include_dead_children) {
  const double root = exact.total(x);
  NADO_CHECK(root > 0.0, ErrorCode::kInfeasibleOracle,
             "no sequence satisfies the oracle for condition " + std::to_string(x));
  DeltaWalk w{approx, exact, x, floor, include_dead_children, {}, {}};
  UpdateRatio(w.est, approx.value(x, {}), root, {});
  w.walk();
  return w.est;
}

struct ResidualWalk {
  const RFunction& r;
  const AutoregressiveSource& base;
  const ExactR* exact;  // restricts the walk to q*-reachable prefixes when set
  ConditionId x;
  bool keep;
  ResidualProfile profile;
  double weighted = 0.0;
  double mass = 0.0;
  std::vector<TokenId> prefix;

  // here: R at the current prefix as reported by its parent; weight: q*
  // prefix mass (or base mass when exact is null).
  void walk(double here, double weight) {
    const TokenDistribution dist = base.next_token_dist(x, prefix);
    const std::vector<double> next = r.successors(x, prefix);
    double a = 0.0;
    for (std::size_t t = 0; t < dist.size(); ++t) a += next[t] * dist[t];
    const double residual = std::abs(a - here);
    profile.max = std::max(profile.max, residual);
    ++profile.prefixes;
    weighted += weight * residual;
    mass += weight;
    if (keep) profile.residuals.emplace(prefix, residual);

    std::vector<double> exact_next;
    double exact_here = 1.0;
    if (exact != nullptr) {
      exact_next = exact->successors(x, prefix);
      exact_here = exact->value(x, prefix);
    }
    const TokenId eos = base.vocab().eos_id();
    for (TokenId t = 0; t < static_cast<TokenId>(dist.size()); ++t) {
      if (t == eos || dist[t] <= 0.0) continue;
      double child_weight = weight * dist[t];
      if (exact != nullptr) {
        if (exact_next[t] <= 0.0) continue;
        child_weight *= exact_next[t] / exact_here;
      }
      prefix.push_back(t);
      walk(next[t], child_weight);
      prefix.pop_back();
    }
  }
};

}  // namespace

std::uint64_t DrawSeed(std::uint64_t seed, ConditionId x, int i) {
  return SplitMix64(SplitMix64(seed ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(x))) +
                    static_cast<std::uint64_t>(i));
}

double KlDivergence(std::span<const double> a, std::span<const double> b) {
  NADO_CHECK(a.size() == b.size(), ErrorCode::kInvalidArgument, "KL arguments differ in size");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] <= 0.0) continue;
    if (b[i] <= 0.0) return kInf;
    total += a[i] * std::log(a[i] / b[i]);
  }
  return std::max(0.0, total);
}

double KlFull(const AutoregressiveSource& a, const AutoregressiveSource& b, ConditionId x, double guard) {
  NADO_CHECK(a.vocab().size() == b.vocab().size() && a.max_len() == b.max_len(), ErrorCode::kInvalidArgument,
             "KL sources differ in vocabulary or horizon");
  CheckGuard(a, guard);
  std::vector<TokenId> prefix;
  const double kl = KlWalk(a, b, x, prefix);
  return std::isinf(kl) ? kl : std::max(0.0, kl);
}

double KlOnSatisfying(const AutoregressiveSource& p, const AutoregressiveSource& q, const Oracle& oracle,
                      ConditionId x, double guard) {
  CheckGuard(p, guard);
  SatisfyingWalk w{p, q, oracle, x, {}, 0.0, false};
  w.walk(0.0, 0.0, true);
  return w.infinite ? kInf : w.total;
}

double MultiplicativeR::value(ConditionId x, std::span<const TokenId> prefix) const {
  return std::min(1.0, inner_->value(x, prefix) * factor_(x, prefix));
}

std::vector<double> MultiplicativeR::successors(ConditionId x, std::span<const TokenId> prefix) const {
  std::vector<double> out = inner_->successors(x, prefix);
  std::vector<TokenId> child(prefix.begin(), prefix.end());
  child.push_back(0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    child.back() = static_cast<TokenId>(t);
    out[t] = std::min(1.0, out[t] * factor_(x, child));
  }
  return out;
}

MultiplicativeR::Factor HashedNoise(double delta, std::uint64_t seed) {
  NADO_CHECK(delta >= 1.0, ErrorCode::kInvalidArgument, "noise delta must be at least 1");
  const double log_delta = std::log(delta);
  return [log_delta, seed](ConditionId x, std::span<const TokenId> prefix) {
    std::uint64_t h = SplitMix64(seed ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)));
    for (TokenId t : prefix) h = SplitMix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(t) + 1));
    h = SplitMix64(h ^ prefix.size());
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return std::exp((2.0 * u - 1.0) * log_delta);
  };
}

ExpectationR::ExpectationR(const AutoregressiveSource& base, Terminal g, std::span<const ConditionId> xs,
                           double guard)
    : base_(&base) {
  CheckGuard(base, guard);
  const TokenId eos = base.vocab().eos_id();
  for (ConditionId x : xs) {
    std::vector<TokenId> prefix;
    std::function<double()> walk = [&]() {
      const TokenDistribution dist = base.next_token_dist(x, prefix);
      double total = 0.0;
      for (TokenId t = 0; t < static_cast<TokenId>(dist.size()); ++t) {
        if (dist[t] <= 0.0) continue;
        prefix.push_back(t);
        double v;
        if (t == eos) {
          v = g(x, Sequence{x, prefix, true});
          NADO_CHECK(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorCode::kInvalidArgument,
                     "terminal function must map into [0, 1]");
          table_[{x, prefix}] = v;
        } else {
          v = walk();
        }
        total += dist[t] * v;
        prefix.pop_back();
      }
      table_[{x, prefix}] = total;
      return total;
    };
    walk();
  }
}

double ExpectationR::value(ConditionId x, std::span<const TokenId> prefix) const {
  auto it = table_.find({x, std::vector<TokenId>(prefix.begin(), prefix.end())});
  return it == table_.end() ? 0.0 : it->second;
}

std::vector<double> ExpectationR::successors(ConditionId x, std::span<const TokenId> prefix) const {
  std::vector<double> out(base_->vocab().size(), 0.0);
  std::vector<TokenId> child(prefix.begin(), prefix.end());
  child.push_back(0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    child.back() = static_cast<TokenId>(t);
    out[t] = value(x, child);
  }
  return out;
}

DeltaEstimate EstimateDelta(const RFunction& approx, const ExactR& exact, ConditionId x, double floor) {
  return EstimateDeltaImpl(approx, exact, x, floor, true);
}

BoundReport CheckLemma1(const RFunction& approx, const ExactR& exact, ConditionId x) {
  BoundReport report;
  DeltaEstimate d = EstimateDelta(approx, exact, x);
  report.delta = d.delta;
  report.offending = std::move(d.offending);
  report.horizon = exact.base().max_len();
  report.bound_loose = (2.0 * report.horizon + 2.0) * std::log(report.delta);
  report.bound_tight = 2.0 * std::log(report.delta);
  report.vacuous = std::isinf(report.delta);
  const ExactConstrainedModel qstar(exact);
  const GuidedModel q(exact.base(), approx);
  try {
    report.kl = KlFull(qstar, q, x);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInfeasibleGuidance) throw;
    report.kl = kInf;
  }
  report.max_residual = RegResidualProfile(approx, exact, x).max;
  report.consistent_r = report.max_residual <= 1e-12;
  report.holds = report.vacuous || report.kl <= report.bound_loose + 1e-9;
  return report;
}

BoundReport CheckLemma2(const ExpectationR::Terminal& g, const ExactR& exact, ConditionId x) {
  const AutoregressiveSource& base = exact.base();
  const ConditionId xs[] = {x};
  const ExpectationR rg(base, g, xs);
  BoundReport report;
  report.max_residual = MaxRegResidual(rg, base, x);
  report.consistent_r = report.max_residual <= 1e-12;
  // The normalizer of a consistent R equals R at the prefix, so only ratios
  // along q*-reachable prefixes enter the bound.
  DeltaEstimate d = EstimateDeltaImpl(rg, exact, x, 0.0, false);
  report.delta = d.delta;
  report.offending = std::move(d.offending);
  report.horizon = base.max_len();
  report.bound_loose = (2.0 * report.horizon + 2.0) * std::log(report.delta);
  report.bound_tight = 2.0 * std::log(report.delta);
  report.vacuous = std::isinf(report.delta);
  const ExactConstrainedModel qstar(exact);
  const GuidedModel q(base, rg);
  report.kl = KlFull(qstar, q, x);
  const double bound = report.consistent_r ? report.bound_tight : report.bound_loose;
  report.holds = report.vacuous || report.kl <= bound + 1e-9;
  return report;
}

ResidualProfile RegResidualProfile(const RFunction& r, const ExactR& exact, ConditionId x, bool keep_entries) {
  NADO_CHECK(exact.total(x) > 0.0, ErrorCode::kInfeasibleOracle,
             "no sequence satisfies the oracle for condition " + std::to_string(x));
  ResidualWalk w{r, exact.base(), &exact, x, keep_entries, {}, 0.0, 0.0, {}};
  w.walk(r.value(x, {}), 1.0);
  w.profile.mean = w.mass > 0.0 ? w.weighted / w.mass : 0.0;
  return std::move(w.profile);
}

double MaxRegResidual(const RFunction& r, const AutoregressiveSource& base, ConditionId x, double guard) {
  CheckGuard(base, guard);
  ResidualWalk w{r, base, nullptr, x, false, {}, 0.0, 0.0, {}};
  w.walk(r.value(x, {}), 1.0);
  return w.profile.max;
}

CoverageCount Coverage(const AutoregressiveSource& decoder, const Oracle& oracle, std::span<const ConditionId> xs,
                       int n_per_x, std::uint64_t seed, double top_p) {
  NADO_CHECK(n_per_x >= 1, ErrorCode::kInvalidArgument, "n_per_x must be positive");
  CoverageCount count;
  for (ConditionId x : xs) {
    for (int i = 0; i < n_per_x; ++i) {
      const Sequence y = DecodeSample(decoder, x, DrawSeed(seed, x, i), top_p);
      count.satisfied += oracle.evaluate(x, y) ? 1 : 0;
      ++count.total;
    }
  }
  return count;
}

CoverageCount GreedyCoverage(const AutoregressiveSource& decoder, const Oracle& oracle,
                             std::span<const ConditionId> xs) {
  CoverageCount count;
  for (ConditionId x : xs) {
    count.satisfied += oracle.evaluate(x, DecodeGreedy(decoder, x)) ? 1 : 0;
    ++count.total;
  }
  return count;
}

NgramStats CorpusNgrams(std::span<const std::vector<TokenId>> candidates,
                        std::span<const std::vector<TokenId>> references, int n) {
  NADO_CHECK(candidates.size() == references.size(), ErrorCode::kInvalidArgument,
             "one reference per candidate is required");
  NADO_CHECK(n >= 1, ErrorCode::kInvalidArgument, "n-gram order must be positive");
  NgramStats stats;
  auto grams = [n](const std::vector<TokenId>& s) {
    std::map<std::vector<TokenId>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[std::vector<TokenId>(s.begin() + i, s.begin() + i + n)];
    return counts;
  };
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto cand = grams(candidates[k]);
    const auto ref = grams(references[k]);
    for (const auto& [gram, c] : cand) {
      stats.total += c;
      auto it = ref.find(gram);
      if (it != ref.end()) stats.matches += std::min(c, it->second);
    }
  }
  return stats;
}

std::map<int, double> BleuN(std::span<const std::vector<TokenId>> candidates,
                            std::span<const std::vector<TokenId>> references, int max_n) {
  NADO_CHECK(!candidates.empty(), ErrorCode::kInvalidArgument, "BLEU needs a nonempty corpus");
  NADO_CHECK(max_n >= 1, ErrorCode::kInvalidArgument, "max_n must be positive");
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;
  for (const auto& c : candidates) cand_len += c.size();
  for (const auto& r : references) ref_len += r.size();
  std::map<int, double> out;
  double brevity = 0.0;
  if (cand_len > 0) brevity = cand_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    const NgramStats s = CorpusNgrams(candidates, references, n);
    double precision;
    if (n == 1) {
      precision = s.total == 0 ? 0.0 : static_cast<double>(s.matches) / s.total;
    } else {
      precision = (s.matches + 1.0) / (s.total + 1.0);
    }
    if (precision <= 0.0) zero = true;
    if (!zero) log_sum += std::log(precision);
    out[n] = zero || brevity == 0.0 ? 0.0 : brevity * std::exp(log_sum / n);
  }
  return out;
}

EvalReport Evaluate(const RFunction& r, const ExactR& exact, std::span<const ConditionId> xs,
                    const EvalOptions& options) {
  NADO_CHECK(!xs.empty(), ErrorCode::kInvalidArgument, "evaluation needs at least one condition");
  NADO_CHECK(options.n_per_x >= 1, ErrorCode::kInvalidArgument, "n_per_x must be positive");
  const AutoregressiveSource& base = exact.base();
  const GuidedModel q(base, r);
  const ExactConstrainedModel qstar(exact);
  EvalReport report;
  CoverageCount count;
  std::vector<std::vector<TokenId>> candidates;
  std::vector<std::vector<TokenId>> references;
  for (ConditionId x : xs) {
    for (int i = 0; i < options.n_per_x; ++i) {
      const Sequence y = DecodeSample(q, x, DrawSeed(options.seed, x, i), options.top_p);
      count.satisfied += exact.oracle().evaluate(x, y) ? 1 : 0;
      ++count.total;
      candidates.emplace_back(y.body().begin(), y.body().end());
      const Sequence ref = DecodeSample(qstar, x, DrawSeed(~options.seed, x, i), 1.0);
      references.emplace_back(ref.body().begin(), ref.body().end());
    }
    report.kl_to_qstar += KlFull(qstar, q, x);
    report.mean_reg_residual += RegResidualProfile(r, exact, x).mean;
  }
  report.coverage = count.rate();
  report.sample_size = count.total;
  report.kl_to_qstar /= static_cast<double>(xs.size());
  report.mean_reg_residual /= static_cast<double>(xs.size());
  report.bleu = BleuN(candidates, references, options.max_bleu_n);
  return report;
}

}  // namespace nado
