#include "nado/invariants.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "nado/analysis.hpp"
#include "nado/decode.hpp"
#include "nado/error.hpp"
#include "nado/random.hpp"

namespace nado {
namespace {

CheckResult Named(std::string name, ConditionId x) {
  CheckResult r;
  r.name = std::move(name);
  r.x = x;
  return r;
}

CheckResult Skip(std::string name, ConditionId x, std::string why) {
  CheckResult r = Named(std::move(name), x);
  r.skipped = true;
  r.detail = std::move(why);
  return r;
}

CheckResult Bounded(std::string name, ConditionId x, double measured, double tolerance) {
  CheckResult r = Named(std::move(name), x);
  r.measured = measured;
  r.tolerance = tolerance;
  r.passed = measured <= tolerance;
  return r;
}

std::uint64_t HashSequence(std::uint64_t seed, ConditionId x, std::span<const TokenId> y) {
  std::uint64_t h = SplitMix64(seed ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)));
  for (TokenId t : y) h = SplitMix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(t) + 1));
  return SplitMix64(h ^ y.size());
}

double HashUnit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

// Depth-first walk over every prefix of positive probability under `source`.
// `visit` sees each prefix (terminated ones flagged) with its probability.
void WalkPrefixes(const AutoregressiveSource& source, ConditionId x,
                  const std::function<void(std::span<const TokenId>, bool, double)>& visit) {
  const TokenId eos = source.vocab().eos_id();
  std::vector<TokenId> prefix;
  std::function<void(double)> rec = [&](double mass) {
    visit(prefix, false, mass);
    const TokenDistribution dist = source.next_token_dist(x, prefix);
    for (TokenId t = 0; t < static_cast<TokenId>(dist.size()); ++t) {
      if (dist[t] <= 0.0) continue;
      prefix.push_back(t);
      if (t == eos) {
        visit(prefix, true, mass * dist[t]);
      } else {
        rec(mass * dist[t]);
      }
      prefix.pop_back();
    }
  };
  rec(1.0);
}

}  // namespace

CheckResult CheckQStarClosedForm(const ExactR& exact, ConditionId x, double tol) {
  const char* name = "qstar_closed_form";
  if (exact.total(x) <= 0.0) return Skip(name, x, "infeasible oracle");
  const AutoregressiveSource& base = exact.base();
  const TokenId eos = base.vocab().eos_id();
  double worst_chain = 0.0;
  double worst_row = 0.0;
  bool leaked = false;
  std::vector<TokenId> prefix;
  // chained is the product of token-level q* rows along the prefix.
  std::function<void(double)> rec = [&](double chained) {
    const TokenDistribution p = base.next_token_dist(x, prefix);
    std::vector<double> row(p.size(), 0.0);
    if (chained > 0.0) {
      row = ExactQStarToken(exact, x, prefix).probs;
      double sum = 0.0;
      for (double v : row) sum += v;
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
    for (TokenId t = 0; t < static_cast<TokenId>(p.size()); ++t) {
      if (p[t] <= 0.0) continue;
      prefix.push_back(t);
      const double next = chained * row[t];
      if (t == eos) {
        const Sequence y{x, prefix, true};
        const double seq = ExactQStarSequence(exact, x, y);
        worst_chain = std::max(worst_chain, std::abs(seq - next));
        if (!exact.oracle().evaluate(x, y) && (seq != 0.0 || next != 0.0)) leaked = true;
      } else {
        rec(next);
      }
      prefix.pop_back();
    }
  };
  rec(1.0);
  CheckResult r = Bounded(name, x, std::max(worst_chain, worst_row), tol);
  if (leaked) {
    r.passed = false;
    r.detail = "violating sequence received mass";
  }
  return r;
}

CheckResult CheckKlOptimality(const ExactR& exact, ConditionId x, int alternatives, std::uint64_t seed) {
  const char* name = "kl_optimality";
  if (exact.total(x) <= 0.0) return Skip(name, x, "infeasible oracle");
  std::vector<double> p;
  std::vector<double> qstar;
  EnumerateSequences(exact.base(), x, [&](const Sequence& y, double prob) {
    if (!exact.oracle().evaluate(x, y)) return;
    p.push_back(prob);
    qstar.push_back(ExactQStarSequence(exact, x, y));
  });
  if (p.size() < 2) return Skip(name, x, "single satisfying sequence; every feasible q equals q*");
  auto restricted_kl = [&](const std::vector<double>& q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
    return kl;
  };
  const double best = restricted_kl(qstar);
  Rng rng(SplitMix64(seed ^ 0x6b6cULL));
  double margin = INFINITY;
  for (int a = 0; a < alternatives; ++a) {
    std::vector<double> q(p.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      q[i] = (a % 2 == 0) ? rng.exponential() : p[i] * std::exp(2.0 * rng.uniform() - 1.0);
      sum += q[i];
    }
    for (double& v : q) v /= sum;
    margin = std::min(margin, restricted_kl(q) - best);
  }
  CheckResult r = Named(name, x);
  r.measured = margin;
  r.passed = margin > 0.0;
  r.detail = "smallest KL gap over alternatives";
  return r;
}

CheckResult CheckSoftMass(const ExactR& exact, ConditionId x, double r, double tol) {
  const std::string name = "soft_mass_r" + std::to_string(r).substr(0, 4);
  const double r0 = exact.total(x);
  if (r0 <= 0.0 || r0 >= 1.0) return Skip(name, x, "success rate is 0 or 1");
  const ExactConstrainedModel soft(exact, SoftSpec{r});
  double satisfied = 0.0;
  EnumerateSequences(soft, x, [&](const Sequence& y, double prob) {
    if (exact.oracle().evaluate(x, y)) satisfied += prob;
  });
  return Bounded(name, x, std::abs(satisfied - r), tol);
}

CheckResult CheckSoftIdentity(const ExactR& exact, ConditionId x, double tol) {
  const char* name = "soft_identity";
  const double r0 = exact.total(x);
  if (r0 <= 0.0 || r0 >= 1.0) return Skip(name, x, "success rate is 0 or 1");
  const ExactConstrainedModel soft(exact, SoftSpec{r0});
  double worst = 0.0;
  double mass = 0.0;
  EnumerateSequences(exact.base(), x, [&](const Sequence& y, double prob) {
    const double q = std::exp(SequenceLogprob(soft, y));
    worst = std::max(worst, std::abs(q - prob));
    mass += q;
  });
  return Bounded(name, x, std::max(worst, std::abs(mass - 1.0)), tol);
}

CheckResult CheckDpAgreement(const TabularBaseModel& base, const LexicalOracle& oracle, ConditionId x, double tol) {
  const DfaOracle dfa = CompileLexicalOracle(oracle, base.vocab());
  const ExactR by_enum = ExactR::ByEnumeration(base, oracle);
  const ExactR by_dp = ExactR::ByDynamicProgram(base, dfa);
  double worst = 0.0;
  WalkPrefixes(base, x, [&](std::span<const TokenId> prefix, bool, double) {
    worst = std::max(worst, std::abs(by_enum.value(x, prefix) - by_dp.value(x, prefix)));
  });
  return Bounded("dp_matches_enumeration", x, worst, tol);
}

CheckResult CheckExactCoverage(const ExactR& exact, ConditionId x, double tol) {
  const char* name = "exact_r_coverage";
  if (exact.total(x) <= 0.0) return Skip(name, x, "infeasible oracle");
  const GuidedModel guided(exact.base(), exact);
  double violating = 0.0;
  double mass = 0.0;
  EnumerateSequences(guided, x, [&](const Sequence& y, double prob) {
    mass += prob;
    if (!exact.oracle().evaluate(x, y)) violating += prob;
  });
  return Bounded(name, x, std::max(violating, std::abs(mass - 1.0)), tol);
}

CheckResult CheckEnumerationMass(const AutoregressiveSource& base, ConditionId x, double tol) {
  double mass = 0.0;
  EnumerateSequences(base, x, [&](const Sequence&, double prob) { mass += prob; });
  return Bounded("enumeration_mass", x, std::abs(mass - 1.0), tol);
}

CheckResult CheckKlFull(const ExactR& exact, ConditionId x) {
  const double self = KlFull(exact.base(), exact.base(), x);
  CheckResult r = Named("kl_full_sign", x);
  r.measured = std::abs(self);
  r.tolerance = 1e-12;
  r.passed = r.measured <= r.tolerance;
  if (r.passed && exact.total(x) > 0.0) {
    const ExactConstrainedModel qstar(exact);
    const double kl = KlFull(qstar, exact.base(), x);
    // KL(q* || p) = -log R^C_p(x).
    const double expected = -std::log(exact.total(x));
    r.passed = kl >= 0.0 && std::abs(kl - expected) <= 1e-9;
    r.detail = "KL(q*||p) = " + std::to_string(kl);
  }
  return r;
}

CheckResult CheckLemma1Trial(const ExactR& exact, ConditionId x, double delta, std::uint64_t seed) {
  const char* name = "lemma1";
  if (exact.total(x) <= 0.0) return Skip(name, x, "infeasible oracle");
  const MultiplicativeR approx(exact, HashedNoise(delta, seed));
  const BoundReport rep = CheckLemma1(approx, exact, x);
  CheckResult r = Named(name, x);
  r.measured = rep.kl;
  r.tolerance = rep.bound_loose;
  r.passed = rep.holds;
  r.detail = "delta " + std::to_string(rep.delta) + (rep.vacuous ? " (vacuous)" : "");
  return r;
}

CheckResult CheckLemma2Trial(const ExactR& exact, ConditionId x, double delta, std::uint64_t seed) {
  const char* name = "lemma2";
  if (exact.total(x) <= 0.0) return Skip(name, x, "infeasible oracle");
  const double log_delta = std::log(delta);
  const Oracle& oracle = exact.oracle();
  ExpectationR::Terminal g = [&oracle, log_delta, seed](ConditionId cx, const Sequence& y) {
    const double u = HashUnit(HashSequence(seed, cx, y.y));
    return oracle.evaluate(cx, y) ? std::exp(-u * log_delta) : 1e-3 * (0.5 + 0.5 * u);
  };
  const BoundReport rep = CheckLemma2(g, exact, x);
  CheckResult r = Named(name, x);
  r.measured = rep.kl;
  r.tolerance = rep.bound_tight;
  r.passed = rep.consistent_r && rep.holds;
  r.detail = "residual " + std::to_string(rep.max_residual) + ", delta " + std::to_string(rep.delta);
  return r;
}

bool VerifyFixture(const TabularBaseModel& base, const LexicalOracle& oracle, const VerifyOptions& options,
                   std::uint64_t seed, std::vector<CheckResult>& out) {
  const DfaOracle dfa = CompileLexicalOracle(oracle, base.vocab());
  const ExactR exact = ExactR::ByDynamicProgram(base, dfa);
  Rng rng(SplitMix64(seed ^ 0x7665726966ULL));
  for (ConditionId x = 0; x < base.num_conditions(); ++x) {
    std::vector<std::function<CheckResult()>> checks = {
        [&] { return CheckEnumerationMass(base, x); },
        [&] { return CheckDpAgreement(base, oracle, x); },
        [&] { return CheckQStarClosedForm(exact, x); },
        [&] { return CheckKlOptimality(exact, x, options.kl_alternatives, rng.next_u64()); },
        [&] { return CheckSoftMass(exact, x, 0.25); },
        [&] { return CheckSoftMass(exact, x, 0.5); },
        [&] { return CheckSoftMass(exact, x, 0.9); },
        [&] { return CheckSoftIdentity(exact, x); },
        [&] { return CheckExactCoverage(exact, x); },
        [&] { return CheckKlFull(exact, x); },
    };
    for (int i = 0; i < options.lemma1_trials; ++i) {
      checks.push_back([&] {
        const double delta = 1.0 + (options.max_delta - 1.0) * rng.uniform_open_zero();
        return CheckLemma1Trial(exact, x, delta, rng.next_u64());
      });
    }
    for (int i = 0; i < options.lemma2_trials; ++i) {
      checks.push_back([&] {
        const double delta = 1.0 + (options.max_delta - 1.0) * rng.uniform_open_zero();
        return CheckLemma2Trial(exact, x, delta, rng.next_u64());
      });
    }
    for (const auto& check : checks) {
      CheckResult r;
      try {
        r = check();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kTooLarge) throw;
        r.skipped = true;
        r.detail = e.what();
        r.x = x;
      }
      out.push_back(std::move(r));
      if (!out.back().passed) return false;
    }
  }
  return true;
}

VerifyOutcome RunVerifySuite(const FixtureSpec& primary, const VerifyOptions& options) {
  VerifyOutcome outcome;
  std::vector<FixtureSpec> specs = {primary};
  for (int i = 0; i < options.random_fixtures; ++i) {
    specs.push_back(RandomLexicalFixtureSpec(SplitMix64(options.seed + static_cast<std::uint64_t>(i))));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const Fixture fixture = MakeFixture(specs[i]);
    if (!VerifyFixture(fixture.base, fixture.oracle, options, SplitMix64(options.seed ^ (i + 1)), outcome.checks)) {
      outcome.passed = false;
      outcome.offending = specs[i];
      break;
    }
  }
  return outcome;
}

}  // namespace nado
