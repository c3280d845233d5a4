#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nado/exact.hpp"
#include "nado/fixtures.hpp"
#include "nado/oracle.hpp"
#include "nado/seqmodel.hpp"

namespace nado {

struct CheckResult {
  std::string name;
  ConditionId x = 0;
  bool passed = true;
  bool skipped = false;  // precondition not met, e.g. an infeasible oracle
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

// Sequence-level q* against the product of token-level q* rows over every
// base sequence; every visited row sums to one; violating sequences get
// exactly zero from both.
CheckResult CheckQStarClosedForm(const ExactR& exact, ConditionId x, double tol = 1e-9);

// q* against n random distributions over the satisfying set (half arbitrary,
// half reweightings of p) on the restricted KL; q* must be strictly better.
CheckResult CheckKlOptimality(const ExactR& exact, ConditionId x, int alternatives, std::uint64_t seed);

// Satisfying mass of the soft model equals r within tol.
CheckResult CheckSoftMass(const ExactR& exact, ConditionId x, double r, double tol = 1e-9);

// r = R^C_p(x) reproduces p sequence by sequence within tol.
CheckResult CheckSoftIdentity(const ExactR& exact, ConditionId x, double tol = 1e-12);

// DP and enumeration agree at every live and terminated prefix of positive
// base probability.
CheckResult CheckDpAgreement(const TabularBaseModel& base, const LexicalOracle& oracle, ConditionId x,
                             double tol = 1e-12);

// Decoding with exact R puts all of its mass on satisfying sequences.
CheckResult CheckExactCoverage(const ExactR& exact, ConditionId x, double tol = 1e-12);

// Enumerated base mass sums to one; KL(p || p) is zero and KL(p || q*) on the
// satisfying part is nonnegative.
CheckResult CheckEnumerationMass(const AutoregressiveSource& base, ConditionId x, double tol = 1e-9);
CheckResult CheckKlFull(const ExactR& exact, ConditionId x);

// One randomized bounded perturbation R = R* exp(u ln delta), u uniform in
// [-1, 1] per prefix, checked against (2L + 2) ln delta.
CheckResult CheckLemma1Trial(const ExactR& exact, ConditionId x, double delta, std::uint64_t seed);

// One tower-property construction: g(y) in [1/delta, 1] on satisfying
// sequences and in (0, eps] on violating ones; residual must be <= 1e-12 and
// KL <= 2 ln delta_measured.
CheckResult CheckLemma2Trial(const ExactR& exact, ConditionId x, double delta, std::uint64_t seed);

struct VerifyOptions {
  int random_fixtures = 10;
  int lemma1_trials = 10;  // per fixture and condition
  int lemma2_trials = 3;
  int kl_alternatives = 20;
  double max_delta = 2.0;
  std::uint64_t seed = 0;
};

struct VerifyOutcome {
  std::vector<CheckResult> checks;
  bool passed = true;
  // The fixture of the first failing check.
  std::optional<FixtureSpec> offending;
};

// Runs every check over the given fixture and a set of small random ones,
// stopping at the first failure.
VerifyOutcome RunVerifySuite(const FixtureSpec& primary, const VerifyOptions& options);

// The checks for one fixture, in a fixed order. Stops at the first failure.
bool VerifyFixture(const TabularBaseModel& base, const LexicalOracle& oracle, const VerifyOptions& options,
                   std::uint64_t seed, std::vector<CheckResult>& out);

}  // namespace nado
