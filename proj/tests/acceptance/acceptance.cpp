// Acceptance run: one PASS/FAIL line per criterion. Thresholds, fixtures and
// seeds are fixed here; the process exits nonzero if any criterion fails.

#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nado/analysis.hpp"
#include "nado/decode.hpp"
#include "nado/exact.hpp"
#include "nado/fixtures.hpp"
#include "nado/invariants.hpp"
#include "nado/training.hpp"

using namespace nado;

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); }

std::string Fmt(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
std::string Fmt(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void Criterion(int id, const char* title, const std::function<Verdict()>& body) {
  const auto start = Clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::printf("%s %2d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, title, v.detail.c_str(), Seconds(start));
  std::fflush(stdout);
}

// Small random lexical fixtures whose condition 0 is satisfiable but not
// certain.
struct Small {
  Fixture f;
  std::unique_ptr<ExactR> exact;
  std::uint64_t seed = 0;
};

std::vector<std::unique_ptr<Small>> SmallFixtures(int n) {
  std::vector<std::unique_ptr<Small>> out;
  for (std::uint64_t seed = 0; static_cast<int>(out.size()) < n; ++seed) {
    auto s = std::make_unique<Small>(Small{MakeFixture(RandomLexicalFixtureSpec(seed)), nullptr, seed});
    s->exact = std::make_unique<ExactR>(ExactR::ByEnumeration(s->f.base, s->f.oracle));
    const double r0 = s->exact->total(0);
    if (r0 > 0.0 && r0 < 1.0) out.push_back(std::move(s));
  }
  return out;
}

// Runs a check on every condition of every fixture; skipped checks are not
// counted.
struct Tally {
  int run = 0;
  int failed = 0;
  double worst = 0.0;
  std::string first_failure;

  void add(const CheckResult& r, std::uint64_t seed) {
    if (r.skipped) return;
    ++run;
    worst = std::max(worst, r.measured);
    if (!r.passed) {
      if (failed++ == 0) first_failure = Fmt("fixture %llu x=%d %s", static_cast<unsigned long long>(seed), r.x,
                                             r.detail.c_str());
    }
  }
};

RModel Perturbed(const RModelShape& shape, std::uint64_t seed, double scale) {
  RModel rm(shape, seed);
  Rng rng(SplitMix64(seed));
  for (double& w : rm.mutable_parameters()) w += scale * (2.0 * rng.uniform() - 1.0);
  return rm;
}

class CountingSource final : public AutoregressiveSource {
 public:
  explicit CountingSource(const AutoregressiveSource& inner) : inner_(&inner) {}
  const Vocabulary& vocab() const override { return inner_->vocab(); }
  int max_len() const override { return inner_->max_len(); }
  TokenDistribution next_token_dist(ConditionId x, std::span<const TokenId> prefix) const override {
    ++calls;
    return inner_->next_token_dist(x, prefix);
  }
  mutable long calls = 0;

 private:
  const AutoregressiveSource* inner_;
};

class CountingR final : public RFunction {
 public:
  explicit CountingR(const RFunction& inner) : inner_(&inner) {}
  double value(ConditionId x, std::span<const TokenId> prefix) const override {
    ++value_calls;
    return inner_->value(x, prefix);
  }
  std::vector<double> successors(ConditionId x, std::span<const TokenId> prefix) const override {
    ++successor_calls;
    return inner_->successors(x, prefix);
  }
  mutable long value_calls = 0;
  mutable long successor_calls = 0;

 private:
  const RFunction* inner_;
};

// Self-normalized weighted mean of f and its standard error.
std::pair<double, double> WeightedMean(const std::vector<TrainingExample>& set,
                                       const std::function<double(const TrainingExample&)>& f) {
  std::vector<double> values(set.size());
  double sw = 0.0;
  double swf = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    values[i] = f(set[i]);
    sw += set[i].weight();
    swf += set[i].weight() * values[i];
  }
  const double mean = swf / sw;
  double var = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = set[i].weight() * (values[i] - mean);
    var += d * d;
  }
  return {mean, std::sqrt(var) / sw};
}

// Mean time of one call, repeated for at least min_seconds.
double TimePerCall(const std::function<void()>& f, double min_seconds) {
  const auto start = Clock::now();
  long n = 0;
  do {
    f();
    ++n;
  } while (Seconds(start) < min_seconds);
  return Seconds(start) / static_cast<double>(n);
}

constexpr int kSmallFixtures = 50;

}  // namespace

int main() {
  const auto fixtures = SmallFixtures(kSmallFixtures);

  Criterion(1, "closed-form q*", [&] {
    constexpr double kTol = 1e-9;
    constexpr double kLimit = 30.0;
    const auto start = Clock::now();
    Tally t;
    for (const auto& s : fixtures) {
      for (ConditionId x = 0; x < s->f.base.num_conditions(); ++x) t.add(CheckQStarClosedForm(*s->exact, x, kTol), s->seed);
    }
    const double secs = Seconds(start);
    return Verdict{t.failed == 0 && t.run >= kSmallFixtures && secs < kLimit,
                   Fmt("%d fixtures, %d conditions, worst deviation %.2e (tol %.0e), %.2f s (limit %.0f s)%s",
                       kSmallFixtures, t.run, t.worst, kTol, secs, kLimit, t.first_failure.c_str())};
  });

  Criterion(2, "KL optimality of q*", [&] {
    constexpr int kAlternatives = 100;
    constexpr double kLimit = 60.0;
    const auto start = Clock::now();
    Tally t;
    for (const auto& s : fixtures) {
      for (ConditionId x = 0; x < s->f.base.num_conditions(); ++x) {
        t.add(CheckKlOptimality(*s->exact, x, kAlternatives, SplitMix64(s->seed ^ 0xa17ULL) + x), s->seed);
      }
    }
    const double secs = Seconds(start);
    return Verdict{t.failed == 0 && t.run >= kSmallFixtures && secs < kLimit,
                   Fmt("%d conditions x %d alternatives, %d losses, %.2f s (limit %.0f s)%s", t.run, kAlternatives,
                       t.failed, secs, kLimit, t.first_failure.c_str())};
  });

  Criterion(3, "soft-constraint mass", [&] {
    constexpr double kMassTol = 1e-9;
    constexpr double kIdentityTol = 1e-12;
    Tally mass;
    Tally identity;
    for (const auto& s : fixtures) {
      for (ConditionId x = 0; x < s->f.base.num_conditions(); ++x) {
        for (const double r : {0.25, 0.5, 0.9}) mass.add(CheckSoftMass(*s->exact, x, r, kMassTol), s->seed);
        identity.add(CheckSoftIdentity(*s->exact, x, kIdentityTol), s->seed);
      }
    }
    return Verdict{mass.failed == 0 && identity.failed == 0 && mass.run >= 3 * kSmallFixtures,
                   Fmt("%d mass checks worst %.2e (tol %.0e); %d identity checks worst %.2e (tol %.0e)%s%s", mass.run,
                       mass.worst, kMassTol, identity.run, identity.worst, kIdentityTol,
                       mass.first_failure.c_str(), identity.first_failure.c_str())};
  });

  Criterion(4, "approximation bounds", [&] {
    constexpr int kLemma1Fixtures = 20;
    constexpr int kLemma1PerFixture = 10;
    constexpr int kLemma2Trials = 50;
    constexpr double kMaxDelta = 2.0;
    constexpr double kLimit = 120.0;
    const auto start = Clock::now();
    Tally l1;
    Rng rng(404);
    for (int i = 0; i < kLemma1Fixtures; ++i) {
      const Small& s = *fixtures[i];
      for (int k = 0; k < kLemma1PerFixture; ++k) {
        const double delta = 1.0 + (kMaxDelta - 1.0) * rng.uniform_open_zero();
        l1.add(CheckLemma1Trial(*s.exact, 0, delta, rng.next_u64()), s.seed);
      }
    }
    Tally l2;
    for (int k = 0; k < kLemma2Trials; ++k) {
      const Small& s = *fixtures[k % fixtures.size()];
      const double delta = 1.0 + (kMaxDelta - 1.0) * rng.uniform_open_zero();
      l2.add(CheckLemma2Trial(*s.exact, 0, delta, rng.next_u64()), s.seed);
    }
    const double secs = Seconds(start);
    return Verdict{l1.failed == 0 && l1.run == kLemma1Fixtures * kLemma1PerFixture && l2.failed == 0 &&
                       l2.run == kLemma2Trials && secs < kLimit,
                   Fmt("perturbation bound held %d/%d (delta <= %.0f), consistent-R bound held %d/%d, %.2f s "
                       "(limit %.0f s)%s%s",
                       l1.run - l1.failed, l1.run, kMaxDelta, l2.run - l2.failed, l2.run, secs, kLimit,
                       l1.first_failure.c_str(), l2.first_failure.c_str())};
  });

  Criterion(5, "dynamic program vs enumeration", [&] {
    constexpr double kTol = 1e-12;
    constexpr double kMinSpeedup = 10.0;
    Tally agree;
    for (const auto& s : fixtures) {
      for (ConditionId x = 0; x < s->f.base.num_conditions(); ++x) {
        agree.add(CheckDpAgreement(s->f.base, s->f.oracle, x, kTol), s->seed);
      }
    }
    double min_speedup = INFINITY;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const FixtureSpec spec{{500 + seed, 4, 1, 8, 0.1, 1}, {{0, {{"t0", "t1"}, {"t2"}}}}};
      const Fixture f = MakeFixture(spec);
      agree.add(CheckDpAgreement(f.base, f.oracle, 0, kTol), spec.model.seed);
      const double t_enum = TimePerCall([&] { (void)ExactR::ByEnumeration(f.base, f.oracle).total(0); }, 0.3);
      const double t_dp = TimePerCall(
          [&] {
            const DfaOracle dfa = CompileLexicalOracle(f.oracle, f.base.vocab());
            (void)ExactR::ByDynamicProgram(f.base, dfa).total(0);
          },
          0.3);
      min_speedup = std::min(min_speedup, t_enum / t_dp);
    }
    return Verdict{agree.failed == 0 && min_speedup >= kMinSpeedup,
                   Fmt("%d agreement checks worst %.2e (tol %.0e); speedup at V=4, L_max=8 at least %.0fx (need %.0fx)%s",
                       agree.run, agree.worst, kTol, min_speedup, kMinSpeedup, agree.first_failure.c_str())};
  });

  Criterion(6, "training on the benchmark fixture", [&] {
    constexpr double kMinCoverage = 0.95;
    constexpr double kMaxKl = 0.1;
    constexpr double kMaxBaseCoverage = 0.5;
    constexpr double kLimit = 600.0;
    const auto start = Clock::now();
    const Fixture f = MakeFixture(BenchmarkFixtureSpec());
    const DfaOracle dfa = CompileLexicalOracle(f.oracle, f.base.vocab());
    const ExactR exact = ExactR::ByDynamicProgram(f.base, dfa);
    const std::vector<ConditionId> xs = {0, 1};
    double base_coverage = 0.0;
    for (ConditionId x : xs) base_coverage += exact.total(x) / static_cast<double>(xs.size());

    TrainConfig cfg;
    cfg.lambda = 1.0;
    cfg.learning_rate = 0.1;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.samples_per_x = 20000;
    cfg.seed = 7;
    const PipelineResult trained = TrainNado(f.base, f.oracle, xs, RModelShape::For(f.base, 8, 8, {32}), cfg);
    EvalOptions eval;
    eval.n_per_x = 500;
    eval.seed = 0;
    const EvalReport report = Evaluate(trained.model, exact, xs, eval);
    const double secs = Seconds(start);
    return Verdict{report.coverage >= kMinCoverage && report.kl_to_qstar <= kMaxKl &&
                       base_coverage <= kMaxBaseCoverage && secs < kLimit,
                   Fmt("coverage %.3f (need %.2f), KL(q*||q) %.4f (max %.2f), base coverage %.3f (max %.1f), %.0f s "
                       "(limit %.0f s)",
                       report.coverage, kMinCoverage, report.kl_to_qstar, kMaxKl, base_coverage, kMaxBaseCoverage,
                       secs, kLimit)};
  });

  Criterion(7, "regularization lowers the consistency residual", [&] {
    constexpr int kPairs = 10;
    constexpr int kMinWins = 9;
    int wins = 0;
    std::string detail;
    for (int s = 0; s < kPairs; ++s) {
      const FixtureSpec spec{{100 + static_cast<std::uint64_t>(s), 4, 1, 6, 0.1, 1}, {{0, {{"t1"}, {"t2"}}}}};
      const Fixture f = MakeFixture(spec);
      const ExactR exact = ExactR::ByEnumeration(f.base, f.oracle);
      const std::vector<ConditionId> xs = {0};
      const RModelShape shape = RModelShape::For(f.base, 6, 8, {32});
      TrainConfig cfg;
      cfg.learning_rate = 0.1;
      cfg.epochs = 60;
      cfg.samples_per_x = 500;
      cfg.seed = static_cast<std::uint64_t>(s);
      cfg.lambda = 1.0;
      const double with_reg = RegResidualProfile(TrainNado(f.base, f.oracle, xs, shape, cfg).model, exact, 0).mean;
      cfg.lambda = 0.0;
      const double without = RegResidualProfile(TrainNado(f.base, f.oracle, xs, shape, cfg).model, exact, 0).mean;
      if (with_reg < without) ++wins;
      detail += Fmt("%s%.4f/%.4f", s == 0 ? "" : " ", with_reg, without);
    }
    return Verdict{wins >= kMinWins,
                   Fmt("lambda=1 below lambda=0 in %d/%d pairs (need %d); residuals %s", wins, kPairs, kMinWins,
                       detail.c_str())};
  });

  Criterion(8, "weighted loss estimates are unbiased", [&] {
    constexpr int kSamples = 100000;
    constexpr double kSigmas = 3.0;
    constexpr double kLambda = 1.0;
    RandomModelOptions o;
    o.seed = 8;
    o.vocab_size = 4;
    o.order = 1;
    o.max_len = 6;
    o.eos_floor = 0.1;
    const TabularBaseModel base = RandomTabularModel(o);
    const LexicalOracle oracle({{0, {{1}}}}, base.vocab());
    const RModel rm = Perturbed(RModelShape::For(base, 6, 8, {16}), 31, 1.0);
    const RModel guide = Perturbed(RModelShape::For(base, 6, 8, {16}), 32, 1.0);
    const GuidedModel proposal(base, guide);
    const std::vector<ConditionId> xs = {0};

    auto loss = [&](const TrainingExample& ex) { return ExampleLoss(rm, base, ex, kLambda); };
    double expected = 0.0;
    EnumerateSequences(base, 0, [&](const Sequence& y, double p) {
      expected += p * loss(TrainingExample{0, y, oracle.evaluate(0, y), 0.0});
    });

    struct Arm {
      const char* name;
      double temperature;
      bool importance;
    };
    bool ok = true;
    std::string detail = Fmt("expected %.5f;", expected);
    for (const Arm& arm : {Arm{"T=5/4", 1.25, false}, Arm{"T=5/3", 5.0 / 3.0, false}, Arm{"importance", 1.0, true}}) {
      TrainConfig cfg;
      cfg.samples_per_x = kSamples;
      cfg.temperature = arm.temperature;
      cfg.importance_sampling = arm.importance;
      cfg.seed = 2024;
      const auto set = SampleTrainingSet(base, oracle, xs, cfg, arm.importance ? &proposal : nullptr);
      const auto [mean, se] = WeightedMean(set, loss);
      const double z = std::abs(mean - expected) / se;
      ok = ok && z <= kSigmas;
      detail += Fmt(" %s %.5f (%.2f SE)", arm.name, mean, z);
    }
    return Verdict{ok, detail + Fmt("; limit %.0f SE at %d samples", kSigmas, kSamples)};
  });

  Criterion(9, "rare-oracle rescue", [&] {
    constexpr double kMaxBaseRate = 0.02;
    constexpr double kMinYieldRatio = 5.0;
    constexpr double kMinCoverage = 0.9;
    constexpr double kPlainBelow = 0.7;
    const Fixture f = MakeFixture(RareFixtureSpec());
    const DfaOracle dfa = CompileLexicalOracle(f.oracle, f.base.vocab());
    const ExactR exact = ExactR::ByDynamicProgram(f.base, dfa);
    const std::vector<ConditionId> xs = {0};
    const RModelShape shape = RModelShape::For(f.base, 8, 8, {32});
    const double base_rate = exact.total(0);

    TrainConfig is;
    is.lambda = 1.0;
    is.learning_rate = 0.02;
    is.epochs = 100;
    is.samples_per_x = 100;
    is.importance_sampling = true;
    is.proposal_mix = 0.25;
    is.warmup_epochs = 100;
    is.warmup_learning_rate = 0.2;
    is.seed = 1;
    const auto references = ReferenceCorpus(exact, xs, 200, 1000);
    const PipelineResult guided = TrainNado(f.base, f.oracle, xs, shape, is, references);

    TrainConfig plain = is;
    plain.importance_sampling = false;
    plain.warmup_epochs = 0;
    plain.samples_per_x = static_cast<int>(guided.main_samples);
    const PipelineResult unguided = TrainNado(f.base, f.oracle, xs, shape, plain);

    const double yield_is = static_cast<double>(guided.main_positives) / static_cast<double>(guided.main_samples);
    const double yield_plain =
        static_cast<double>(unguided.main_positives) / static_cast<double>(unguided.main_samples);
    const double cov_is = Coverage(GuidedModel(f.base, guided.model), f.oracle, xs, 1000, 5).rate();
    const double cov_plain = Coverage(GuidedModel(f.base, unguided.model), f.oracle, xs, 1000, 5).rate();
    const bool yield_ok = yield_is > 0.0 && yield_is >= kMinYieldRatio * yield_plain;
    return Verdict{base_rate <= kMaxBaseRate && yield_ok && cov_is >= kMinCoverage && cov_plain < kPlainBelow,
                   Fmt("base rate %.4f (max %.2f); positives %zu/%zu vs plain %zu/%zu (need %.0fx); coverage %.3f "
                       "(need %.2f) vs plain %.3f (must stay below %.1f)",
                       base_rate, kMaxBaseRate, guided.main_positives, guided.main_samples, unguided.main_positives,
                       unguided.main_samples, kMinYieldRatio, cov_is, kMinCoverage, cov_plain, kPlainBelow)};
  });

  Criterion(10, "gradients and per-step cost", [&] {
    constexpr double kMaxError = 1e-4;
    const Fixture bench = MakeFixture(BenchmarkFixtureSpec());
    const Fixture small = MakeFixture(RandomLexicalFixtureSpec(4));
    struct Arch {
      const Fixture* f;
      int window;
      int embed;
      std::vector<int> hidden;
    };
    const std::vector<Arch> archs = {
        {&small, 1, 4, {}},     {&small, 2, 3, {8}},      {&small, 6, 4, {8, 6}},       {&bench, 1, 8, {}},
        {&bench, 4, 8, {32}},   {&bench, 8, 8, {32}},     {&bench, 8, 6, {16, 16}},     {&bench, 3, 5, {12, 7, 9}},
    };
    double worst = 0.0;
    for (const Arch& a : archs) {
      const RModel rm = Perturbed(RModelShape::For(a.f->base, a.window, a.embed, a.hidden), 41, 0.3);
      std::vector<TrainingExample> probes;
      Rng rng(8);
      for (int i = 0; i < 6; ++i) {
        const ConditionId x = static_cast<ConditionId>(i % a.f->base.num_conditions());
        Sequence y = SampleSequence(a.f->base, x, rng).sequence;
        const bool label = a.f->oracle.evaluate(x, y);
        probes.push_back({x, std::move(y), label, std::log(0.5 + rng.uniform())});
      }
      for (const double lambda : {0.0, 1.0}) {
        worst = std::max(worst, GradCheck(rm, probes, a.f->base, lambda).max_relative_error);
      }
    }

    const RModel rm = Perturbed(RModelShape::For(bench.base), 5, 0.3);
    const CountingSource base(bench.base);
    const CountingR r(rm);
    const GuidedModel guided(base, r);
    long steps = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      steps += static_cast<long>(DecodeSample(guided, static_cast<ConditionId>(seed % 2), seed).y.size());
    }
    for (ConditionId x = 0; x < 2; ++x) steps += static_cast<long>(DecodeGreedy(guided, x).y.size());
    const bool counts_ok = base.calls == steps && r.successor_calls == steps && r.value_calls == 0;
    return Verdict{worst <= kMaxError && counts_ok,
                   Fmt("%zu architectures, worst relative error %.2e (max %.0e); %ld steps, %ld base fetches, %ld R "
                       "evaluations, %ld extra R queries",
                       archs.size(), worst, kMaxError, steps, base.calls, r.successor_calls, r.value_calls)};
  });

  std::printf("%s: %d criteria failed\n", failures == 0 ? "PASS" : "FAIL", failures);
  return failures == 0 ? 0 : 1;
}
