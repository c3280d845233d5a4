#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

#include "helpers.hpp"
#include "nado/analysis.hpp"
#include "nado/decode.hpp"
#include "nado/error.hpp"
#include "nado/exact.hpp"
#include "nado/training.hpp"

using namespace nado;
using nado::test::ConstantR;

namespace {

// Weighted mean and its standard error for self-normalized weights.
struct WeightedMean {
  double mean = 0.0;
  double se = 0.0;
};

WeightedMean Estimate(const std::vector<TrainingExample>& xs, const std::function<double(const TrainingExample&)>& f) {
  double sw = 0.0;
  double swf = 0.0;
  for (const TrainingExample& ex : xs) {
    sw += ex.weight();
    swf += ex.weight() * f(ex);
  }
  WeightedMean out;
  out.mean = swf / sw;
  double var = 0.0;
  for (const TrainingExample& ex : xs) {
    const double d = f(ex) - out.mean;
    var += ex.weight() * ex.weight() * d * d;
  }
  out.se = std::sqrt(var) / sw;
  return out;
}

TabularBaseModel SmallModel(std::uint64_t seed) {
  RandomModelOptions o;
  o.seed = seed;
  o.vocab_size = 4;
  o.order = 1;
  o.max_len = 6;
  o.eos_floor = 0.1;
  return RandomTabularModel(o);
}

RModel Perturbed(const RModelShape& shape, std::uint64_t seed, double scale) {
  RModel rm(shape, seed);
  Rng rng(seed + 7);
  for (double& w : rm.mutable_parameters()) w += scale * (2.0 * rng.uniform() - 1.0);
  return rm;
}

}  // namespace

TEST_CASE("cross entropy and Bernoulli KL") {
  CHECK(BinaryCrossEntropy(0.5, true) == doctest::Approx(std::log(2.0)));
  CHECK(BinaryCrossEntropy(0.25, false) == doctest::Approx(-std::log(0.75)));
  CHECK(std::isfinite(BinaryCrossEntropy(0.0, true)));
  for (const double a : {0.0, 1e-3, 0.3, 0.5, 0.99, 1.0}) CHECK(BernoulliKl(a, a) == 0.0);
  CHECK(BernoulliKl(0.75, 0.5) == doctest::Approx(0.75 * std::log(1.5) + 0.25 * std::log(0.5)));
  CHECK(BernoulliKl(0.2, 0.7) > 0.0);
}

TEST_CASE("loss values at fixed R") {
  const TabularBaseModel base = TwoTokenUniformModel();
  const TrainingExample ex{0, Terminated(0, {0, 1}, 2), true, 0.0};
  const double prefixes = 4.0;  // [], [a], [a b], [a b </s>]
  CHECK(CeLoss(ConstantR(0.5, 3), ex) == doctest::Approx(prefixes * std::log(2.0)));
  CHECK(CeLoss(ConstantR(1.0 - kClampEps, 3), ex) == doctest::Approx(-prefixes * std::log(1.0 - kClampEps)));
  CHECK(CeLoss(ConstantR(1.0 - kClampEps, 3), ex) < 1e-5);
  CHECK(RegLoss(ConstantR(0.37, 3), base, ex) == doctest::Approx(0.0).epsilon(1e-15));

  const LexicalOracle oracle = nado::test::ContainsA(base.vocab());
  const ExactR exact = ExactR::ByEnumeration(base, oracle);
  EnumerateSequences(base, 0, [&](const Sequence& y, double) {
    const TrainingExample e{0, y, oracle.evaluate(0, y), 0.0};
    CHECK(std::abs(RegLoss(exact, base, e)) <= 1e-9);
  });
}

TEST_CASE("weighted training sets are unbiased for expectations under p") {
  const TabularBaseModel base = SmallModel(8);
  const LexicalOracle oracle({{0, {{1}}}}, base.vocab());
  const ExactR exact = ExactR::ByEnumeration(base, oracle);
  const std::vector<ConditionId> xs = {0};

  // statistics: oracle label and body length
  double expected_label = 0.0;
  double expected_length = 0.0;
  EnumerateSequences(base, 0, [&](const Sequence& y, double p) {
    expected_label += p * (oracle.evaluate(0, y) ? 1.0 : 0.0);
    expected_length += p * static_cast<double>(y.body().size());
  });
  CHECK(expected_label == doctest::Approx(exact.total(0)).epsilon(1e-12));

  const RModel guide = Perturbed(RModelShape::For(base), 3, 1.0);
  const GuidedModel proposal(base, guide);

  TrainConfig cfg;
  cfg.samples_per_x = 100000;
  cfg.seed = 12;
  std::vector<std::pair<std::string, std::vector<TrainingExample>>> sets;
  {
    TrainConfig t = cfg;
    t.temperature = 1.6;
    sets.emplace_back("temperature 1.6", SampleTrainingSet(base, oracle, xs, t));
    t.temperature = 0.8;
    sets.emplace_back("temperature 0.8", SampleTrainingSet(base, oracle, xs, t));
  }
  {
    TrainConfig t = cfg;
    t.importance_sampling = true;
    sets.emplace_back("importance", SampleTrainingSet(base, oracle, xs, t, &proposal));
  }
  for (const auto& [name, set] : sets) {
    CAPTURE(name);
    REQUIRE(set.size() == 100000);
    const WeightedMean label = Estimate(set, [](const TrainingExample& e) { return e.label ? 1.0 : 0.0; });
    const WeightedMean length =
        Estimate(set, [](const TrainingExample& e) { return static_cast<double>(e.y.body().size()); });
    CHECK(std::abs(label.mean - expected_label) <= 3 * label.se);
    CHECK(std::abs(length.mean - expected_length) <= 3 * length.se);
    for (const TrainingExample& e : set) CHECK(e.label == oracle.evaluate(0, e.y));
  }

  // plain draws and a proposal equal to p carry equal weights
  TrainConfig plain = cfg;
  plain.samples_per_x = 200;
  for (const TrainingExample& e : SampleTrainingSet(base, oracle, xs, plain)) {
    CHECK(e.log_weight == doctest::Approx(0.0).epsilon(1e-12));
  }
  plain.importance_sampling = true;
  for (const TrainingExample& e : SampleTrainingSet(base, oracle, xs, plain, &base)) {
    CHECK(e.log_weight == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("mean weighted CE estimates the prefix-level cross entropy") {
  const TabularBaseModel base = SmallModel(9);
  const LexicalOracle oracle({{0, {{2}}}}, base.vocab());
  const ExactR exact = ExactR::ByEnumeration(base, oracle);
  const RModel rm = Perturbed(RModelShape::For(base, 6, 4, {8}), 4, 1.0);

  // sum over prefixes s of p(s) * CE(R^C_p(s), R_theta(s))
  std::map<std::vector<TokenId>, double> prefix_mass;
  EnumerateSequences(base, 0, [&](const Sequence& y, double p) {
    for (std::size_t n = 0; n <= y.y.size(); ++n) prefix_mass[{y.y.begin(), y.y.begin() + n}] += p;
  });
  double expected = 0.0;
  for (const auto& [prefix, mass] : prefix_mass) {
    const double target = exact.value(0, prefix);
    const double r = std::clamp(rm.value(0, prefix), kClampEps, 1.0 - kClampEps);
    expected += mass * (-target * std::log(r) - (1.0 - target) * std::log(1.0 - r));
  }

  TrainConfig cfg;
  cfg.samples_per_x = 100000;
  cfg.seed = 3;
  cfg.temperature = 1.4;
  const std::vector<ConditionId> xs = {0};
  const auto set = SampleTrainingSet(base, oracle, xs, cfg);
  const WeightedMean ce = Estimate(set, [&](const TrainingExample& e) { return CeLoss(rm, e); });
  CHECK(std::abs(ce.mean - expected) <= 3 * ce.se);
}

TEST_CASE("tempered sampler") {
  const TabularBaseModel base = SmallModel(2);
  const TemperedSequenceSampler sampler(base, 2.0);
  double mass = 0.0;
  double z = 0.0;
  EnumerateSequences(base, 0, [&](const Sequence& y, double p) {
    mass += sampler.probability(y);
    z += std::pow(p, 0.5);
  });
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sampler.log_partition(0) == doctest::Approx(std::log(z)).epsilon(1e-12));
  Rng rng(1);
  const SampledSequence s = sampler.sample(0, rng);
  CHECK(s.logprob == doctest::Approx(SequenceLogprob(base, s.sequence)).epsilon(1e-12));
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lambda = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.samples_per_x = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  CHECK(cfg.mode() == SamplingMode::kPlain);
  cfg.temperature = 2.0;
  CHECK(cfg.mode() == SamplingMode::kTemperature);
  cfg.importance_sampling = true;
  CHECK(cfg.mode() == SamplingMode::kImportance);
  CHECK(cfg.warmup_rate() == cfg.learning_rate);
  cfg.warmup_learning_rate = 0.5;
  CHECK(cfg.warmup_rate() == 0.5);
}

TEST_CASE("overfitting a single example lowers CE every epoch") {
  const TabularBaseModel base = SmallModel(1);
  const TrainingExample ex{0, Terminated(0, {0, 2, 1}, 3), true, 0.0};
  const std::vector<TrainingExample> examples(16, ex);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.learning_rate = 0.05;
  cfg.epochs = 10;
  cfg.batch_size = 4;
  const TrainResult result = Train(RModel(RModelShape::For(base), 2), examples, base, cfg);
  REQUIRE(result.curve.size() == 10);
  for (std::size_t i = 1; i < result.curve.size(); ++i) {
    CHECK(result.curve[i].ce <= result.curve[i - 1].ce + 1e-6);
  }
  CHECK(result.curve.back().ce < result.curve.front().ce);
}

TEST_CASE("training is deterministic and rejects non-finite losses") {
  const TabularBaseModel base = SmallModel(3);
  const LexicalOracle oracle({{0, {{1}}}}, base.vocab());
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 3;
  cfg.samples_per_x = 50;
  cfg.seed = 5;
  const std::vector<ConditionId> xs = {0};
  const RModelShape shape = RModelShape::For(base);
  const PipelineResult a = TrainNado(base, oracle, xs, shape, cfg);
  const PipelineResult b = TrainNado(base, oracle, xs, shape, cfg);
  CHECK(std::equal(a.model.parameters().begin(), a.model.parameters().end(), b.model.parameters().begin()));

  std::vector<TrainingExample> bad = SampleTrainingSet(base, oracle, xs, cfg);
  bad[0].log_weight = 1e6;
  try {
    Train(RModel(shape, 1), bad, base, cfg);
    FAIL("expected a non-finite loss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFiniteLoss);
  }
}

TEST_CASE("learned R approaches the exact success rate") {
  const TabularBaseModel base = SmallModel(6);
  const LexicalOracle oracle({{0, {{2}}}}, base.vocab());
  const ExactR exact = ExactR::ByEnumeration(base, oracle);
  TrainConfig cfg;
  cfg.lambda = 1.0;
  cfg.learning_rate = 0.1;
  cfg.epochs = 60;
  cfg.samples_per_x = 2000;
  cfg.seed = 2;
  const std::vector<ConditionId> xs = {0};
  const PipelineResult trained = TrainNado(base, oracle, xs, RModelShape::For(base, 6, 8, {32}), cfg);

  // mean over reachable prefixes, unweighted
  std::map<std::vector<TokenId>, bool> prefixes;
  EnumerateSequences(base, 0, [&](const Sequence& y, double) {
    for (std::size_t n = 0; n <= y.y.size(); ++n) prefixes[{y.y.begin(), y.y.begin() + n}] = true;
  });
  double err = 0.0;
  for (const auto& [prefix, unused] : prefixes) err += std::abs(trained.model.value(0, prefix) - exact.value(0, prefix));
  err /= static_cast<double>(prefixes.size());
  MESSAGE("mean |R_theta - R| = " << err << " over " << prefixes.size() << " prefixes");
  CHECK(err <= 0.05);
}

TEST_CASE("regularization lowers the consistency residual") {
  const Fixture f = MakeFixture({{100, 4, 1, 6, 0.1, 1}, {{0, {{"t1"}, {"t2"}}}}});
  const ExactR exact = ExactR::ByEnumeration(f.base, f.oracle);
  const std::vector<ConditionId> xs = {0};
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 60;
  cfg.samples_per_x = 500;
  const RModelShape shape = RModelShape::For(f.base, 6, 8, {32});
  cfg.lambda = 1.0;
  const double with_reg = RegResidualProfile(TrainNado(f.base, f.oracle, xs, shape, cfg).model, exact, 0).mean;
  cfg.lambda = 0.0;
  const double without = RegResidualProfile(TrainNado(f.base, f.oracle, xs, shape, cfg).model, exact, 0).mean;
  MESSAGE("residual with reg " << with_reg << ", without " << without);
  CHECK(with_reg < without);
}

TEST_CASE("warmup") {
  const TabularBaseModel base = SmallModel(10);
  const TokenId a = 0;
  // full-length bodies, so every live prefix continues with a
  const std::vector<TrainingExample> corpus(
      5, TrainingExample{0, Terminated(0, std::vector<TokenId>(base.max_len() - 1, a), 3), true, 0.0});
  TrainConfig cfg;
  cfg.warmup_epochs = 30;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 5;
  const RModelShape shape = RModelShape::For(base);
  const WarmupResult warm = Warmup(RModel(shape, 1), base, corpus, cfg);
  CHECK_FALSE(warm.skipped);
  CHECK(warm.curve.back() < warm.curve.front());
  const GuidedModel q(base, warm.model);
  // every live prefix made of a tokens
  for (int n = 0; n + 1 < base.max_len(); ++n) {
    const std::vector<TokenId> prefix(n, a);
    const bool forced = base.forces_eos(prefix.size());
    if (forced) continue;
    CAPTURE(n);
    CHECK(q.next_token_dist(0, prefix)[a] > base.next_token_dist(0, prefix)[a]);
  }

  cfg.warmup_epochs = 0;
  const RModel fresh(shape, 1);
  const WarmupResult untouched = Warmup(fresh, base, corpus, cfg);
  CHECK(std::equal(fresh.parameters().begin(), fresh.parameters().end(), untouched.model.parameters().begin()));

  cfg.warmup_epochs = 5;
  std::vector<TrainingExample> negatives = corpus;
  for (TrainingExample& ex : negatives) ex.label = false;
  CHECK(Warmup(fresh, base, negatives, cfg).skipped);
}

TEST_CASE("importance sampling after warmup finds more positives on a rare oracle") {
  const Fixture f = MakeFixture(RareFixtureSpec());
  const DfaOracle dfa = CompileLexicalOracle(f.oracle, f.base.vocab());
  const ExactR exact = ExactR::ByDynamicProgram(f.base, dfa);
  REQUIRE(exact.total(0) <= 0.02);
  const std::vector<ConditionId> xs = {0};
  const RModelShape shape = RModelShape::For(f.base, 8, 8, {32});

  TrainConfig is;
  is.lambda = 1.0;
  is.learning_rate = 0.02;
  is.warmup_learning_rate = 0.2;
  is.warmup_epochs = 30;
  is.epochs = 1;
  is.samples_per_x = 200;
  is.importance_sampling = true;
  is.seed = 3;
  const auto corpus = ReferenceCorpus(exact, xs, 100, 4);
  const PipelineResult guided = TrainNado(f.base, f.oracle, xs, shape, is, corpus);

  TrainConfig plain = is;
  plain.importance_sampling = false;
  plain.warmup_epochs = 0;
  plain.samples_per_x = static_cast<int>(guided.main_samples);
  const PipelineResult baseline = TrainNado(f.base, f.oracle, xs, shape, plain);
  MESSAGE("positives: importance " << guided.main_positives << "/" << guided.main_samples << ", plain "
                                   << baseline.main_positives << "/" << baseline.main_samples);
  CHECK(guided.main_positives >= baseline.main_positives);
  CHECK(guided.main_positives > 0);
}
