#include <doctest.h>

#include <cmath>

#include "nado/error.hpp"
#include "nado/fixtures.hpp"
#include "nado/rmodel.hpp"
#include "nado/training.hpp"

using namespace nado;

namespace {

RModel Perturbed(const RModelShape& shape, std::uint64_t seed, double scale) {
  RModel rm(shape, seed);
  Rng rng(seed + 1000);
  for (double& w : rm.mutable_parameters()) w += scale * (2.0 * rng.uniform() - 1.0);
  return rm;
}

std::vector<TrainingExample> Probes(const TabularBaseModel& base, const Oracle& oracle, int n, std::uint64_t seed) {
  std::vector<TrainingExample> out;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const ConditionId x = static_cast<ConditionId>(i % base.num_conditions());
    Sequence y = SampleSequence(base, x, rng).sequence;
    const bool label = oracle.evaluate(x, y);
    out.push_back({x, std::move(y), label, std::log(0.5 + rng.uniform())});
  }
  return out;
}

}  // namespace

TEST_CASE("fresh model outputs one half everywhere") {
  const Fixture f = MakeFixture(BenchmarkFixtureSpec());
  const RModel rm(RModelShape::For(f.base), 3);
  for (const std::vector<TokenId>& prefix : {std::vector<TokenId>{}, {1}, {4, 2, 2}}) {
    for (ConditionId x = 0; x < 2; ++x) {
      const RModel::Output out = rm.forward(x, prefix);
      CHECK(out.successors.size() == 8);
      for (double v : out.successors) CHECK(v == 0.5);
      CHECK(out.self == 0.5);
    }
  }
}

TEST_CASE("outputs are clamped and deterministic") {
  const Fixture f = MakeFixture(BenchmarkFixtureSpec());
  const RModelShape shape = RModelShape::For(f.base);
  RModel rm(shape, 3);
  const RModelLayout& layout = rm.layout();
  auto params = rm.mutable_parameters();
  for (int o = 0; o < layout.head.out; ++o) params[layout.head.bias + o] = (o % 2 == 0) ? 80.0 : -80.0;
  const std::vector<TokenId> prefix = {0, 3};
  const RModel::Output out = rm.forward(0, prefix);
  for (int t = 0; t < 8; ++t) CHECK(out.successors[t] == (t % 2 == 0 ? 1.0 - kClampEps : kClampEps));

  const RModel noisy = Perturbed(shape, 9, 0.5);
  const RModel::Output a = noisy.forward(1, prefix);
  const RModel::Output b = noisy.forward(1, prefix);
  CHECK(a.successors == b.successors);
  CHECK(a.self == b.self);
  for (double v : a.successors) {
    CHECK(v >= kClampEps);
    CHECK(v <= 1.0 - kClampEps);
  }
  // R at a non-empty prefix is its parent's successor entry
  CHECK(noisy.value(1, prefix) == noisy.successors(1, std::vector<TokenId>{0})[3]);
  CHECK(noisy.value(1, {}) == noisy.forward(1, {}).self);
}

TEST_CASE("shape validation") {
  RModelShape s;
  s.vocab_size = 4;
  s.eos_id = 3;
  s.max_len = 5;
  CHECK_NOTHROW(s.validate());
  s.window = -1;
  CHECK_THROWS_AS(s.validate(), Error);
  s.window = 2;
  s.eos_id = 4;
  CHECK_THROWS_AS(s.validate(), Error);
  s.eos_id = 3;
  CHECK_THROWS_AS(RModel(s, std::vector<double>(3, 0.0)), Error);
  CHECK(RModelLayout::For(s).size == RModel(s, 1).parameters().size());
}

TEST_CASE("analytic gradient matches central differences") {
  const Fixture bench = MakeFixture(BenchmarkFixtureSpec());
  const Fixture small = MakeFixture(RandomLexicalFixtureSpec(4));
  struct Arch {
    const Fixture* f;
    int window;
    int embed;
    std::vector<int> hidden;
  };
  const std::vector<Arch> archs = {
      {&small, 1, 4, {}},       {&small, 2, 3, {8}},      {&small, 6, 4, {8, 6}},
      {&bench, 4, 8, {32}},     {&bench, 8, 6, {16, 16}}, {&bench, 3, 5, {12, 7, 9}},
  };
  for (const Arch& a : archs) {
    const RModelShape shape = RModelShape::For(a.f->base, a.window, a.embed, a.hidden);
    const RModel rm = Perturbed(shape, 41, 0.3);
    const auto probes = Probes(a.f->base, a.f->oracle, 6, 8);
    for (const double lambda : {0.0, 1.0}) {
      const GradCheckReport report = GradCheck(rm, probes, a.f->base, lambda);
      CAPTURE(a.window);
      CAPTURE(a.hidden.size());
      CAPTURE(lambda);
      CHECK(report.max_relative_error <= 1e-4);
      CHECK(report.gradient_norm > 0.0);
    }
  }

  const RModelShape shape = RModelShape::For(bench.base);
  const RModel rm = Perturbed(shape, 2, 0.3);
  const auto probes = Probes(bench.base, bench.oracle, 4, 1);
  const GradCheckReport first = GradCheck(rm, probes, bench.base, 0.5);
  const GradCheckReport second = GradCheck(rm, probes, bench.base, 0.5);
  CHECK(first.max_relative_error == second.max_relative_error);
  CHECK(first.worst_parameter == second.worst_parameter);
}

TEST_CASE("gradient vanishes at a zero-loss configuration") {
  // Every output pinned at the upper clamp, every label positive: CE is at
  // its floor, the consistency residual is zero and the clamp blocks the
  // gradient.
  const Fixture f = MakeFixture(BenchmarkFixtureSpec());
  const RModelShape shape = RModelShape::For(f.base);
  RModel rm = Perturbed(shape, 6, 0.2);
  const RModelLayout& layout = rm.layout();
  auto params = rm.mutable_parameters();
  for (int o = 0; o < layout.head.out; ++o) {
    for (int i = 0; i < layout.head.in; ++i) params[layout.head.weights + o * layout.head.in + i] = 0.0;
    params[layout.head.bias + o] = 60.0;
  }
  std::vector<TrainingExample> probes = Probes(f.base, f.oracle, 8, 3);
  for (TrainingExample& ex : probes) ex.label = true;
  const std::vector<double> grad = LossGradient(rm, probes, f.base, 1.0);
  double norm = 0.0;
  for (double g : grad) norm += g * g;
  CHECK(std::sqrt(norm) <= 1e-8);
  for (const TrainingExample& ex : probes) {
    CHECK(CeLoss(rm, ex) == doctest::Approx(-(ex.y.y.size() + 1.0) * std::log(1.0 - kClampEps)));
    CHECK(CeLoss(rm, ex) < 1e-4);
  }
}
