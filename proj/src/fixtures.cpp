#include "nado/fixtures.hpp"

#include "nado/error.hpp"
#include "nado/random.hpp"

namespace nado {

Fixture MakeFixture(const FixtureSpec& spec) {
  TabularBaseModel base = RandomTabularModel(spec.model);
  std::map<ConditionId, std::vector<Pattern>> keywords;
  for (const auto& [x, patterns] : spec.keywords) {
    NADO_CHECK(x >= 0 && x < spec.model.num_conditions, ErrorCode::kMissingCondition,
               "keywords given for condition " + std::to_string(x) + " outside the model");
    auto& out = keywords[x];
    for (const auto& pattern : patterns) {
      Pattern ids;
      for (const auto& token : pattern) ids.push_back(base.vocab().id_of(token));
      out.push_back(std::move(ids));
    }
  }
  LexicalOracle oracle(std::move(keywords), base.vocab());
  return Fixture{std::move(base), std::move(oracle)};
}

FixtureSpec BenchmarkFixtureSpec() {
  FixtureSpec spec;
  spec.model = {.seed = 1, .vocab_size = 8, .order = 1, .max_len = 8, .eos_floor = 0.05, .num_conditions = 2};
  spec.keywords = {{0, {{"t2"}, {"t5"}}}, {1, {{"t3"}, {"t0"}}}};
  return spec;
}

FixtureSpec RareFixtureSpec() {
  FixtureSpec spec;
  spec.model = {.seed = 19, .vocab_size = 8, .order = 1, .max_len = 8, .eos_floor = 0.4, .num_conditions = 1};
  spec.keywords = {{0, {{"t2"}, {"t5"}}}};
  return spec;
}

FixtureSpec RandomLexicalFixtureSpec(std::uint64_t seed) {
  Rng rng(SplitMix64(seed ^ 0x5eedf1c7ULL));
  FixtureSpec spec;
  spec.model.seed = rng.next_u64();
  spec.model.vocab_size = 3 + static_cast<int>(rng.below(2));
  spec.model.order = static_cast<int>(rng.below(2));
  spec.model.max_len = 4 + static_cast<int>(rng.below(3));
  spec.model.eos_floor = 0.05 + 0.2 * rng.uniform();
  spec.model.num_conditions = 1 + static_cast<int>(rng.below(2));
  const Vocabulary vocab = Vocabulary::Synthetic(spec.model.vocab_size);
  const int body_tokens = spec.model.vocab_size - 1;
  for (ConditionId x = 0; x < spec.model.num_conditions; ++x) {
    const int count = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < count; ++i) {
      const int length = 1 + static_cast<int>(rng.below(2));
      std::vector<std::string> pattern;
      for (int j = 0; j < length; ++j) pattern.push_back(vocab.token(static_cast<TokenId>(rng.below(body_tokens))));
      spec.keywords[x].push_back(std::move(pattern));
    }
  }
  return spec;
}

TabularBaseModel TwoTokenUniformModel() {
  return TabularBaseModel(Vocabulary({"a", "b", "</s>"}, 2), 0, 3, 1, {0.5, 0.5, 0.0});
}

std::vector<TrainingExample> ReferenceCorpus(const ExactR& exact, std::span<const ConditionId> xs, int per_x,
                                             std::uint64_t seed) {
  NADO_CHECK(per_x >= 0, ErrorCode::kInvalidArgument, "per_x must be non-negative");
  const ExactConstrainedModel qstar(exact);
  std::vector<TrainingExample> corpus;
  for (ConditionId x : xs) {
    if (per_x == 0 || exact.total(x) <= 0.0) continue;
    Rng rng(SplitMix64(seed ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(x))));
    for (int i = 0; i < per_x; ++i) {
      TrainingExample ex;
      ex.x = x;
      ex.y = SampleSequence(qstar, x, rng).sequence;
      ex.label = true;
      corpus.push_back(std::move(ex));
    }
  }
  return corpus;
}

}  // namespace nado
