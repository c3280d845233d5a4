#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nado/exact.hpp"
#include "nado/oracle.hpp"
#include "nado/seqmodel.hpp"
#include "nado/training.hpp"

namespace nado {

// A random tabular base model plus a lexical oracle whose keywords are given
// as token strings of the synthetic vocabulary.
struct FixtureSpec {
  RandomModelOptions model;
  std::map<ConditionId, std::vector<std::vector<std::string>>> keywords;
};

struct Fixture {
  TabularBaseModel base;
  LexicalOracle oracle;
};

Fixture MakeFixture(const FixtureSpec& spec);

// V=8, k=1, L_max=8, two conditions with two single-token keywords each.
FixtureSpec BenchmarkFixtureSpec();

// V=8, k=1, L_max=8, one condition; long-tailed EOS makes both keywords
// together rare (about 1.2% of base samples).
FixtureSpec RareFixtureSpec();

// Small random fixture (V in {3, 4}, k in {0, 1}, L_max in {4, 5, 6}, one or
// two conditions, one or two keywords of length one or two), fully determined
// by the seed. Oracles may be infeasible for some conditions.
FixtureSpec RandomLexicalFixtureSpec(std::uint64_t seed);

// Tokens {a, b} plus EOS, uniform over a and b, exactly two body tokens then
// EOS.
TabularBaseModel TwoTokenUniformModel();

// per_x draws from q* for every condition with a satisfying sequence, labeled
// positive: a stand-in for gold references when warming up.
std::vector<TrainingExample> ReferenceCorpus(const ExactR& exact, std::span<const ConditionId> xs, int per_x,
                                             std::uint64_t seed);

}  // namespace nado
