#pragma once

#include <cmath>
#include <map>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "nado/fixtures.hpp"
#include "nado/oracle.hpp"
#include "nado/rfunction.hpp"
#include "nado/seqmodel.hpp"

namespace nado::test {

// {a, b, </s>}: a = 0, b = 1.
inline constexpr TokenId kA = 0;
inline constexpr TokenId kB = 1;

inline LexicalOracle ContainsA(const Vocabulary& vocab) { return LexicalOracle({{0, {{kA}}}}, vocab); }

class ConstantR final : public RFunction {
 public:
  ConstantR(double c, int vocab_size) : c_(c), v_(vocab_size) {}
  double value(ConditionId, std::span<const TokenId>) const override { return c_; }
  std::vector<double> successors(ConditionId, std::span<const TokenId>) const override {
    return std::vector<double>(v_, c_);
  }

 private:
  double c_;
  int v_;
};

// Every terminated sequence of the source with its probability.
inline std::map<std::vector<TokenId>, double> Enumerated(const AutoregressiveSource& model, ConditionId x) {
  std::map<std::vector<TokenId>, double> out;
  EnumerateSequences(model, x, [&](const Sequence& y, double p) { out[y.y] = p; });
  return out;
}

// Pearson chi-square p-value of observed counts against expected
// probabilities. Bins expected below 5 are pooled into one.
inline double ChiSquarePValue(const std::map<std::vector<TokenId>, double>& expected,
                              const std::map<std::vector<TokenId>, int>& observed, int n) {
  double stat = 0.0;
  int bins = 0;
  double pooled_e = 0.0;
  double pooled_o = 0.0;
  for (const auto& [y, p] : expected) {
    const double e = p * n;
    const auto it = observed.find(y);
    const double o = it == observed.end() ? 0.0 : it->second;
    if (e < 5.0) {
      pooled_e += e;
      pooled_o += o;
      continue;
    }
    stat += (o - e) * (o - e) / e;
    ++bins;
  }
  if (pooled_e > 0.0) {
    stat += (pooled_o - pooled_e) * (pooled_o - pooled_e) / pooled_e;
    ++bins;
  }
  if (bins < 2) return 1.0;
  boost::math::chi_squared dist(bins - 1);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace nado::test
