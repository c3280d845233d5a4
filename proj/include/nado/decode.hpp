#pragma once

#include <cstdint>
#include <span>

#include "nado/rfunction.hpp"
#include "nado/seqmodel.hpp"

namespace nado {

// q(t|x,prefix) proportional to R(x,prefix+t) p(t|x,prefix), always divided
// by its explicit normalizer. Each step costs one base-model row fetch and one
// R evaluation.
class GuidedModel final : public AutoregressiveSource {
 public:
  GuidedModel(const AutoregressiveSource& base, const RFunction& r) : base_(&base), r_(&r) {}

  struct Step {
    TokenDistribution dist;
    // Sum of R(x,prefix+t) p(t|x,prefix) before division. For an R obeying
    // the consistency identity this equals R(x,prefix).
    double normalizer = 0.0;
  };

  // Throws kInfeasibleGuidance when every numerator is zero.
  Step step(ConditionId x, std::span<const TokenId> prefix) const;

  const Vocabulary& vocab() const override { return base_->vocab(); }
  int max_len() const override { return base_->max_len(); }
  TokenDistribution next_token_dist(ConditionId x, std::span<const TokenId> prefix) const override {
    return step(x, prefix).dist;
  }

  const AutoregressiveSource& base() const { return *base_; }
  const RFunction& r() const { return *r_; }

 private:
  const AutoregressiveSource* base_;
  const RFunction* r_;
};

inline TokenDistribution GuidedTokenDist(const GuidedModel& model, ConditionId x, std::span<const TokenId> prefix) {
  return model.next_token_dist(x, prefix);
}

// Argmax at every step, ties to the lowest token id.
Sequence DecodeGreedy(const AutoregressiveSource& model, ConditionId x);

Sequence DecodeSample(const AutoregressiveSource& model, ConditionId x, std::uint64_t seed, double top_p = 1.0);

// Bayes-product composition p(t|prefix) * P(attribute|prefix+t) with an
// externally trained classifier standing in for R. Mechanically identical to
// GuidedModel; kept separate so experiments can name the contrast.
inline GuidedModel ComposeBayesBaseline(const AutoregressiveSource& base, const RFunction& classifier_r) {
  return GuidedModel(base, classifier_r);
}

}  // namespace nado
