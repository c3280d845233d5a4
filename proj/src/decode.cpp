#include "nado/decode.hpp"

#include "nado/error.hpp"

namespace nado {

GuidedModel::Step GuidedModel::step(ConditionId x, std::span<const TokenId> prefix) const {
  Step out;
  out.dist = base_->next_token_dist(x, prefix);
  const std::vector<double> next = r_->successors(x, prefix);
  for (std::size_t t = 0; t < out.dist.probs.size(); ++t) {
    out.dist.probs[t] *= next[t];
    out.normalizer += out.dist.probs[t];
  }
  NADO_CHECK(out.normalizer > 0.0, ErrorCode::kInfeasibleGuidance,
             "guidance assigns zero mass to every continuation of a prefix of length " +
                 std::to_string(prefix.size()));
  for (double& p : out.dist.probs) p /= out.normalizer;
  return out;
}

Sequence DecodeGreedy(const AutoregressiveSource& model, ConditionId x) {
  const TokenId eos = model.vocab().eos_id();
  Sequence out{x, {}, false};
  while (true) {
    TokenDistribution dist = model.next_token_dist(x, out.y);
    TokenId best = 0;
    for (TokenId t = 1; t < static_cast<TokenId>(dist.size()); ++t) {
      if (dist[t] > dist[best]) best = t;
    }
    out.y.push_back(best);
    if (best == eos) break;
  }
  out.terminated = true;
  return out;
}

Sequence DecodeSample(const AutoregressiveSource& model, ConditionId x, std::uint64_t seed, double top_p) {
  SamplingOptions options;
  options.top_p = top_p;
  return SampleSequence(model, x, seed, options).sequence;
}

}  // namespace nado
