#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nado/error.hpp"
#include "nado/seqmodel.hpp"

namespace nado {

double SequenceLogprob(const AutoregressiveSource& model, const Sequence& y) {
  const Vocabulary& vocab = model.vocab();
  NADO_CHECK(y.terminated && !y.y.empty() && y.y.back() == vocab.eos_id(), ErrorCode::kInvalidArgument,
             "log-probability requires a terminated sequence");
  NADO_CHECK(static_cast<int>(y.y.size()) <= model.max_len(), ErrorCode::kInvalidArgument,
             "sequence longer than max_len");
  double logprob = 0.0;
  std::span<const TokenId> tokens(y.y);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    TokenDistribution dist = model.next_token_dist(y.x, tokens.first(i));
    const double p = dist[tokens[i]];
    if (p <= 0.0) return -std::numeric_limits<double>::infinity();
    logprob += std::log(p);
  }
  return logprob;
}

std::vector<double> ShapeDistribution(std::span<const double> probs, double temperature, double top_p) {
  NADO_CHECK(temperature > 0.0, ErrorCode::kInvalidArgument, "temperature must be positive");
  NADO_CHECK(top_p > 0.0 && top_p <= 1.0, ErrorCode::kInvalidArgument, "top_p must lie in (0, 1]");
  std::vector<double> shaped(probs.begin(), probs.end());
  if (temperature != 1.0) {
    // Work in log space relative to the max so p^(1/T) cannot underflow to an
    // all-zero row.
    double max_log = -std::numeric_limits<double>::infinity();
    for (double p : probs) {
      if (p > 0.0) max_log = std::max(max_log, std::log(p));
    }
    for (double& p : shaped) p = p > 0.0 ? std::exp((std::log(p) - max_log) / temperature) : 0.0;
  }
  double total = std::accumulate(shaped.begin(), shaped.end(), 0.0);
  NADO_CHECK(total > 0.0, ErrorCode::kInvalidArgument, "distribution has no mass");
  for (double& p : shaped) p /= total;
  if (top_p < 1.0) {
    std::vector<std::size_t> order(shaped.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return shaped[a] > shaped[b]; });
    double acc = 0.0;
    std::size_t keep = 0;
    // The slack absorbs rounding in the running sum (0.5 + 0.3 vs 0.8).
    while (keep < order.size() && acc < top_p - 1e-12) acc += shaped[order[keep++]];
    for (std::size_t i = keep; i < order.size(); ++i) shaped[order[i]] = 0.0;
    for (double& p : shaped) p /= acc;
  }
  return shaped;
}

SampledSequence SampleSequence(const AutoregressiveSource& model, ConditionId x, Rng& rng,
                               const SamplingOptions& options) {
  const Vocabulary& vocab = model.vocab();
  const int limit = options.max_len > 0 ? std::min(options.max_len, model.max_len()) : model.max_len();
  SampledSequence out;
  out.sequence.x = x;
  std::vector<TokenId>& y = out.sequence.y;
  while (true) {
    TokenDistribution dist = model.next_token_dist(x, y);
    TokenId token;
    if (static_cast<int>(y.size()) + 1 >= limit) {
      token = vocab.eos_id();
    } else if (options.temperature == 1.0 && options.top_p == 1.0) {
      token = static_cast<TokenId>(rng.categorical(dist.probs));
    } else {
      token = static_cast<TokenId>(rng.categorical(ShapeDistribution(dist.probs, options.temperature, options.top_p)));
    }
    const double p = dist[token];
    out.logprob += p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
    y.push_back(token);
    if (token == vocab.eos_id()) break;
  }
  out.sequence.terminated = true;
  return out;
}

SampledSequence SampleSequence(const AutoregressiveSource& model, ConditionId x, std::uint64_t seed,
                               const SamplingOptions& options) {
  Rng rng(seed);
  return SampleSequence(model, x, rng, options);
}

double TerminatedSequenceCount(int vocab_size, int max_len) {
  // Bodies of length 0 .. max_len - 1 over vocab_size - 1 non-EOS tokens.
  const double body_tokens = vocab_size - 1;
  double count = 0.0;
  double term = 1.0;
  for (int len = 0; len < max_len; ++len) {
    count += term;
    term *= body_tokens;
  }
  return count;
}

namespace {

void EnumerateFrom(const AutoregressiveSource& model, ConditionId x, std::vector<TokenId>& prefix, double mass,
                   const SequenceVisitor& visit) {
  const TokenId eos = model.vocab().eos_id();
  TokenDistribution dist = model.next_token_dist(x, prefix);
  for (TokenId t = 0; t < static_cast<TokenId>(dist.size()); ++t) {
    const double p = dist[t];
    if (p <= 0.0) continue;
    prefix.push_back(t);
    if (t == eos) {
      visit(Sequence{x, prefix, true}, mass * p);
    } else {
      EnumerateFrom(model, x, prefix, mass * p, visit);
    }
    prefix.pop_back();
  }
}

}  // namespace

void EnumerateSequences(const AutoregressiveSource& model, ConditionId x, const SequenceVisitor& visit,
                        double guard) {
  const double count = TerminatedSequenceCount(model.vocab().size(), model.max_len());
  NADO_CHECK(count <= guard, ErrorCode::kTooLarge,
             "enumeration would visit up to " + std::to_string(count) + " sequences (guard " +
                 std::to_string(guard) + ")");
  std::vector<TokenId> prefix;
  prefix.reserve(model.max_len());
  EnumerateFrom(model, x, prefix, 1.0, visit);
}

}  // namespace nado
