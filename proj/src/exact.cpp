#include "nado/exact.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nado/error.hpp"

namespace nado {

namespace {

std::string PrefixKey(ConditionId x, std::span<const TokenId> prefix) {
  std::string key(sizeof(ConditionId) + prefix.size() * sizeof(TokenId), '\0');
  std::memcpy(key.data(), &x, sizeof(ConditionId));
  if (!prefix.empty()) std::memcpy(key.data() + sizeof(ConditionId), prefix.data(), prefix.size() * sizeof(TokenId));
  return key;
}

bool EndsTerminated(const AutoregressiveSource& base, std::span<const TokenId> prefix) {
  return !prefix.empty() && prefix.back() == base.vocab().eos_id();
}

void CheckCompletePrefix(const AutoregressiveSource& base, std::span<const TokenId> prefix) {
  NADO_CHECK(static_cast<int>(prefix.size()) <= base.max_len(), ErrorCode::kInvalidArgument,
             "sequence longer than max_len");
  const Vocabulary& vocab = base.vocab();
  for (std::size_t i = 0; i + 1 < prefix.size(); ++i) {
    NADO_CHECK(vocab.contains(prefix[i]), ErrorCode::kInvalidArgument, "token out of range");
    NADO_CHECK(prefix[i] != vocab.eos_id(), ErrorCode::kInvalidState, "EOS inside a prefix");
  }
}

// Sum over continuations of prefix of p(continuation) * C.
double ContinuationMass(const AutoregressiveSource& base, const Oracle& oracle, ConditionId x,
                        std::vector<TokenId>& prefix) {
  const TokenId eos = base.vocab().eos_id();
  TokenDistribution dist = base.next_token_dist(x, prefix);
  double total = 0.0;
  for (TokenId t = 0; t < static_cast<TokenId>(dist.size()); ++t) {
    const double p = dist[t];
    if (p <= 0.0) continue;
    prefix.push_back(t);
    if (t == eos) {
      if (oracle.evaluate(x, Sequence{x, prefix, true})) total += p;
    } else {
      total += p * ContinuationMass(base, oracle, x, prefix);
    }
    prefix.pop_back();
  }
  return total;
}

}  // namespace

struct ExactR::DpTable {
  const Dfa* dfa = nullptr;
  int max_len = 0;
  int num_states = 0;
  int num_windows = 0;
  // values[(pos * num_states + state) * num_windows + window] = R at a live
  // prefix of length pos in that DFA state and Markov window.
  std::vector<double> values;

  double at(int pos, int state, int window) const {
    return values[(static_cast<std::size_t>(pos) * num_states + state) * num_windows + window];
  }
};

ExactR::ExactR(ExactMethod method, const AutoregressiveSource& base, const Oracle& oracle,
               const TabularBaseModel* tabular, const DfaOracle* dfa, double guard)
    : method_(method),
      base_(&base),
      oracle_(&oracle),
      tabular_(tabular),
      dfa_(dfa),
      guard_(guard),
      cache_(std::make_unique<Cache>()) {}

ExactR ExactR::ByEnumeration(const AutoregressiveSource& base, const Oracle& oracle, double guard) {
  return ExactR(ExactMethod::kEnumeration, base, oracle, nullptr, nullptr, guard);
}

ExactR ExactR::ByDynamicProgram(const TabularBaseModel& base, const DfaOracle& oracle) {
  return ExactR(ExactMethod::kDynamicProgram, base, oracle, &base, &oracle, 0.0);
}

double ExactR::enumerate_value(ConditionId x, std::span<const TokenId> prefix) const {
  const std::string key = PrefixKey(x, prefix);
  {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    auto it = cache_->enumerated.find(key);
    if (it != cache_->enumerated.end()) return it->second;
  }
  const double count = TerminatedSequenceCount(base_->vocab().size(), base_->max_len() - static_cast<int>(prefix.size()));
  NADO_CHECK(count <= guard_, ErrorCode::kTooLarge,
             "continuation enumeration would visit up to " + std::to_string(count) + " sequences");
  std::vector<TokenId> work(prefix.begin(), prefix.end());
  const double value = std::min(ContinuationMass(*base_, *oracle_, x, work), 1.0);
  std::lock_guard<std::mutex> lock(cache_->mutex);
  cache_->enumerated.emplace(key, value);
  return value;
}

std::shared_ptr<const ExactR::DpTable> ExactR::table(ConditionId x) const {
  {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    auto it = cache_->tables.find(x);
    if (it != cache_->tables.end()) return it->second;
  }
  const TabularBaseModel& base = *tabular_;
  const Dfa& dfa = dfa_->automaton(x);
  NADO_CHECK(dfa.vocab_size == base.vocab().size(), ErrorCode::kInvalidArgument,
             "automaton and model vocabularies differ");
  auto table = std::make_shared<DpTable>();
  table->dfa = &dfa;
  table->max_len = base.max_len();
  table->num_states = dfa.num_states;
  table->num_windows = base.num_windows();
  const int v = base.vocab().size();
  const TokenId eos = base.vocab().eos_id();
  const int len = table->max_len;
  const int states = table->num_states;
  const int windows = table->num_windows;
  table->values.assign(static_cast<std::size_t>(len) * states * windows, 0.0);
  auto slot = [&](int pos, int s, int w) -> double& {
    return table->values[(static_cast<std::size_t>(pos) * states + s) * windows + w];
  };
  for (int pos = len - 1; pos >= 0; --pos) {
    for (int s = 0; s < states; ++s) {
      const double accept = dfa.accepts(s) ? 1.0 : 0.0;
      for (int w = 0; w < windows; ++w) {
        if (base.forces_eos(pos)) {
          slot(pos, s, w) = accept;
          continue;
        }
        auto row = base.row(x, w);
        double total = 0.0;
        for (TokenId t = 0; t < v; ++t) {
          const double p = row[t];
          if (p <= 0.0) continue;
          total += p * (t == eos ? accept : slot(pos + 1, dfa.next_unchecked(s, t), base.advance_window(w, t)));
        }
        // rows sum to one only up to rounding
        slot(pos, s, w) = std::min(total, 1.0);
      }
    }
  }
  std::lock_guard<std::mutex> lock(cache_->mutex);
  auto [it, inserted] = cache_->tables.emplace(x, std::move(table));
  return it->second;
}

double ExactR::value(ConditionId x, std::span<const TokenId> prefix) const {
  CheckCompletePrefix(*base_, prefix);
  if (EndsTerminated(*base_, prefix)) {
    return oracle_->evaluate(x, Sequence{x, std::vector<TokenId>(prefix.begin(), prefix.end()), true}) ? 1.0 : 0.0;
  }
  CheckLivePrefix(*base_, prefix);
  if (method_ == ExactMethod::kEnumeration) return enumerate_value(x, prefix);
  auto dp = table(x);
  const int state = dp->dfa->run(prefix);
  return dp->at(static_cast<int>(prefix.size()), state, tabular_->window_of(prefix));
}

std::vector<double> ExactR::successors(ConditionId x, std::span<const TokenId> prefix) const {
  CheckLivePrefix(*base_, prefix);
  const int v = base_->vocab().size();
  const TokenId eos = base_->vocab().eos_id();
  const bool forced = static_cast<int>(prefix.size()) + 1 >= base_->max_len();
  std::vector<double> out(v, 0.0);
  if (method_ == ExactMethod::kDynamicProgram) {
    auto dp = table(x);
    const int state = dp->dfa->run(prefix);
    const int window = tabular_->window_of(prefix);
    const int pos = static_cast<int>(prefix.size());
    for (TokenId t = 0; t < v; ++t) {
      if (t == eos) {
        out[t] = dp->dfa->accepts(state) ? 1.0 : 0.0;
      } else if (!forced) {
        out[t] = dp->at(pos + 1, dp->dfa->next_unchecked(state, t), tabular_->advance_window(window, t));
      }
    }
    return out;
  }
  std::vector<TokenId> child(prefix.begin(), prefix.end());
  child.push_back(0);
  for (TokenId t = 0; t < v; ++t) {
    if (forced && t != eos) continue;
    child.back() = t;
    out[t] = value(x, child);
  }
  return out;
}

double ExactRDynamicProgram(const TabularBaseModel& base, const DfaOracle& oracle, ConditionId x,
                            std::span<const TokenId> prefix) {
  return ExactR::ByDynamicProgram(base, oracle).value(x, prefix);
}

double ExactQStarSequence(const ExactR& r, ConditionId x, const Sequence& y) {
  const double total = r.total(x);
  NADO_CHECK(total > 0.0, ErrorCode::kInfeasibleOracle,
             "no sequence satisfies the oracle for condition " + std::to_string(x));
  if (!r.oracle().evaluate(x, y)) return 0.0;
  return std::exp(SequenceLogprob(r.base(), y)) / total;
}

TokenDistribution ExactQStarToken(const ExactR& r, ConditionId x, std::span<const TokenId> prefix) {
  const double here = r.value(x, prefix);
  NADO_CHECK(here > 0.0, ErrorCode::kInfeasiblePrefix, "success rate of prefix is zero");
  TokenDistribution dist = r.base().next_token_dist(x, prefix);
  std::vector<double> next = r.successors(x, prefix);
  for (std::size_t t = 0; t < dist.probs.size(); ++t) dist.probs[t] *= next[t] / here;
  return dist;
}

SoftCoefficients ResolveSoftSpec(const SoftSpec& spec, double success_rate) {
  NADO_CHECK(spec.r >= 0.0 && spec.r <= 1.0, ErrorCode::kInfeasibleSoftSpec, "r must lie in [0, 1]");
  if (success_rate >= 1.0) {
    NADO_CHECK(spec.r == 1.0, ErrorCode::kInfeasibleSoftSpec, "every sequence satisfies the oracle; only r = 1 is feasible");
    return {1.0, 0.0};
  }
  if (success_rate <= 0.0) {
    NADO_CHECK(spec.r == 0.0, ErrorCode::kInfeasibleSoftSpec, "no sequence satisfies the oracle; only r = 0 is feasible");
    return {0.0, 1.0};
  }
  return {spec.r / success_rate, (1.0 - spec.r) / (1.0 - success_rate)};
}

TokenDistribution SoftQStarToken(const ExactR& r, ConditionId x, std::span<const TokenId> prefix,
                                 const SoftSpec& spec) {
  const SoftCoefficients c = ResolveSoftSpec(spec, r.total(x));
  const double here = r.value(x, prefix);
  const double denominator = c.alpha * here + c.beta * (1.0 - here);
  NADO_CHECK(denominator > 0.0, ErrorCode::kInfeasiblePrefix, "soft-constrained prefix has zero mass");
  TokenDistribution dist = r.base().next_token_dist(x, prefix);
  std::vector<double> next = r.successors(x, prefix);
  for (std::size_t t = 0; t < dist.probs.size(); ++t) {
    dist.probs[t] *= (c.alpha * next[t] + c.beta * (1.0 - next[t])) / denominator;
  }
  return dist;
}

TokenDistribution ExactConstrainedModel::next_token_dist(ConditionId x, std::span<const TokenId> prefix) const {
  return soft_ ? SoftQStarToken(*r_, x, prefix, *soft_) : ExactQStarToken(*r_, x, prefix);
}

}  // namespace nado
