#include "nado/oracle.hpp"

#include <algorithm>
#include <deque>

#include "nado/error.hpp"

namespace nado {

bool Oracle::evaluate(ConditionId x, const Sequence& y) const {
  NADO_CHECK(y.terminated && !y.y.empty(), ErrorCode::kInvalidArgument, "oracle requires a terminated sequence");
  return evaluate_body(x, y.body());
}

bool ContainsContiguous(std::span<const TokenId> body, std::span<const TokenId> pattern) {
  return std::search(body.begin(), body.end(), pattern.begin(), pattern.end()) != body.end();
}

LexicalOracle::LexicalOracle(std::map<ConditionId, std::vector<Pattern>> keywords, const Vocabulary& vocab)
    : keywords_(std::move(keywords)) {
  descriptor_ = "lexical{";
  bool first_condition = true;
  for (const auto& [x, patterns] : keywords_) {
    if (!first_condition) descriptor_ += "; ";
    first_condition = false;
    descriptor_ += std::to_string(x) + ":";
    for (const Pattern& pattern : patterns) {
      NADO_CHECK(!pattern.empty(), ErrorCode::kInvalidPattern, "empty keyword pattern");
      for (TokenId t : pattern) {
        NADO_CHECK(vocab.contains(t), ErrorCode::kInvalidPattern, "pattern token out of range");
        NADO_CHECK(t != vocab.eos_id(), ErrorCode::kInvalidPattern, "pattern contains EOS");
      }
      descriptor_ += " [" + vocab.detokenize(pattern) + "]";
    }
  }
  descriptor_ += "}";
}

const std::vector<Pattern>& LexicalOracle::patterns(ConditionId x) const {
  static const std::vector<Pattern> kNone;
  auto it = keywords_.find(x);
  return it == keywords_.end() ? kNone : it->second;
}

bool LexicalOracle::evaluate_body(ConditionId x, std::span<const TokenId> body) const {
  for (const Pattern& pattern : patterns(x)) {
    if (!ContainsContiguous(body, pattern)) return false;
  }
  return true;
}

void Dfa::validate() const {
  NADO_CHECK(num_states > 0 && vocab_size > 0, ErrorCode::kInvalidArgument, "empty automaton");
  NADO_CHECK(start >= 0 && start < num_states, ErrorCode::kInvalidArgument, "start state out of range");
  NADO_CHECK(transitions.size() == static_cast<std::size_t>(num_states) * vocab_size, ErrorCode::kInvalidArgument,
             "transition table is not total");
  NADO_CHECK(accepting.size() == static_cast<std::size_t>(num_states), ErrorCode::kInvalidArgument,
             "accepting flags size mismatch");
  for (int next : transitions) {
    NADO_CHECK(next >= 0 && next < num_states, ErrorCode::kInvalidArgument, "transition target out of range");
  }
}

int Dfa::step(int state, TokenId token) const {
  NADO_CHECK(state >= 0 && state < num_states, ErrorCode::kInvalidArgument,
             "state " + std::to_string(state) + " out of range");
  NADO_CHECK(token >= 0 && token < vocab_size, ErrorCode::kInvalidArgument,
             "token " + std::to_string(token) + " out of range");
  return transitions[state * vocab_size + token];
}

int Dfa::run(std::span<const TokenId> body) const { return run_from(start, body); }

int Dfa::run_from(int state, std::span<const TokenId> body) const {
  for (TokenId t : body) state = step(state, t);
  return state;
}

bool Dfa::is_absorbing_accept(int state) const {
  if (!accepts(state)) return false;
  for (int t = 0; t < vocab_size; ++t) {
    if (next_unchecked(state, t) != state) return false;
  }
  return true;
}

bool Dfa::is_dead(int state) const {
  std::vector<std::uint8_t> seen(num_states, 0);
  std::deque<int> queue{state};
  seen[state] = 1;
  while (!queue.empty()) {
    int s = queue.front();
    queue.pop_front();
    if (accepts(s)) return false;
    for (int t = 0; t < vocab_size; ++t) {
      int n = next_unchecked(s, t);
      if (!seen[n]) {
        seen[n] = 1;
        queue.push_back(n);
      }
    }
  }
  return true;
}

DfaOracle::DfaOracle(std::map<ConditionId, Dfa> automata, std::string descriptor, std::optional<Dfa> fallback)
    : automata_(std::move(automata)), descriptor_(std::move(descriptor)), fallback_(std::move(fallback)) {
  for (const auto& [x, dfa] : automata_) dfa.validate();
  if (fallback_) fallback_->validate();
}

const Dfa& DfaOracle::automaton(ConditionId x) const {
  auto it = automata_.find(x);
  if (it == automata_.end() && fallback_) return *fallback_;
  NADO_CHECK(it != automata_.end(), ErrorCode::kMissingCondition,
             "no automaton for condition " + std::to_string(x));
  return it->second;
}

bool DfaOracle::evaluate_body(ConditionId x, std::span<const TokenId> body) const {
  const Dfa& dfa = automaton(x);
  return dfa.accepts(dfa.run(body));
}

Dfa PatternMatcher(std::span<const TokenId> pattern, const Vocabulary& vocab) {
  NADO_CHECK(!pattern.empty(), ErrorCode::kInvalidPattern, "empty keyword pattern");
  const int v = vocab.size();
  const int m = static_cast<int>(pattern.size());
  for (TokenId t : pattern) {
    NADO_CHECK(vocab.contains(t), ErrorCode::kInvalidPattern, "pattern token out of range");
    NADO_CHECK(t != vocab.eos_id(), ErrorCode::kInvalidPattern, "pattern contains EOS");
  }
  Dfa dfa;
  dfa.num_states = m + 1;
  dfa.vocab_size = v;
  dfa.start = 0;
  dfa.transitions.assign(static_cast<std::size_t>(m + 1) * v, 0);
  dfa.accepting.assign(m + 1, 0);
  dfa.accepting[m] = 1;
  auto at = [&](int s, int t) -> int& { return dfa.transitions[s * v + t]; };
  // Row j copies the row of its failure state, then overrides the match edge.
  at(0, pattern[0]) = 1;
  int fail = 0;
  for (int j = 1; j < m; ++j) {
    for (int t = 0; t < v; ++t) at(j, t) = at(fail, t);
    at(j, pattern[j]) = j + 1;
    fail = at(fail, pattern[j]);
  }
  for (int t = 0; t < v; ++t) at(m, t) = m;
  for (int s = 0; s <= m; ++s) at(s, vocab.eos_id()) = s;
  return dfa;
}

Dfa CompileLexicalToDfa(std::span<const Pattern> patterns, const Vocabulary& vocab) {
  const int v = vocab.size();
  std::vector<Dfa> parts;
  parts.reserve(patterns.size());
  for (const Pattern& p : patterns) parts.push_back(PatternMatcher(p, vocab));

  std::map<std::vector<int>, int> index;
  std::vector<std::vector<int>> tuples;
  auto intern = [&](std::vector<int> tuple) {
    auto [it, inserted] = index.emplace(tuple, static_cast<int>(tuples.size()));
    if (inserted) tuples.push_back(std::move(tuple));
    return it->second;
  };
  intern(std::vector<int>(parts.size(), 0));

  Dfa dfa;
  dfa.vocab_size = v;
  dfa.start = 0;
  // tuples grows while we scan it: breadth-first over reachable products.
  for (std::size_t s = 0; s < tuples.size(); ++s) {
    for (int t = 0; t < v; ++t) {
      std::vector<int> next = tuples[s];
      for (std::size_t k = 0; k < parts.size(); ++k) next[k] = parts[k].next_unchecked(next[k], t);
      dfa.transitions.push_back(intern(std::move(next)));
    }
  }
  dfa.num_states = static_cast<int>(tuples.size());
  dfa.accepting.resize(tuples.size());
  for (std::size_t s = 0; s < tuples.size(); ++s) {
    bool all = true;
    for (std::size_t k = 0; k < parts.size(); ++k) all = all && parts[k].accepts(tuples[s][k]);
    dfa.accepting[s] = all ? 1 : 0;
  }
  dfa.validate();
  return dfa;
}

DfaOracle CompileLexicalOracle(const LexicalOracle& oracle, const Vocabulary& vocab) {
  std::map<ConditionId, Dfa> automata;
  for (const auto& [x, patterns] : oracle.keywords()) automata.emplace(x, CompileLexicalToDfa(patterns, vocab));
  return DfaOracle(std::move(automata), "compiled " + oracle.descriptor(), CompileLexicalToDfa({}, vocab));
}

}  // namespace nado
