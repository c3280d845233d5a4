#include "nado/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nado/error.hpp"

namespace nado {

Vocabulary::Vocabulary(std::vector<std::string> tokens, TokenId eos_id)
    : tokens_(std::move(tokens)), eos_id_(eos_id) {
  NADO_CHECK(!tokens_.empty(), ErrorCode::kInvalidArgument, "vocabulary is empty");
  NADO_CHECK(contains(eos_id_), ErrorCode::kInvalidArgument, "eos id outside vocabulary");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    for (std::size_t j = i + 1; j < tokens_.size(); ++j) {
      NADO_CHECK(tokens_[i] != tokens_[j], ErrorCode::kInvalidArgument,
                 "duplicate token string '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::Synthetic(int size) {
  NADO_CHECK(size >= 2, ErrorCode::kInvalidArgument, "vocabulary needs at least one body token and EOS");
  std::vector<std::string> tokens;
  tokens.reserve(size);
  for (int i = 0; i + 1 < size; ++i) tokens.push_back("t" + std::to_string(i));
  tokens.emplace_back("</s>");
  return Vocabulary(std::move(tokens), size - 1);
}

const std::string& Vocabulary::token(TokenId id) const {
  NADO_CHECK(contains(id), ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view text) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == text) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

TokenId Vocabulary::id_of(std::string_view text) const {
  auto id = find(text);
  NADO_CHECK(id.has_value(), ErrorCode::kInvalidArgument, "unknown token '" + std::string(text) + "'");
  return *id;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

Sequence Terminated(ConditionId x, std::vector<TokenId> body, TokenId eos_id) {
  body.push_back(eos_id);
  return Sequence{x, std::move(body), true};
}

double TokenDistribution::sum() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

bool TokenDistribution::is_valid(double tol) const {
  if (probs.empty()) return false;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) return false;
  }
  return std::abs(sum() - 1.0) <= tol;
}

void CheckLivePrefix(const AutoregressiveSource& source, std::span<const TokenId> prefix) {
  NADO_CHECK(static_cast<int>(prefix.size()) < source.max_len(), ErrorCode::kInvalidState,
             "prefix of length " + std::to_string(prefix.size()) + " has no next token (max_len " +
                 std::to_string(source.max_len()) + ")");
  const Vocabulary& vocab = source.vocab();
  for (TokenId t : prefix) {
    NADO_CHECK(vocab.contains(t), ErrorCode::kInvalidArgument, "token id " + std::to_string(t) + " out of range");
    NADO_CHECK(t != vocab.eos_id(), ErrorCode::kInvalidState, "prefix is already terminated");
  }
}

TabularBaseModel::TabularBaseModel(Vocabulary vocab, int order, int max_len, int num_conditions,
                                   std::vector<double> rows)
    : vocab_(std::move(vocab)),
      order_(order),
      max_len_(max_len),
      num_conditions_(num_conditions),
      num_windows_(1),
      start_window_(0),
      rows_(std::move(rows)) {
  NADO_CHECK(order_ >= 0, ErrorCode::kInvalidArgument, "order must be non-negative");
  NADO_CHECK(max_len_ >= 1, ErrorCode::kInvalidArgument, "max_len must be positive");
  NADO_CHECK(num_conditions_ >= 1, ErrorCode::kInvalidArgument, "at least one condition required");
  for (int i = 0; i < order_; ++i) {
    start_window_ += vocab_.size() * num_windows_;
    num_windows_ *= vocab_.size() + 1;
  }
  const std::size_t v = vocab_.size();
  const std::size_t expected = static_cast<std::size_t>(num_conditions_) * num_windows_ * v;
  NADO_CHECK(rows_.size() == expected, ErrorCode::kInvalidArgument,
             "table has " + std::to_string(rows_.size()) + " entries, expected " + std::to_string(expected));
  for (std::size_t r = 0; r * v < rows_.size(); ++r) {
    TokenDistribution dist{std::vector<double>(rows_.begin() + r * v, rows_.begin() + (r + 1) * v)};
    NADO_CHECK(dist.is_valid(), ErrorCode::kInvalidArgument, "row " + std::to_string(r) + " is not a distribution");
  }
}

int TabularBaseModel::window_of(std::span<const TokenId> prefix) const {
  int window = start_window();
  for (TokenId t : prefix) window = advance_window(window, t);
  return window;
}

int TabularBaseModel::advance_window(int window, TokenId token) const {
  if (order_ == 0) return 0;
  const int base = vocab_.size() + 1;
  // Shift: the oldest slot (highest digit) falls off.
  const int kept = window % (num_windows_ / base);
  return kept * base + token;
}

std::vector<int> TabularBaseModel::window_slots(int window) const {
  const int base = vocab_.size() + 1;
  std::vector<int> slots(order_);
  for (int i = 0; i < order_; ++i) {
    slots[i] = window % base;
    window /= base;
  }
  return slots;
}

int TabularBaseModel::window_from_slots(std::span<const int> slots) const {
  const int base = vocab_.size() + 1;
  int window = 0;
  for (int i = static_cast<int>(slots.size()) - 1; i >= 0; --i) window = window * base + slots[i];
  return window;
}

std::span<const double> TabularBaseModel::row(ConditionId x, int window) const {
  NADO_CHECK(x >= 0 && x < num_conditions_, ErrorCode::kMissingCondition,
             "condition " + std::to_string(x) + " not in model");
  const std::size_t v = vocab_.size();
  return std::span<const double>(rows_).subspan((static_cast<std::size_t>(x) * num_windows_ + window) * v, v);
}

TokenDistribution TabularBaseModel::next_token_dist(ConditionId x, std::span<const TokenId> prefix) const {
  NADO_CHECK(x >= 0 && x < num_conditions_, ErrorCode::kMissingCondition,
             "condition " + std::to_string(x) + " not in model");
  CheckLivePrefix(*this, prefix);
  if (forces_eos(prefix.size())) {
    std::vector<double> probs(vocab_.size(), 0.0);
    probs[vocab_.eos_id()] = 1.0;
    return {std::move(probs)};
  }
  auto r = row(x, window_of(prefix));
  return {std::vector<double>(r.begin(), r.end())};
}

TabularBaseModel RandomTabularModel(const RandomModelOptions& options) {
  NADO_CHECK(options.vocab_size >= 2, ErrorCode::kInvalidArgument, "vocab_size must be at least 2");
  NADO_CHECK(options.eos_floor > 0.0 && options.eos_floor <= 1.0, ErrorCode::kInvalidArgument,
             "eos_floor must lie in (0, 1]");
  Vocabulary vocab = Vocabulary::Synthetic(options.vocab_size);
  const int v = vocab.size();
  int windows = 1;
  for (int i = 0; i < options.order; ++i) windows *= v + 1;
  Rng rng(SplitMix64(options.seed));
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(options.num_conditions) * windows * v);
  std::vector<double> mass(v);
  for (int r = 0; r < options.num_conditions * windows; ++r) {
    double total = 0.0;
    for (int t = 0; t < v; ++t) total += (mass[t] = rng.exponential());
    for (int t = 0; t < v; ++t) {
      double share = mass[t] / total;
      double p = (1.0 - options.eos_floor) * share;
      if (t == vocab.eos_id()) p += options.eos_floor;
      rows.push_back(p);
    }
  }
  return TabularBaseModel(std::move(vocab), options.order, options.max_len, options.num_conditions,
                          std::move(rows));
}

}  // namespace nado
