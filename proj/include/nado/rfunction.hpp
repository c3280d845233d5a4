#pragma once

#include <span>
#include <vector>

#include "nado/seqmodel.hpp"

namespace nado {

// Success-rate function R(x, prefix): the probability that completing the
// prefix under the base model satisfies the oracle, exact or approximated.
class RFunction {
 public:
  virtual ~RFunction() = default;

  // R at the prefix itself. A prefix ending in EOS is a complete sequence.
  virtual double value(ConditionId x, std::span<const TokenId> prefix) const = 0;

  // R(x, prefix + t) for every token t of the vocabulary, from a single
  // evaluation. prefix must be live. Entries for extensions the base model
  // cannot produce (a body token at the forced-EOS step) carry no meaning;
  // exact implementations report 0 there.
  virtual std::vector<double> successors(ConditionId x, std::span<const TokenId> prefix) const = 0;
};

}  // namespace nado
