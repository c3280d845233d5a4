#include "nado/random.hpp"

#include "nado/error.hpp"

namespace nado {

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  NADO_CHECK(total > 0.0, ErrorCode::kInvalidArgument, "categorical draw over zero total mass");
  const double u = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = weights.size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  // Rounding left u at or above the accumulated total.
  return last_positive;
}

}  // namespace nado
