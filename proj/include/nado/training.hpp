#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "nado/oracle.hpp"
#include "nado/rfunction.hpp"
#include "nado/rmodel.hpp"
#include "nado/seqmodel.hpp"

namespace nado {

struct TrainingExample {
  ConditionId x = 0;
  Sequence y;
  bool label = false;
  // Self-normalized within the group of examples sharing x and sampling
  // round, so weights average to one per group.
  double log_weight = 0.0;

  double weight() const { return std::exp(log_weight); }
};

enum class SamplingMode { kPlain, kTemperature, kImportance };

struct TrainConfig {
  double lambda = 0.1;
  double learning_rate = 2e-5;
  int epochs = 10;
  int batch_size = 32;
  int samples_per_x = 8;
  double temperature = 1.0;
  bool importance_sampling = false;
  // Share of importance draws taken from the base model instead of the
  // guided proposal. The sampling density becomes the mixture, which bounds
  // every weight by 1 / proposal_mix.
  double proposal_mix = 0.25;
  // Epochs between proposal refreshes in importance mode; 0 draws the
  // importance set once, right after warmup.
  int proposal_refresh_period = 0;
  int warmup_epochs = 0;
  // 0 means learning_rate.
  double warmup_learning_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  SamplingMode mode() const;
  double warmup_rate() const { return warmup_learning_rate > 0.0 ? warmup_learning_rate : learning_rate; }
};

// Bernoulli KL f(a, b) = a log(a/b) + (1-a) log((1-a)/(1-b)), both arguments
// clamped to [eps, 1 - eps].
double BernoulliKl(double a, double b, double eps = kClampEps);
double BinaryCrossEntropy(double r, bool label, double eps = kClampEps);

// Sum over every prefix, empty through the full terminated sequence, of the
// cross entropy between R at that prefix and the label. Unweighted.
double CeLoss(const RFunction& r, const TrainingExample& ex);

// Sum over every live prefix of the sequence of
// f_KL(sum_t R(prefix + t) p(t|prefix), R(prefix)). Unweighted.
double RegLoss(const RFunction& r, const AutoregressiveSource& base, const TrainingExample& ex);

inline double ExampleLoss(const RFunction& r, const AutoregressiveSource& base, const TrainingExample& ex,
                          double lambda) {
  return CeLoss(r, ex) + lambda * RegLoss(r, base, ex);
}

// Exact sampler for the sequence-level tempered distribution
// p(y|x)^(1/T) / Z_T(x). Z_T is computed by a backward pass over
// (position, Markov window), so p^(1-1/T) is an exact importance weight
// up to a per-condition constant.
class TemperedSequenceSampler {
 public:
  TemperedSequenceSampler(const TabularBaseModel& base, double temperature);

  // The returned log-probability is under the untempered base model.
  SampledSequence sample(ConditionId x, Rng& rng) const;
  // log Z_T(x).
  double log_partition(ConditionId x) const;
  // Normalized tempered probability of a terminated sequence.
  double probability(const Sequence& y) const;

 private:
  double partition(ConditionId x, int pos, int window) const;

  const TabularBaseModel* base_;
  double temperature_;
  // partition_[(x * max_len + pos) * num_windows + window]
  std::vector<double> partition_;
};

// Draws samples_per_x sequences per condition and labels them with the
// oracle. Plain mode weighs every draw equally; temperature mode draws from
// p^(1/T) with weight p^(1-1/T); importance mode draws from `proposal` with
// weight p/q, where q mixes the proposal with the base model per
// cfg.proposal_mix. Weights are computed in log space, then self-normalized per
// condition.
std::vector<TrainingExample> SampleTrainingSet(const TabularBaseModel& base, const Oracle& oracle,
                                               std::span<const ConditionId> xs, const TrainConfig& cfg,
                                               const AutoregressiveSource* proposal = nullptr);

struct LossBreakdown {
  double total = 0.0;  // weight * (ce + lambda * reg)
  double ce = 0.0;
  double reg = 0.0;
  double residual_sum = 0.0;  // sum over live prefixes of |sum_t R(prefix+t) p - R(prefix)|
  int prefixes = 0;
};

// Adds the gradient of weight * (CE + lambda * reg) for one example into grad.
LossBreakdown AccumulateExampleGradient(const RModel& rm, const AutoregressiveSource& base,
                                        const TrainingExample& ex, double lambda, std::span<double> grad);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;  // mean weighted total loss
  double ce = 0.0;
  double reg = 0.0;
  double mean_residual = 0.0;
};

struct TrainResult {
  RModel model;
  std::vector<EpochStats> curve;
};

// Minibatch SGD with a fixed learning rate on the weighted CE + lambda * reg
// objective. Deterministic given cfg.seed. Throws kNonFiniteLoss if a batch
// loss is not finite.
TrainResult Train(RModel rm, std::span<const TrainingExample> examples, const AutoregressiveSource& base,
                  const TrainConfig& cfg);

struct WarmupResult {
  RModel model;
  bool skipped = false;            // no positive examples were supplied
  std::vector<double> curve;       // mean negative log-likelihood per epoch
};

// Maximizes the likelihood of positive examples under the composition
// q(t|prefix) proportional to R_theta(prefix + t) p(t|prefix); only theta moves.
WarmupResult Warmup(RModel rm, const AutoregressiveSource& base, std::span<const TrainingExample> positives,
                    const TrainConfig& cfg);

// Gradient of sum_i weight_i * (CE + lambda * reg) over the examples.
std::vector<double> LossGradient(const RModel& rm, std::span<const TrainingExample> examples,
                                 const AutoregressiveSource& base, double lambda);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  double gradient_norm = 0.0;
};

// Compares the analytic gradient to central differences of the loss computed
// through CeLoss/RegLoss. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport GradCheck(const RModel& rm, std::span<const TrainingExample> probes, const AutoregressiveSource& base,
                          double lambda, double step = 1e-5, double floor = 1e-6);

struct PipelineResult {
  RModel model;
  std::vector<EpochStats> curve;
  std::vector<double> warmup_curve;
  bool warmup_skipped = false;
  // Draw counts for the plain pilot and the main (possibly importance) rounds.
  std::size_t pilot_samples = 0;
  std::size_t pilot_positives = 0;
  std::size_t main_samples = 0;
  std::size_t main_positives = 0;
};

// Sampling, optional warmup, optional importance sampling with proposal
// refresh, then training. The importance proposal is the composition of the
// base model with the current R_theta. Warmup runs on the positives of
// warmup_corpus when one is given; otherwise on those of a plain pilot draw,
// which then also seeds the training pool.
PipelineResult TrainNado(const TabularBaseModel& base, const Oracle& oracle, std::span<const ConditionId> xs,
                         const RModelShape& shape, const TrainConfig& cfg,
                         std::span<const TrainingExample> warmup_corpus = {});

}  // namespace nado
