#include "nado/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "nado/decode.hpp"
#include "nado/error.hpp"
#include "nado/random.hpp"

namespace nado {

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d706c65ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566666cULL;
constexpr std::uint64_t kInitStream = 0x696e6974ULL;

void CheckExample(const RModel& rm, const TrainingExample& ex) {
  NADO_CHECK(ex.y.terminated && !ex.y.y.empty() && ex.y.y.back() == rm.shape().eos_id, ErrorCode::kInvalidArgument,
             "training sequences must be terminated");
  NADO_CHECK(static_cast<int>(ex.y.y.size()) <= rm.shape().max_len, ErrorCode::kInvalidArgument,
             "training sequence longer than max_len");
  NADO_CHECK(std::isfinite(ex.log_weight), ErrorCode::kInvalidArgument, "training weight is not finite");
}

void Shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

void NormalizeGroup(std::span<TrainingExample> group) {
  if (group.empty()) return;
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& ex : group) top = std::max(top, ex.log_weight);
  NADO_CHECK(std::isfinite(top), ErrorCode::kInvalidState, "every draw in a group has zero weight");
  double mean = 0.0;
  for (const auto& ex : group) mean += std::exp(ex.log_weight - top);
  mean /= static_cast<double>(group.size());
  const double shift = top + std::log(mean);
  for (auto& ex : group) ex.log_weight -= shift;
}

// Traces and output gradients for every live prefix of one sequence.
struct PrefixPass {
  std::vector<RModel::Trace> traces;
  std::vector<std::vector<double>> output_grad;

  void run(const RModel& rm, const TrainingExample& ex) {
    const std::size_t n = ex.y.y.size();
    if (traces.size() < n) traces.resize(n);
    if (output_grad.size() < n) output_grad.resize(n);
    std::span<const TokenId> y(ex.y.y);
    for (std::size_t i = 0; i < n; ++i) {
      rm.evaluate(ex.x, y.first(i), traces[i]);
      output_grad[i].assign(rm.shape().output_dim(), 0.0);
    }
  }

  // R_theta at the prefix of length i, 0 <= i <= n.
  double r_at(const TrainingExample& ex, std::size_t i, int v) const {
    return i == 0 ? traces[0].outputs[v] : traces[i - 1].outputs[ex.y.y[i - 1]];
  }
  double& grad_at(const TrainingExample& ex, std::size_t i, int v) {
    return i == 0 ? output_grad[0][v] : output_grad[i - 1][ex.y.y[i - 1]];
  }

  void backward(const RModel& rm, std::size_t n, std::span<double> grad) const {
    for (std::size_t i = 0; i < n; ++i) rm.backward(traces[i], output_grad[i], grad);
  }
};

}  // namespace

void TrainConfig::validate() const {
  NADO_CHECK(std::isfinite(lambda) && lambda >= 0.0, ErrorCode::kInvalidArgument, "lambda must be non-negative");
  NADO_CHECK(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorCode::kInvalidArgument,
             "learning_rate must be positive");
  NADO_CHECK(epochs >= 0, ErrorCode::kInvalidArgument, "epochs must be non-negative");
  NADO_CHECK(batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be positive");
  NADO_CHECK(samples_per_x >= 1, ErrorCode::kInvalidArgument, "samples_per_x must be positive");
  NADO_CHECK(std::isfinite(temperature) && temperature > 0.0, ErrorCode::kInvalidArgument,
             "temperature must be positive");
  NADO_CHECK(!(importance_sampling && temperature != 1.0), ErrorCode::kInvalidArgument,
             "temperature and importance sampling are mutually exclusive");
  NADO_CHECK(proposal_mix >= 0.0 && proposal_mix <= 1.0, ErrorCode::kInvalidArgument,
             "proposal_mix must lie in [0, 1]");
  NADO_CHECK(proposal_refresh_period >= 0, ErrorCode::kInvalidArgument, "proposal_refresh_period must be non-negative");
  NADO_CHECK(warmup_epochs >= 0, ErrorCode::kInvalidArgument, "warmup_epochs must be non-negative");
  NADO_CHECK(std::isfinite(warmup_learning_rate) && warmup_learning_rate >= 0.0, ErrorCode::kInvalidArgument,
             "warmup_learning_rate must be non-negative");
}

SamplingMode TrainConfig::mode() const {
  if (importance_sampling) return SamplingMode::kImportance;
  if (temperature != 1.0) return SamplingMode::kTemperature;
  return SamplingMode::kPlain;
}

double BernoulliKl(double a, double b, double eps) {
  a = std::clamp(a, eps, 1.0 - eps);
  b = std::clamp(b, eps, 1.0 - eps);
  return a * std::log(a / b) + (1.0 - a) * std::log((1.0 - a) / (1.0 - b));
}

double BinaryCrossEntropy(double r, bool label, double eps) {
  r = std::clamp(r, eps, 1.0 - eps);
  return label ? -std::log(r) : -std::log(1.0 - r);
}

double CeLoss(const RFunction& r, const TrainingExample& ex) {
  std::span<const TokenId> y(ex.y.y);
  double total = 0.0;
  for (std::size_t i = 0; i <= y.size(); ++i) total += BinaryCrossEntropy(r.value(ex.x, y.first(i)), ex.label);
  return total;
}

double RegLoss(const RFunction& r, const AutoregressiveSource& base, const TrainingExample& ex) {
  std::span<const TokenId> y(ex.y.y);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto prefix = y.first(i);
    const TokenDistribution dist = base.next_token_dist(ex.x, prefix);
    const std::vector<double> next = r.successors(ex.x, prefix);
    double a = 0.0;
    for (std::size_t t = 0; t < dist.size(); ++t) a += next[t] * dist[t];
    total += BernoulliKl(a, r.value(ex.x, prefix));
  }
  return total;
}

TemperedSequenceSampler::TemperedSequenceSampler(const TabularBaseModel& base, double temperature)
    : base_(&base), temperature_(temperature) {
  NADO_CHECK(std::isfinite(temperature) && temperature > 0.0, ErrorCode::kInvalidArgument,
             "temperature must be positive");
  const int len = base.max_len();
  const int windows = base.num_windows();
  const int v = base.vocab().size();
  const TokenId eos = base.vocab().eos_id();
  const double inv_t = 1.0 / temperature;
  partition_.assign(static_cast<std::size_t>(base.num_conditions()) * len * windows, 0.0);
  for (ConditionId x = 0; x < base.num_conditions(); ++x) {
    double* z = partition_.data() + static_cast<std::size_t>(x) * len * windows;
    for (int w = 0; w < windows; ++w) z[static_cast<std::size_t>(len - 1) * windows + w] = 1.0;
    for (int pos = len - 2; pos >= 0; --pos) {
      for (int w = 0; w < windows; ++w) {
        auto row = base.row(x, w);
        double total = 0.0;
        for (TokenId t = 0; t < v; ++t) {
          if (row[t] <= 0.0) continue;
          const double u = std::pow(row[t], inv_t);
          total += t == eos ? u : u * z[static_cast<std::size_t>(pos + 1) * windows + base.advance_window(w, t)];
        }
        z[static_cast<std::size_t>(pos) * windows + w] = total;
      }
    }
  }
}

double TemperedSequenceSampler::partition(ConditionId x, int pos, int window) const {
  return partition_[(static_cast<std::size_t>(x) * base_->max_len() + pos) * base_->num_windows() + window];
}

double TemperedSequenceSampler::log_partition(ConditionId x) const {
  NADO_CHECK(x >= 0 && x < base_->num_conditions(), ErrorCode::kMissingCondition,
             "condition " + std::to_string(x) + " not present in base model");
  return std::log(partition(x, 0, base_->start_window()));
}

double TemperedSequenceSampler::probability(const Sequence& y) const {
  const double logp = SequenceLogprob(*base_, y);
  if (!std::isfinite(logp)) return 0.0;
  return std::exp(logp / temperature_ - log_partition(y.x));
}

SampledSequence TemperedSequenceSampler::sample(ConditionId x, Rng& rng) const {
  NADO_CHECK(x >= 0 && x < base_->num_conditions(), ErrorCode::kMissingCondition,
             "condition " + std::to_string(x) + " not present in base model");
  const int v = base_->vocab().size();
  const TokenId eos = base_->vocab().eos_id();
  const double inv_t = 1.0 / temperature_;
  SampledSequence out;
  out.sequence.x = x;
  int window = base_->start_window();
  std::vector<double> weights(v);
  for (int pos = 0;; ++pos) {
    if (base_->forces_eos(pos)) {
      out.sequence.y.push_back(eos);
      break;
    }
    auto row = base_->row(x, window);
    for (TokenId t = 0; t < v; ++t) {
      if (row[t] <= 0.0) {
        weights[t] = 0.0;
        continue;
      }
      const double u = std::pow(row[t], inv_t);
      weights[t] = t == eos ? u : u * partition(x, pos + 1, base_->advance_window(window, t));
    }
    const auto t = static_cast<TokenId>(rng.categorical(weights));
    out.logprob += std::log(row[t]);
    out.sequence.y.push_back(t);
    if (t == eos) break;
    window = base_->advance_window(window, t);
  }
  out.sequence.terminated = true;
  return out;
}

std::vector<TrainingExample> SampleTrainingSet(const TabularBaseModel& base, const Oracle& oracle,
                                               std::span<const ConditionId> xs, const TrainConfig& cfg,
                                               const AutoregressiveSource* proposal) {
  cfg.validate();
  const SamplingMode mode = cfg.mode();
  NADO_CHECK(mode != SamplingMode::kImportance || proposal != nullptr, ErrorCode::kInvalidArgument,
             "importance sampling needs a proposal model");
  std::optional<TemperedSequenceSampler> tempered;
  if (mode == SamplingMode::kTemperature) tempered.emplace(base, cfg.temperature);
  Rng rng(SplitMix64(cfg.seed ^ kSampleStream));
  std::vector<TrainingExample> out;
  out.reserve(xs.size() * cfg.samples_per_x);
  for (ConditionId x : xs) {
    const std::size_t group = out.size();
    for (int s = 0; s < cfg.samples_per_x; ++s) {
      TrainingExample ex;
      ex.x = x;
      switch (mode) {
        case SamplingMode::kPlain: {
          ex.y = SampleSequence(base, x, rng).sequence;
          break;
        }
        case SamplingMode::kTemperature: {
          SampledSequence draw = tempered->sample(x, rng);
          ex.y = std::move(draw.sequence);
          ex.log_weight = (1.0 - 1.0 / cfg.temperature) * draw.logprob;
          break;
        }
        case SamplingMode::kImportance: {
          const bool from_base = cfg.proposal_mix > 0.0 && rng.uniform() < cfg.proposal_mix;
          ex.y = SampleSequence(from_base ? static_cast<const AutoregressiveSource&>(base) : *proposal, x, rng).sequence;
          const double logp = SequenceLogprob(base, ex.y);
          const double logq = SequenceLogprob(*proposal, ex.y);
          double log_mix = logq;
          if (cfg.proposal_mix > 0.0) {
            const double a = std::log(cfg.proposal_mix) + logp;
            const double b = cfg.proposal_mix < 1.0 ? std::log1p(-cfg.proposal_mix) + logq
                                                    : -std::numeric_limits<double>::infinity();
            const double top = std::max(a, b);
            log_mix = top + std::log(std::exp(a - top) + std::exp(b - top));
          }
          NADO_CHECK(std::isfinite(log_mix), ErrorCode::kInvalidState, "proposal assigns zero mass to its own draw");
          ex.log_weight = logp - log_mix;
          break;
        }
      }
      ex.label = oracle.evaluate(x, ex.y);
      out.push_back(std::move(ex));
    }
    NormalizeGroup(std::span<TrainingExample>(out).subspan(group));
  }
  return out;
}

LossBreakdown AccumulateExampleGradient(const RModel& rm, const AutoregressiveSource& base,
                                        const TrainingExample& ex, double lambda, std::span<double> grad) {
  CheckExample(rm, ex);
  NADO_CHECK(grad.size() == rm.parameters().size(), ErrorCode::kInvalidArgument, "gradient size mismatch");
  thread_local PrefixPass pass;
  pass.run(rm, ex);
  const int v = rm.shape().vocab_size;
  const double eps = rm.shape().clamp_eps;
  const std::size_t n = ex.y.y.size();
  const double w = ex.weight();
  const bool c = ex.label;
  std::span<const TokenId> y(ex.y.y);
  LossBreakdown out;

  for (std::size_t i = 0; i <= n; ++i) {
    const double r = pass.r_at(ex, i, v);
    out.ce += BinaryCrossEntropy(r, c, eps);
    pass.grad_at(ex, i, v) += w * (c ? -1.0 / r : 1.0 / (1.0 - r));
  }

  for (std::size_t i = 0; i < n; ++i) {
    const TokenDistribution dist = base.next_token_dist(ex.x, y.first(i));
    const std::vector<double>& outputs = pass.traces[i].outputs;
    double a = 0.0;
    for (int t = 0; t < v; ++t) a += outputs[t] * dist[t];
    const double b = pass.r_at(ex, i, v);
    out.reg += BernoulliKl(a, b, eps);
    out.residual_sum += std::abs(a - b);
    ++out.prefixes;
    const double ac = std::clamp(a, eps, 1.0 - eps);
    const double da = (a == ac) ? std::log(ac / b) - std::log((1.0 - ac) / (1.0 - b)) : 0.0;
    const double db = -ac / b + (1.0 - ac) / (1.0 - b);
    const double scale = w * lambda;
    std::vector<double>& g = pass.output_grad[i];
    if (da != 0.0) {
      for (int t = 0; t < v; ++t) g[t] += scale * da * dist[t];
    }
    pass.grad_at(ex, i, v) += scale * db;
  }

  pass.backward(rm, n, grad);
  out.total = w * (out.ce + lambda * out.reg);
  return out;
}

TrainResult Train(RModel rm, std::span<const TrainingExample> examples, const AutoregressiveSource& base,
                  const TrainConfig& cfg) {
  cfg.validate();
  NADO_CHECK(!examples.empty(), ErrorCode::kInvalidArgument, "no training examples");
  for (const auto& ex : examples) CheckExample(rm, ex);
  Rng rng(SplitMix64(cfg.seed ^ kShuffleStream));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(rm.parameters().size());
  TrainResult result{std::move(rm), {}};
  RModel& model = result.model;
  const double count = static_cast<double>(examples.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Shuffle(order, rng);
    EpochStats stats;
    stats.epoch = epoch;
    double residual = 0.0;
    int prefixes = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const TrainingExample& ex = examples[order[k]];
        const LossBreakdown part = AccumulateExampleGradient(model, base, ex, cfg.lambda, grad);
        batch_loss += part.total;
        stats.ce += ex.weight() * part.ce;
        stats.reg += ex.weight() * part.reg;
        residual += part.residual_sum;
        prefixes += part.prefixes;
      }
      NADO_CHECK(std::isfinite(batch_loss), ErrorCode::kNonFiniteLoss,
                 "non-finite loss in epoch " + std::to_string(epoch));
      stats.loss += batch_loss;
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      auto params = model.mutable_parameters();
      for (std::size_t j = 0; j < params.size(); ++j) params[j] -= step * grad[j];
    }
    stats.loss /= count;
    stats.ce /= count;
    stats.reg /= count;
    stats.mean_residual = prefixes > 0 ? residual / prefixes : 0.0;
    result.curve.push_back(stats);
  }
  return result;
}

WarmupResult Warmup(RModel rm, const AutoregressiveSource& base, std::span<const TrainingExample> positives,
                    const TrainConfig& cfg) {
  cfg.validate();
  // Negative examples are ignored.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    if (positives[i].label) order.push_back(i);
  }
  WarmupResult result{std::move(rm), order.empty(), {}};
  if (order.empty()) return result;
  RModel& model = result.model;
  for (std::size_t i : order) CheckExample(model, positives[i]);
  Rng rng(SplitMix64(cfg.seed ^ kShuffleStream ^ 0x7761726dULL));
  std::vector<double> grad(model.parameters().size());
  const int v = model.shape().vocab_size;
  PrefixPass pass;
  for (int epoch = 1; epoch <= cfg.warmup_epochs; ++epoch) {
    Shuffle(order, rng);
    double nll = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const TrainingExample& ex = positives[order[k]];
        const double w = ex.weight();
        std::span<const TokenId> y(ex.y.y);
        pass.run(model, ex);
        for (std::size_t i = 0; i < y.size(); ++i) {
          const TokenDistribution dist = base.next_token_dist(ex.x, y.first(i));
          const std::vector<double>& outputs = pass.traces[i].outputs;
          double z = 0.0;
          for (int t = 0; t < v; ++t) z += outputs[t] * dist[t];
          const TokenId target = y[i];
          batch += -w * (std::log(outputs[target] * dist[target]) - std::log(z));
          std::vector<double>& g = pass.output_grad[i];
          for (int t = 0; t < v; ++t) g[t] += w * dist[t] / z;
          g[target] -= w / outputs[target];
        }
        pass.backward(model, y.size(), grad);
      }
      NADO_CHECK(std::isfinite(batch), ErrorCode::kNonFiniteLoss,
                 "non-finite warmup loss in epoch " + std::to_string(epoch));
      nll += batch;
      const double step = cfg.warmup_rate() / static_cast<double>(end - start);
      auto params = model.mutable_parameters();
      for (std::size_t j = 0; j < params.size(); ++j) params[j] -= step * grad[j];
    }
    result.curve.push_back(nll / static_cast<double>(order.size()));
  }
  return result;
}

std::vector<double> LossGradient(const RModel& rm, std::span<const TrainingExample> examples,
                                 const AutoregressiveSource& base, double lambda) {
  std::vector<double> grad(rm.parameters().size(), 0.0);
  for (const auto& ex : examples) AccumulateExampleGradient(rm, base, ex, lambda, grad);
  return grad;
}

GradCheckReport GradCheck(const RModel& rm, std::span<const TrainingExample> probes, const AutoregressiveSource& base,
                          double lambda, double step, double floor) {
  NADO_CHECK(step > 0.0 && floor > 0.0, ErrorCode::kInvalidArgument, "grad check step and floor must be positive");
  const std::vector<double> analytic = LossGradient(rm, probes, base, lambda);
  GradCheckReport report;
  double sq = 0.0;
  for (double g : analytic) sq += g * g;
  report.gradient_norm = std::sqrt(sq);

  RModel probe(rm.shape(), std::vector<double>(rm.parameters().begin(), rm.parameters().end()));
  auto loss = [&]() {
    double total = 0.0;
    for (const auto& ex : probes) total += ex.weight() * ExampleLoss(probe, base, ex, lambda);
    return total;
  };
  auto params = probe.mutable_parameters();
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double saved = params[j];
    params[j] = saved + step;
    const double up = loss();
    params[j] = saved - step;
    const double down = loss();
    params[j] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(analytic[j]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[j] - numeric) / scale;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = j;
    }
  }
  return report;
}

PipelineResult TrainNado(const TabularBaseModel& base, const Oracle& oracle, std::span<const ConditionId> xs,
                         const RModelShape& shape, const TrainConfig& cfg,
                         std::span<const TrainingExample> warmup_corpus) {
  cfg.validate();
  RModel rm(shape, SplitMix64(cfg.seed ^ kInitStream));
  PipelineResult result{rm, {}, {}, false, 0, 0, 0, 0};

  auto count_positive = [](const std::vector<TrainingExample>& set) {
    return static_cast<std::size_t>(
        std::count_if(set.begin(), set.end(), [](const TrainingExample& ex) { return ex.label; }));
  };

  std::vector<TrainingExample> pilot;
  const bool want_pilot = warmup_corpus.empty() && (cfg.importance_sampling || cfg.warmup_epochs > 0);
  if (!warmup_corpus.empty() && cfg.warmup_epochs > 0) {
    std::vector<TrainingExample> positives;
    for (const auto& ex : warmup_corpus) {
      if (ex.label) positives.push_back(ex);
    }
    WarmupResult warm = Warmup(std::move(rm), base, positives, cfg);
    rm = std::move(warm.model);
    result.warmup_curve = std::move(warm.curve);
    result.warmup_skipped = warm.skipped;
  }
  if (want_pilot) {
    TrainConfig pilot_cfg = cfg;
    pilot_cfg.importance_sampling = false;
    pilot = SampleTrainingSet(base, oracle, xs, pilot_cfg);
    result.pilot_samples = pilot.size();
    result.pilot_positives = count_positive(pilot);
    if (cfg.warmup_epochs > 0) {
      std::vector<TrainingExample> positives;
      for (const auto& ex : pilot) {
        if (ex.label) positives.push_back(ex);
      }
      WarmupResult warm = Warmup(std::move(rm), base, positives, cfg);
      rm = std::move(warm.model);
      result.warmup_curve = std::move(warm.curve);
      result.warmup_skipped = warm.skipped;
    }
  }

  int round = 0;
  // The training pool starts from the pilot draws. Every importance round
  // adds fresh draws from the composed proposal; each round is normalized on
  // its own, so the pooled objective stays an unbiased estimate.
  std::vector<TrainingExample> examples = pilot;
  auto draw = [&]() {
    TrainConfig round_cfg = cfg;
    if (cfg.importance_sampling) round_cfg.seed = SplitMix64(cfg.seed + 1 + static_cast<std::uint64_t>(round));
    std::optional<GuidedModel> proposal;
    if (cfg.importance_sampling) proposal.emplace(base, rm);
    std::vector<TrainingExample> fresh =
        SampleTrainingSet(base, oracle, xs, round_cfg, proposal ? &*proposal : nullptr);
    result.main_samples += fresh.size();
    result.main_positives += count_positive(fresh);
    examples.insert(examples.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
  };

  if (cfg.importance_sampling || !want_pilot) draw();
  const int chunk = (cfg.importance_sampling && cfg.proposal_refresh_period > 0) ? cfg.proposal_refresh_period
                                                                                 : std::max(cfg.epochs, 1);
  int done = 0;
  while (done < cfg.epochs) {
    TrainConfig chunk_cfg = cfg;
    chunk_cfg.epochs = std::min(chunk, cfg.epochs - done);
    chunk_cfg.seed = SplitMix64(cfg.seed ^ (0x100ULL + static_cast<std::uint64_t>(round)));
    TrainResult trained = Train(std::move(rm), examples, base, chunk_cfg);
    rm = std::move(trained.model);
    for (EpochStats stats : trained.curve) {
      stats.epoch += done;
      result.curve.push_back(stats);
    }
    done += chunk_cfg.epochs;
    if (done < cfg.epochs) {
      ++round;
      draw();
    }
  }
  result.model = std::move(rm);
  return result;
}

}  // namespace nado
