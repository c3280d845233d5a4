#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "nado/fixtures.hpp"
#include "nado/invariants.hpp"
#include "nado/io.hpp"
#include "nado/rmodel.hpp"
#include "nado/training.hpp"

namespace nado::cli {

// Invalid configuration; `field` is the dotted path of the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct ModelConfig {
  int window = 4;
  int embed_dim = 8;
  std::vector<int> hidden = {32};
};

struct DecodeConfig {
  std::string strategy = "sample";  // sample | greedy
  double top_p = 1.0;
  int n_per_x = 10;
  std::uint64_t seed = 0;
  bool q_rows = false;
};

struct EvalConfig {
  int n_per_x = 100;
  std::uint64_t seed = 0;
  int max_bleu_n = 4;
};

struct ExperimentConfig {
  std::string name = "run";
  std::filesystem::path output_dir;  // resolved
  std::string preset = "custom";
  FixtureSpec fixture;
  ModelConfig model;
  TrainConfig train;
  int warmup_corpus = 0;  // q* references per condition; 0 warms up on a pilot draw
  std::uint64_t warmup_corpus_seed = 0;
  DecodeConfig decode;
  EvalConfig eval;
  VerifyOptions verify;

  // Every resolved field except the output directory.
  Json canonical() const;
  std::string hash() const { return HexDigest(Fnv1a64(canonical().dump())); }
  RModelShape shape(const TabularBaseModel& base) const;
};

// Relative output directories resolve against $NADO_OUTPUT_ROOT when set,
// otherwise against the working directory. Throws ConfigError.
ExperimentConfig LoadConfig(const std::filesystem::path& path);
ExperimentConfig ParseConfig(std::string_view text, const std::filesystem::path& origin);

}  // namespace nado::cli
