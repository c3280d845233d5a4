#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nado/analysis.hpp"
#include "nado/oracle.hpp"
#include "nado/rmodel.hpp"
#include "nado/seqmodel.hpp"
#include "nado/training.hpp"

namespace nado {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

// Readers throw kFormat on a wrong "format" tag, an unknown version or a
// malformed document.

// Rows are listed as (condition, window tokens most recent first, probs); the
// pad slot is written as "<pad>". Doubles round-trip exactly.
Json ModelToJson(const TabularBaseModel& model);
TabularBaseModel ModelFromJson(const Json& doc);

// Keyword patterns per condition, as token strings.
Json OracleSpecToJson(const LexicalOracle& oracle, const Vocabulary& vocab);
LexicalOracle OracleSpecFromJson(const Json& doc, const Vocabulary& vocab);

// Compiled automata cache.
Json DfaOracleToJson(const DfaOracle& oracle);
DfaOracle DfaOracleFromJson(const Json& doc);

Json ShapeToJson(const RModelShape& shape);
RModelShape ShapeFromJson(const Json& doc);
Json TrainConfigToJson(const TrainConfig& cfg);
TrainConfig TrainConfigFromJson(const Json& doc);

// Shape, the producing config and the flat parameter vector.
Json RModelToJson(const RModel& model, const TrainConfig& cfg);
RModel RModelFromJson(const Json& doc);

Json EpochStatsToJson(const EpochStats& stats, std::string_view phase = "train");
Json EvalReportToJson(const EvalReport& report);
Json BoundReportToJson(const BoundReport& report);

struct DecodeRecord {
  ConditionId x = 0;
  Sequence y;
  std::string text;
  bool oracle = false;
  double logprob_base = 0.0;
  double logprob_guided = 0.0;
  // Guided next-token rows at every step, when requested.
  std::vector<std::vector<double>> q_rows;
};

Json DecodeRecordToJson(const DecodeRecord& record);

// Writes to a sibling temporary file and renames it over `path`.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view content);
std::string ReadFile(const std::filesystem::path& path);
Json ReadJsonFile(const std::filesystem::path& path);

// 64-bit FNV-1a.
std::uint64_t Fnv1a64(std::string_view data);
std::string HexDigest(std::uint64_t value);

}  // namespace nado
