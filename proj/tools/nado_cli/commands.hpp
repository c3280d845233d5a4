#pragma once

#include <string>

#include "config.hpp"

namespace nado::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitConfig = 2 };

// Each command writes its artifacts under cfg.output_dir and updates
// manifest.json. Artifacts of a command that throws midway are moved to
// failed/<command>/.
int CmdGenFixture(const ExperimentConfig& cfg);
int CmdTrain(const ExperimentConfig& cfg);
int CmdDecode(const ExperimentConfig& cfg);
int CmdEvaluate(const ExperimentConfig& cfg);
int CmdVerify(const ExperimentConfig& cfg);
int CmdReport(const ExperimentConfig& cfg);

}  // namespace nado::cli
