#pragma once

#include <chrono>
#include <iostream>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "commands.hpp"
#include "config.hpp"
#include "nado/error.hpp"
#include "nado/io.hpp"

namespace nado::cli {
namespace fs = std::filesystem;

// Tracks the artifacts one command writes and owns the manifest update.
class Run {
 public:
  Run(const ExperimentConfig& cfg, std::string command)
      : cfg_(cfg), command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  fs::path path(const fs::path& rel) const { return cfg_.output_dir / rel; }

  void write(const std::string& artifact, const fs::path& rel, std::string_view content) {
    WriteFileAtomic(path(rel), content);
    written_.emplace_back(artifact, rel);
  }

  void write_json(const std::string& artifact, const fs::path& rel, const Json& doc) {
    write(artifact, rel, doc.dump(2) + "\n");
  }

  void write_jsonl(const std::string& artifact, const fs::path& rel, const std::vector<Json>& lines) {
    std::string out;
    for (const Json& line : lines) out += line.dump() + "\n";
    write(artifact, rel, out);
  }

  // Moves this command's artifacts under failed/<command>/ next to a note.
  void quarantine(const std::string& reason) {
    const fs::path dir = cfg_.output_dir / "failed" / command_;
    fs::create_directories(dir);
    for (const auto& [artifact, rel] : written_) {
      std::error_code ec;
      const fs::path target = dir / rel;
      fs::create_directories(target.parent_path(), ec);
      fs::rename(path(rel), target, ec);
    }
    for (const auto& entry : fs::recursive_directory_iterator(cfg_.output_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".tmp") {
        std::error_code ec;
        fs::remove(entry.path(), ec);
      }
    }
    WriteFileAtomic(dir / "error.txt", reason + "\n");
  }

  void commit() {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const fs::path manifest_path = path("manifest.json");
    Json manifest;
    if (fs::exists(manifest_path)) {
      try {
        manifest = ReadJsonFile(manifest_path);
      } catch (const Error&) {
        manifest = Json();
      }
    }
    if (!manifest.is_object() || manifest.value("format", "") != "nado.manifest") manifest = Json();
    Json fresh;
    fresh["format"] = "nado.manifest";
    fresh["version"] = kFormatVersion;
    fresh["name"] = cfg_.name;
    fresh["config_hash"] = cfg_.hash();
    fresh["versions"] = {{"tool", kToolVersion}, {"format", kFormatVersion}};
    if (manifest.contains("config_hash") && manifest["config_hash"] != fresh["config_hash"]) {
      std::cerr << "note: config hash changed since the last command in " << cfg_.output_dir << "\n";
    }
    Json artifacts = manifest.contains("artifacts") ? manifest["artifacts"] : Json::object();
    for (const auto& [artifact, rel] : written_) artifacts[artifact] = rel.generic_string();
    // Only files that exist right now may be referenced.
    Json kept = Json::object();
    for (auto it = artifacts.begin(); it != artifacts.end(); ++it) {
      if (fs::exists(path(it.value().get<std::string>()))) kept[it.key()] = it.value();
    }
    fresh["artifacts"] = kept;
    Json timings = manifest.contains("timings_seconds") ? manifest["timings_seconds"] : Json::object();
    timings[command_] = seconds;
    fresh["timings_seconds"] = timings;
    WriteFileAtomic(manifest_path, fresh.dump(2) + "\n");
  }

  const std::string& command() const { return command_; }

 private:
  const ExperimentConfig& cfg_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::pair<std::string, fs::path>> written_;
};

// Runs body, then records its artifacts in the manifest. Any exception other
// than a ConfigError quarantines what body wrote before rethrowing.
template <typename Body>
int Execute(const ExperimentConfig& cfg, const std::string& command, Body body) {
  Run run(cfg, command);
  int code = kExitOk;
  try {
    code = body(run);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    run.quarantine(e.what());
    throw;
  }
  run.commit();
  return code;
}

}  // namespace nado::cli
