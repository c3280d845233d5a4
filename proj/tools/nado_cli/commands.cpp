#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nado/analysis.hpp"
#include "nado/decode.hpp"
#include "nado/error.hpp"
#include "nado/exact.hpp"
#include "nado/invariants.hpp"
#include "nado/io.hpp"
#include "run.hpp"

namespace nado::cli {
namespace fs = std::filesystem;
namespace {

struct LoadedFixture {
  TabularBaseModel base;
  LexicalOracle oracle;
  DfaOracle dfa;
};

LoadedFixture LoadFixture(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output_dir / "fixture";
  for (const char* f : {"model.json", "oracle.json", "dfa.json"}) {
    if (!fs::exists(dir / f)) {
      throw ConfigError("fixture", (dir / f).string() + " not found; run gen-fixture first");
    }
  }
  TabularBaseModel base = ModelFromJson(ReadJsonFile(dir / "model.json"));
  LexicalOracle oracle = OracleSpecFromJson(ReadJsonFile(dir / "oracle.json"), base.vocab());
  DfaOracle dfa = DfaOracleFromJson(ReadJsonFile(dir / "dfa.json"));
  return {std::move(base), std::move(oracle), std::move(dfa)};
}

RModel LoadNado(const ExperimentConfig& cfg) {
  const fs::path p = cfg.output_dir / "nado.json";
  if (!fs::exists(p)) throw ConfigError("train", p.string() + " not found; run train first");
  return RModelFromJson(ReadJsonFile(p));
}

std::vector<ConditionId> Conditions(const TabularBaseModel& base) {
  std::vector<ConditionId> xs;
  for (ConditionId x = 0; x < base.num_conditions(); ++x) xs.push_back(x);
  return xs;
}

Json FixtureToJson(const FixtureSpec& spec) {
  const Fixture f = MakeFixture(spec);
  Json keywords = Json::object();
  for (const auto& [x, patterns] : spec.keywords) keywords[std::to_string(x)] = patterns;
  return {{"spec",
           {{"seed", spec.model.seed},
            {"vocab_size", spec.model.vocab_size},
            {"order", spec.model.order},
            {"max_len", spec.model.max_len},
            {"eos_floor", spec.model.eos_floor},
            {"num_conditions", spec.model.num_conditions},
            {"keywords", keywords}}},
          {"model", ModelToJson(f.base)},
          {"oracle", OracleSpecToJson(f.oracle, f.base.vocab())}};
}

Json CheckToJson(const CheckResult& c) {
  Json j = {{"name", c.name}, {"condition", c.x}, {"passed", c.passed}, {"skipped", c.skipped}};
  auto num = [](double v) -> Json {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  };
  j["measured"] = num(c.measured);
  j["tolerance"] = num(c.tolerance);
  if (!c.detail.empty()) j["detail"] = c.detail;
  return j;
}

std::string CsvNumber(const Json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  std::ostringstream out;
  out.precision(12);
  out << v.get<double>();
  return out.str();
}

}  // namespace

int CmdGenFixture(const ExperimentConfig& cfg) {
  return Execute(cfg, "gen-fixture", [&](Run& run) {
    const Fixture f = MakeFixture(cfg.fixture);
    const DfaOracle dfa = CompileLexicalOracle(f.oracle, f.base.vocab());
    const ExactR exact = ExactR::ByDynamicProgram(f.base, dfa);
    run.write_json("model", "fixture/model.json", ModelToJson(f.base));
    run.write_json("oracle", "fixture/oracle.json", OracleSpecToJson(f.oracle, f.base.vocab()));
    run.write_json("dfa", "fixture/dfa.json", DfaOracleToJson(dfa));
    Json rates = Json::array();
    for (ConditionId x : Conditions(f.base)) rates.push_back({{"condition", x}, {"success_rate", exact.total(x)}});
    run.write_json("fixture_info", "fixture/info.json", {{"preset", cfg.preset}, {"base_success_rate", rates}});
    std::cout << "fixture written to " << (cfg.output_dir / "fixture").string() << "\n";
    return kExitOk;
  });
}

int CmdTrain(const ExperimentConfig& cfg) {
  return Execute(cfg, "train", [&](Run& run) {
    const LoadedFixture f = LoadFixture(cfg);
    const std::vector<ConditionId> xs = Conditions(f.base);
    std::vector<TrainingExample> corpus;
    if (cfg.warmup_corpus > 0) {
      const ExactR exact = ExactR::ByDynamicProgram(f.base, f.dfa);
      corpus = ReferenceCorpus(exact, xs, cfg.warmup_corpus, cfg.warmup_corpus_seed);
    }
    const PipelineResult result = TrainNado(f.base, f.oracle, xs, cfg.shape(f.base), cfg.train, corpus);
    std::vector<Json> log;
    for (std::size_t i = 0; i < result.warmup_curve.size(); ++i) {
      log.push_back({{"phase", "warmup"}, {"epoch", i + 1}, {"nll", result.warmup_curve[i]}});
    }
    for (const EpochStats& s : result.curve) log.push_back(EpochStatsToJson(s));
    run.write_json("nado", "nado.json", RModelToJson(result.model, cfg.train));
    run.write_jsonl("train_log", "train_log.jsonl", log);
    run.write_json("train_summary", "train_summary.json",
                   {{"warmup_skipped", result.warmup_skipped},
                    {"warmup_corpus", corpus.size()},
                    {"pilot_samples", result.pilot_samples},
                    {"pilot_positives", result.pilot_positives},
                    {"main_samples", result.main_samples},
                    {"main_positives", result.main_positives},
                    {"final", result.curve.empty() ? Json() : EpochStatsToJson(result.curve.back())}});
    if (!result.curve.empty()) {
      std::printf("trained %d epochs, final loss %.6f\n", result.curve.back().epoch, result.curve.back().loss);
    }
    return kExitOk;
  });
}

int CmdDecode(const ExperimentConfig& cfg) {
  return Execute(cfg, "decode", [&](Run& run) {
    const LoadedFixture f = LoadFixture(cfg);
    const RModel rm = LoadNado(cfg);
    const GuidedModel q(f.base, rm);
    std::vector<Json> lines;
    for (ConditionId x : Conditions(f.base)) {
      const int n = cfg.decode.strategy == "greedy" ? 1 : cfg.decode.n_per_x;
      for (int i = 0; i < n; ++i) {
        DecodeRecord rec;
        rec.x = x;
        rec.y = cfg.decode.strategy == "greedy" ? DecodeGreedy(q, x)
                                                : DecodeSample(q, x, DrawSeed(cfg.decode.seed, x, i), cfg.decode.top_p);
        rec.text = f.base.vocab().detokenize(rec.y.y);
        rec.oracle = f.oracle.evaluate(x, rec.y);
        rec.logprob_base = SequenceLogprob(f.base, rec.y);
        rec.logprob_guided = SequenceLogprob(q, rec.y);
        if (cfg.decode.q_rows) {
          for (std::size_t j = 0; j < rec.y.y.size(); ++j) {
            rec.q_rows.push_back(q.next_token_dist(x, std::span<const TokenId>(rec.y.y).first(j)).probs);
          }
        }
        lines.push_back(DecodeRecordToJson(rec));
      }
    }
    run.write_jsonl("decode", "decode.jsonl", lines);
    std::printf("wrote %zu decode records\n", lines.size());
    return kExitOk;
  });
}

int CmdEvaluate(const ExperimentConfig& cfg) {
  return Execute(cfg, "evaluate", [&](Run& run) {
    const LoadedFixture f = LoadFixture(cfg);
    const RModel rm = LoadNado(cfg);
    const ExactR exact = ExactR::ByDynamicProgram(f.base, f.dfa);
    const std::vector<ConditionId> xs = Conditions(f.base);
    std::vector<ConditionId> feasible;
    for (ConditionId x : xs) {
      if (exact.total(x) > 0.0) feasible.push_back(x);
    }
    if (feasible.empty()) throw Error(ErrorCode::kInfeasibleOracle, "no condition has a satisfying sequence");
    EvalOptions options;
    options.n_per_x = cfg.eval.n_per_x;
    options.seed = cfg.eval.seed;
    options.top_p = cfg.decode.top_p;
    options.max_bleu_n = cfg.eval.max_bleu_n;
    const EvalReport report = Evaluate(rm, exact, feasible, options);
    const GuidedModel q(f.base, rm);
    Json doc = EvalReportToJson(report);
    doc["greedy_coverage"] = GreedyCoverage(q, f.oracle, feasible).rate();
    double base_rate = 0.0;
    for (ConditionId x : feasible) base_rate += exact.total(x);
    doc["base_success_rate"] = base_rate / static_cast<double>(feasible.size());
    doc["conditions"] = feasible;
    run.write_json("eval", "eval.json", doc);
    std::printf("coverage %.4f  kl_to_qstar %.4f  mean_reg_residual %.6f\n", report.coverage, report.kl_to_qstar,
                report.mean_reg_residual);
    return kExitOk;
  });
}

int CmdVerify(const ExperimentConfig& cfg) {
  return Execute(cfg, "verify", [&](Run& run) {
    VerifyOutcome outcome = RunVerifySuite(cfg.fixture, cfg.verify);
    const fs::path nado_path = cfg.output_dir / "nado.json";
    if (outcome.passed && fs::exists(nado_path)) {
      // The bound is a theorem for any R, the learned one included.
      const Fixture f = MakeFixture(cfg.fixture);
      const DfaOracle dfa = CompileLexicalOracle(f.oracle, f.base.vocab());
      const ExactR exact = ExactR::ByDynamicProgram(f.base, dfa);
      const RModel rm = RModelFromJson(ReadJsonFile(nado_path));
      for (ConditionId x : Conditions(f.base)) {
        if (exact.total(x) <= 0.0) continue;
        const BoundReport rep = CheckLemma1(rm, exact, x);
        CheckResult c;
        c.name = "lemma1_learned";
        c.x = x;
        c.measured = rep.kl;
        c.tolerance = rep.bound_loose;
        c.passed = rep.holds;
        c.detail = rep.vacuous ? "delta unbounded" : "delta " + std::to_string(rep.delta);
        outcome.checks.push_back(c);
        if (!c.passed) {
          outcome.passed = false;
          outcome.offending = cfg.fixture;
          break;
        }
      }
    }
    Json checks = Json::array();
    std::size_t skipped = 0;
    for (const CheckResult& c : outcome.checks) {
      checks.push_back(CheckToJson(c));
      skipped += c.skipped;
    }
    run.write_json("verify", "verify.json",
                   {{"passed", outcome.passed}, {"checks_run", outcome.checks.size()}, {"skipped", skipped},
                    {"checks", checks}});
    if (!outcome.passed) {
      const CheckResult& bad = outcome.checks.back();
      run.write_json("offending_fixture", "failed/verify/offending_fixture.json", FixtureToJson(*outcome.offending));
      std::cerr << "verify FAILED: " << bad.name << " (condition " << bad.x << ") measured " << bad.measured
                << " tolerance " << bad.tolerance << (bad.detail.empty() ? "" : ", " + bad.detail) << "\n"
                << "offending fixture: " << (cfg.output_dir / "failed/verify/offending_fixture.json").string() << "\n";
      return kExitFailure;
    }
    std::printf("verify passed: %zu checks (%zu skipped)\n", outcome.checks.size(), skipped);
    return kExitOk;
  });
}

int CmdReport(const ExperimentConfig& cfg) {
  return Execute(cfg, "report", [&](Run& run) {
    const fs::path log_path = cfg.output_dir / "train_log.jsonl";
    if (!fs::exists(log_path)) throw ConfigError("train", log_path.string() + " not found; run train first");
    std::istringstream in(ReadFile(log_path));
    std::string csv = "phase,epoch,loss,ce,reg,mean_residual,nll\n";
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const Json j = Json::parse(line);
      csv += j.value("phase", "") + "," + std::to_string(j.value("epoch", 0));
      for (const char* key : {"loss", "ce", "reg", "mean_residual", "nll"}) {
        csv += ",";
        if (j.contains(key)) csv += CsvNumber(j[key]);
      }
      csv += "\n";
    }
    run.write("report_train", "report_train.csv", csv);
    const fs::path eval_path = cfg.output_dir / "eval.json";
    if (fs::exists(eval_path)) {
      const Json e = ReadJsonFile(eval_path);
      std::string out = "metric,value\n";
      for (const char* key : {"coverage", "kl_to_qstar", "mean_reg_residual", "greedy_coverage", "base_success_rate"}) {
        if (e.contains(key)) out += std::string(key) + "," + CsvNumber(e[key]) + "\n";
      }
      if (e.contains("bleu")) {
        for (auto it = e["bleu"].begin(); it != e["bleu"].end(); ++it) out += it.key() + "," + CsvNumber(it.value()) + "\n";
      }
      run.write("report_eval", "report_eval.csv", out);
    }
    std::printf("report written to %s\n", cfg.output_dir.string().c_str());
    return kExitOk;
  });
}

}  // namespace nado::cli
