#include "nado/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nado/error.hpp"

namespace nado {
namespace {

constexpr std::string_view kPadToken = "<pad>";

void CheckFormat(const Json& doc, std::string_view format) {
  NADO_CHECK(doc.is_object(), ErrorCode::kFormat, "expected a JSON object");
  NADO_CHECK(doc.contains("format") && doc["format"] == format, ErrorCode::kFormat,
             "expected format tag " + std::string(format));
  NADO_CHECK(doc.contains("version") && doc["version"] == kFormatVersion, ErrorCode::kFormat,
             "unsupported " + std::string(format) + " version");
}

Json Header(std::string_view format) {
  Json doc;
  doc["format"] = format;
  doc["version"] = kFormatVersion;
  return doc;
}

// JSON has no infinities; they are written as strings.
Json Number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

template <typename T>
T Get(const Json& doc, const char* key) {
  NADO_CHECK(doc.contains(key), ErrorCode::kFormat, std::string("missing field ") + key);
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("field ") + key + ": " + e.what());
  }
}

Json TokensToJson(std::span<const TokenId> ids, const Vocabulary& vocab) {
  Json out = Json::array();
  for (TokenId id : ids) out.push_back(vocab.token(id));
  return out;
}

}  // namespace

Json ModelToJson(const TabularBaseModel& model) {
  const Vocabulary& vocab = model.vocab();
  Json doc = Header("nado.tabular_model");
  doc["vocab"] = vocab.tokens();
  doc["eos"] = vocab.token(vocab.eos_id());
  doc["order"] = model.order();
  doc["max_len"] = model.max_len();
  doc["num_conditions"] = model.num_conditions();
  Json rows = Json::array();
  for (ConditionId x = 0; x < model.num_conditions(); ++x) {
    for (int w = 0; w < model.num_windows(); ++w) {
      Json key = Json::array();
      for (int slot : model.window_slots(w)) {
        key.push_back(slot == model.pad_slot() ? std::string(kPadToken) : vocab.token(slot));
      }
      auto probs = model.row(x, w);
      rows.push_back({{"condition", x}, {"window", key}, {"probs", std::vector<double>(probs.begin(), probs.end())}});
    }
  }
  doc["rows"] = std::move(rows);
  return doc;
}

TabularBaseModel ModelFromJson(const Json& doc) {
  CheckFormat(doc, "nado.tabular_model");
  auto tokens = Get<std::vector<std::string>>(doc, "vocab");
  auto eos = Get<std::string>(doc, "eos");
  TokenId eos_id = -1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == eos) eos_id = static_cast<TokenId>(i);
  }
  NADO_CHECK(eos_id >= 0, ErrorCode::kFormat, "eos token not in vocab");
  Vocabulary vocab(tokens, eos_id);
  const int order = Get<int>(doc, "order");
  const int max_len = Get<int>(doc, "max_len");
  const int num_conditions = Get<int>(doc, "num_conditions");
  NADO_CHECK(order >= 0 && order <= 8 && num_conditions >= 1, ErrorCode::kFormat, "bad model dimensions");
  int num_windows = 1;
  for (int i = 0; i < order; ++i) num_windows *= vocab.size() + 1;
  const int v = vocab.size();
  std::vector<double> rows(static_cast<std::size_t>(num_conditions) * num_windows * v, 0.0);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(num_conditions) * num_windows, 0);
  for (const Json& row : Get<Json>(doc, "rows")) {
    const int x = Get<int>(row, "condition");
    NADO_CHECK(x >= 0 && x < num_conditions, ErrorCode::kFormat, "row condition out of range");
    auto key = Get<std::vector<std::string>>(row, "window");
    NADO_CHECK(static_cast<int>(key.size()) == order, ErrorCode::kFormat, "row window has the wrong length");
    // Slot i (most recent first) contributes slot * (V + 1)^i.
    int w = 0;
    int scale = 1;
    for (const auto& token : key) {
      int slot = v;
      if (token != kPadToken) {
        auto id = vocab.find(token);
        NADO_CHECK(id.has_value(), ErrorCode::kFormat, "unknown token in window: " + token);
        slot = *id;
      }
      w += slot * scale;
      scale *= v + 1;
    }
    auto probs = Get<std::vector<double>>(row, "probs");
    NADO_CHECK(static_cast<int>(probs.size()) == v, ErrorCode::kFormat, "row has the wrong width");
    const std::size_t index = static_cast<std::size_t>(x) * num_windows + w;
    NADO_CHECK(!seen[index], ErrorCode::kFormat, "duplicate row");
    seen[index] = 1;
    std::copy(probs.begin(), probs.end(), rows.begin() + static_cast<std::ptrdiff_t>(index * v));
  }
  for (std::uint8_t s : seen) NADO_CHECK(s, ErrorCode::kFormat, "missing rows");
  TabularBaseModel model(std::move(vocab), order, max_len, num_conditions, std::move(rows));
  // The slot encoding above must agree with the model's own.
  for (int w = 0; w < model.num_windows(); ++w) {
    NADO_CHECK(model.window_from_slots(model.window_slots(w)) == w, ErrorCode::kFormat, "window encoding mismatch");
  }
  return model;
}

Json OracleSpecToJson(const LexicalOracle& oracle, const Vocabulary& vocab) {
  Json doc = Header("nado.oracle_spec");
  Json conditions = Json::array();
  for (const auto& [x, patterns] : oracle.keywords()) {
    Json list = Json::array();
    for (const auto& p : patterns) list.push_back(TokensToJson(p, vocab));
    conditions.push_back({{"condition", x}, {"keywords", list}});
  }
  doc["conditions"] = std::move(conditions);
  return doc;
}

LexicalOracle OracleSpecFromJson(const Json& doc, const Vocabulary& vocab) {
  CheckFormat(doc, "nado.oracle_spec");
  std::map<ConditionId, std::vector<Pattern>> keywords;
  for (const Json& entry : Get<Json>(doc, "conditions")) {
    const ConditionId x = Get<int>(entry, "condition");
    NADO_CHECK(!keywords.contains(x), ErrorCode::kFormat, "duplicate condition in oracle spec");
    auto& out = keywords[x];
    for (const auto& pattern : Get<std::vector<std::vector<std::string>>>(entry, "keywords")) {
      Pattern ids;
      for (const auto& token : pattern) {
        auto id = vocab.find(token);
        NADO_CHECK(id.has_value(), ErrorCode::kFormat, "unknown keyword token: " + token);
        ids.push_back(*id);
      }
      out.push_back(std::move(ids));
    }
  }
  return LexicalOracle(std::move(keywords), vocab);
}

namespace {

Json DfaToJson(const Dfa& dfa) {
  return {{"num_states", dfa.num_states},
          {"vocab_size", dfa.vocab_size},
          {"start", dfa.start},
          {"transitions", dfa.transitions},
          {"accepting", dfa.accepting}};
}

Dfa DfaFromJson(const Json& doc) {
  Dfa dfa;
  dfa.num_states = Get<int>(doc, "num_states");
  dfa.vocab_size = Get<int>(doc, "vocab_size");
  dfa.start = Get<int>(doc, "start");
  dfa.transitions = Get<std::vector<int>>(doc, "transitions");
  dfa.accepting = Get<std::vector<std::uint8_t>>(doc, "accepting");
  try {
    dfa.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormat, e.what());
  }
  return dfa;
}

}  // namespace

Json DfaOracleToJson(const DfaOracle& oracle) {
  Json doc = Header("nado.dfa_oracle");
  doc["descriptor"] = oracle.descriptor();
  Json automata = Json::array();
  for (const auto& [x, dfa] : oracle.automata()) {
    Json entry = DfaToJson(dfa);
    entry["condition"] = x;
    automata.push_back(std::move(entry));
  }
  doc["automata"] = std::move(automata);
  doc["fallback"] = oracle.fallback() ? DfaToJson(*oracle.fallback()) : Json();
  return doc;
}

DfaOracle DfaOracleFromJson(const Json& doc) {
  CheckFormat(doc, "nado.dfa_oracle");
  std::map<ConditionId, Dfa> automata;
  for (const Json& entry : Get<Json>(doc, "automata")) automata[Get<int>(entry, "condition")] = DfaFromJson(entry);
  std::optional<Dfa> fallback;
  if (doc.contains("fallback") && !doc["fallback"].is_null()) fallback = DfaFromJson(doc["fallback"]);
  return DfaOracle(std::move(automata), Get<std::string>(doc, "descriptor"), std::move(fallback));
}

Json ShapeToJson(const RModelShape& shape) {
  return {{"vocab_size", shape.vocab_size}, {"eos_id", shape.eos_id},         {"num_conditions", shape.num_conditions},
          {"max_len", shape.max_len},       {"window", shape.window},         {"embed_dim", shape.embed_dim},
          {"hidden", shape.hidden},         {"clamp_eps", shape.clamp_eps}};
}

RModelShape ShapeFromJson(const Json& doc) {
  RModelShape shape;
  shape.vocab_size = Get<int>(doc, "vocab_size");
  shape.eos_id = Get<TokenId>(doc, "eos_id");
  shape.num_conditions = Get<int>(doc, "num_conditions");
  shape.max_len = Get<int>(doc, "max_len");
  shape.window = Get<int>(doc, "window");
  shape.embed_dim = Get<int>(doc, "embed_dim");
  shape.hidden = Get<std::vector<int>>(doc, "hidden");
  shape.clamp_eps = Get<double>(doc, "clamp_eps");
  try {
    shape.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormat, e.what());
  }
  return shape;
}

Json TrainConfigToJson(const TrainConfig& cfg) {
  return {{"lambda", cfg.lambda},
          {"learning_rate", cfg.learning_rate},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"samples_per_x", cfg.samples_per_x},
          {"temperature", cfg.temperature},
          {"importance_sampling", cfg.importance_sampling},
          {"proposal_mix", cfg.proposal_mix},
          {"proposal_refresh_period", cfg.proposal_refresh_period},
          {"warmup_epochs", cfg.warmup_epochs},
          {"warmup_learning_rate", cfg.warmup_learning_rate},
          {"seed", cfg.seed}};
}

TrainConfig TrainConfigFromJson(const Json& doc) {
  TrainConfig cfg;
  cfg.lambda = Get<double>(doc, "lambda");
  cfg.learning_rate = Get<double>(doc, "learning_rate");
  cfg.epochs = Get<int>(doc, "epochs");
  cfg.batch_size = Get<int>(doc, "batch_size");
  cfg.samples_per_x = Get<int>(doc, "samples_per_x");
  cfg.temperature = Get<double>(doc, "temperature");
  cfg.importance_sampling = Get<bool>(doc, "importance_sampling");
  cfg.proposal_mix = Get<double>(doc, "proposal_mix");
  cfg.proposal_refresh_period = Get<int>(doc, "proposal_refresh_period");
  cfg.warmup_epochs = Get<int>(doc, "warmup_epochs");
  cfg.warmup_learning_rate = Get<double>(doc, "warmup_learning_rate");
  cfg.seed = Get<std::uint64_t>(doc, "seed");
  return cfg;
}

Json RModelToJson(const RModel& model, const TrainConfig& cfg) {
  Json doc = Header("nado.rmodel");
  doc["shape"] = ShapeToJson(model.shape());
  doc["config"] = TrainConfigToJson(cfg);
  auto params = model.parameters();
  doc["parameters"] = std::vector<double>(params.begin(), params.end());
  return doc;
}

RModel RModelFromJson(const Json& doc) {
  CheckFormat(doc, "nado.rmodel");
  RModelShape shape = ShapeFromJson(Get<Json>(doc, "shape"));
  auto params = Get<std::vector<double>>(doc, "parameters");
  NADO_CHECK(params.size() == RModelLayout::For(shape).size, ErrorCode::kFormat,
             "parameter count does not match the shape");
  return RModel(std::move(shape), std::move(params));
}

Json EpochStatsToJson(const EpochStats& stats, std::string_view phase) {
  return {{"phase", phase},           {"epoch", stats.epoch},
          {"loss", Number(stats.loss)}, {"ce", Number(stats.ce)},
          {"reg", Number(stats.reg)},   {"mean_residual", Number(stats.mean_residual)}};
}

Json EvalReportToJson(const EvalReport& report) {
  Json bleu = Json::object();
  for (const auto& [n, score] : report.bleu) bleu["bleu_" + std::to_string(n)] = Number(score);
  return {{"coverage", Number(report.coverage)},
          {"kl_to_qstar", Number(report.kl_to_qstar)},
          {"mean_reg_residual", Number(report.mean_reg_residual)},
          {"bleu", bleu},
          {"sample_size", report.sample_size}};
}

Json BoundReportToJson(const BoundReport& report) {
  Json offending = Json::array();
  for (const auto& p : report.offending) offending.push_back(p);
  return {{"delta", Number(report.delta)},
          {"horizon", report.horizon},
          {"kl", Number(report.kl)},
          {"bound_loose", Number(report.bound_loose)},
          {"bound_tight", Number(report.bound_tight)},
          {"consistent_r", report.consistent_r},
          {"max_residual", Number(report.max_residual)},
          {"holds", report.holds},
          {"vacuous", report.vacuous},
          {"offending", offending}};
}

Json DecodeRecordToJson(const DecodeRecord& record) {
  Json doc = {{"condition", record.x},
              {"tokens", record.y.y},
              {"text", record.text},
              {"oracle", record.oracle},
              {"logprob_base", Number(record.logprob_base)},
              {"logprob_guided", Number(record.logprob_guided)}};
  if (!record.q_rows.empty()) doc["q_rows"] = record.q_rows;
  return doc;
}

void WriteFileAtomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    NADO_CHECK(out.good(), ErrorCode::kInvalidState, "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    NADO_CHECK(out.good(), ErrorCode::kInvalidState, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  NADO_CHECK(in.good(), ErrorCode::kInvalidArgument, "cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

Json ReadJsonFile(const std::filesystem::path& path) {
  try {
    return Json::parse(ReadFile(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

std::uint64_t Fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string HexDigest(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace nado
