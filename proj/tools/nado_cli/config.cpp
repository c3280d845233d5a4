#include "config.hpp"

#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "nado/error.hpp"

namespace nado::cli {
namespace {

std::string Join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

// One TOML table with type-checked lookups; leftover keys are errors.
class Section {
 public:
  Section(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

  bool present() const { return table_ != nullptr; }
  const std::string& path() const { return path_; }

  bool has(std::string_view key) const { return table_ && table_->contains(key); }

  const toml::node* node(std::string_view key) {
    if (!table_) return nullptr;
    used_.insert(std::string(key));
    return table_->get(key);
  }

  std::int64_t wide_integer(std::string_view key, std::int64_t fallback, std::int64_t min, std::int64_t max) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    auto v = n->value<std::int64_t>();
    if (!n->is_integer() || !v) throw ConfigError(Join(path_, key), "expected an integer");
    if (*v < min || *v > max) {
      throw ConfigError(Join(path_, key),
                        "must lie in [" + std::to_string(min) + ", " + std::to_string(max) + "], got " + std::to_string(*v));
    }
    return *v;
  }

  int integer(std::string_view key, int fallback, int min = 0, int max = 1 << 30) {
    return static_cast<int>(wide_integer(key, static_cast<std::int64_t>(fallback), static_cast<std::int64_t>(min),
                                    static_cast<std::int64_t>(max)));
  }

  std::uint64_t seed(std::string_view key, std::uint64_t fallback) {
    return static_cast<std::uint64_t>(
        wide_integer(key, static_cast<std::int64_t>(fallback), 0, std::numeric_limits<std::int64_t>::max()));
  }

  double real(std::string_view key, double fallback, double min, double max) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (!n->is_number()) throw ConfigError(Join(path_, key), "expected a number");
    const double v = n->value<double>().value();
    if (!(v >= min && v <= max)) {
      std::ostringstream msg;
      msg << "must lie in [" << min << ", " << max << "], got " << v;
      throw ConfigError(Join(path_, key), msg.str());
    }
    return v;
  }

  bool boolean(std::string_view key, bool fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (!n->is_boolean()) throw ConfigError(Join(path_, key), "expected true or false");
    return n->value<bool>().value();
  }

  std::string string(std::string_view key, std::string fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (!n->is_string()) throw ConfigError(Join(path_, key), "expected a string");
    return n->value<std::string>().value();
  }

  std::string choice(std::string_view key, std::string fallback, std::initializer_list<std::string_view> allowed) {
    std::string v = string(key, std::move(fallback));
    for (auto a : allowed) {
      if (v == a) return v;
    }
    std::string list;
    for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    throw ConfigError(Join(path_, key), "expected one of {" + list + "}, got \"" + v + "\"");
  }

  Section sub(std::string_view key) {
    const toml::node* n = node(key);
    if (!n) return Section(nullptr, Join(path_, key));
    if (!n->is_table()) throw ConfigError(Join(path_, key), "expected a table");
    return Section(n->as_table(), Join(path_, key));
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!used_.contains(std::string(k.str()))) throw ConfigError(Join(path_, k.str()), "unknown field");
    }
  }

 private:
  const toml::table* table_;
  std::string path_;
  std::set<std::string> used_;
};

std::vector<std::string> StringArray(const toml::node* n, const std::string& path) {
  if (!n->is_array()) throw ConfigError(path, "expected an array of token strings");
  std::vector<std::string> out;
  std::size_t i = 0;
  for (const auto& item : *n->as_array()) {
    if (!item.is_string()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a token string");
    out.push_back(item.value<std::string>().value());
    ++i;
  }
  if (out.empty()) throw ConfigError(path, "keyword must not be empty");
  return out;
}

void ParseKeywords(Section& fixture, ExperimentConfig& cfg) {
  Section kw = fixture.sub("keywords");
  if (!kw.present()) return;
  const Vocabulary vocab = Vocabulary::Synthetic(cfg.fixture.model.vocab_size);
  for (ConditionId x = 0; x < cfg.fixture.model.num_conditions; ++x) {
    const std::string key = std::to_string(x);
    if (!kw.has(key)) continue;
    const toml::node* n = kw.node(key);
    const std::string path = Join(kw.path(), key);
    if (!n->is_array()) throw ConfigError(path, "expected an array of keywords");
    std::size_t i = 0;
    for (const auto& pattern : *n->as_array()) {
      const std::string ppath = path + "[" + std::to_string(i++) + "]";
      auto tokens = StringArray(&pattern, ppath);
      for (const auto& t : tokens) {
        auto id = vocab.find(t);
        if (!id || *id == vocab.eos_id()) throw ConfigError(ppath, "\"" + t + "\" is not a body token of the vocabulary");
      }
      cfg.fixture.keywords[x].push_back(std::move(tokens));
    }
  }
  kw.finish();
}

void ParseFixture(Section s, const std::filesystem::path& origin, ExperimentConfig& cfg) {
  cfg.preset = s.choice("preset", "custom", {"benchmark", "rare", "random", "custom"});
  if (cfg.preset == "benchmark" || cfg.preset == "rare") {
    cfg.fixture = cfg.preset == "benchmark" ? BenchmarkFixtureSpec() : RareFixtureSpec();
  } else if (cfg.preset == "random") {
    cfg.fixture = RandomLexicalFixtureSpec(s.seed("seed", 0));
  } else {
    RandomModelOptions& m = cfg.fixture.model;
    m.seed = s.seed("seed", 0);
    m.vocab_size = s.integer("vocab_size", 4, 2, 64);
    m.order = s.integer("order", 1, 0, 4);
    m.max_len = s.integer("max_len", 6, 1, 64);
    m.eos_floor = s.real("eos_floor", 0.1, 0.0, 1.0);
    m.num_conditions = s.integer("num_conditions", 1, 1, 1024);
    const std::string oracle = s.string("oracle", "");
    if (!oracle.empty() && s.has("keywords")) throw ConfigError(Join(s.path(), "oracle"), "give either oracle or keywords");
    if (!oracle.empty()) {
      std::filesystem::path p = oracle;
      if (p.is_relative()) p = origin / p;
      const Vocabulary vocab = Vocabulary::Synthetic(m.vocab_size);
      try {
        const LexicalOracle lex = OracleSpecFromJson(ReadJsonFile(p), vocab);
        for (const auto& [x, patterns] : lex.keywords()) {
          if (x >= m.num_conditions) throw ConfigError(Join(s.path(), "oracle"), "condition out of range in " + p.string());
          for (const auto& pattern : patterns) {
            std::vector<std::string> tokens;
            for (TokenId t : pattern) tokens.push_back(vocab.token(t));
            cfg.fixture.keywords[x].push_back(std::move(tokens));
          }
        }
      } catch (const Error& e) {
        throw ConfigError(Join(s.path(), "oracle"), e.what());
      }
    } else {
      ParseKeywords(s, cfg);
    }
  }
  s.finish();
}

}  // namespace

RModelShape ExperimentConfig::shape(const TabularBaseModel& base) const {
  return RModelShape::For(base, model.window, model.embed_dim, model.hidden);
}

Json ExperimentConfig::canonical() const {
  Json keywords = Json::object();
  for (const auto& [x, patterns] : fixture.keywords) keywords[std::to_string(x)] = patterns;
  return {{"name", name},
          {"fixture",
           {{"preset", preset},
            {"seed", fixture.model.seed},
            {"vocab_size", fixture.model.vocab_size},
            {"order", fixture.model.order},
            {"max_len", fixture.model.max_len},
            {"eos_floor", fixture.model.eos_floor},
            {"num_conditions", fixture.model.num_conditions},
            {"keywords", keywords}}},
          {"model", {{"window", model.window}, {"embed_dim", model.embed_dim}, {"hidden", model.hidden}}},
          {"train",
           [&] {
             Json t = TrainConfigToJson(train);
             t["warmup_corpus"] = warmup_corpus;
             t["warmup_corpus_seed"] = warmup_corpus_seed;
             return t;
           }()},
          {"decode",
           {{"strategy", decode.strategy},
            {"top_p", decode.top_p},
            {"n_per_x", decode.n_per_x},
            {"seed", decode.seed},
            {"q_rows", decode.q_rows}}},
          {"eval", {{"n_per_x", eval.n_per_x}, {"seed", eval.seed}, {"max_bleu_n", eval.max_bleu_n}}},
          {"verify",
           {{"random_fixtures", verify.random_fixtures},
            {"lemma1_trials", verify.lemma1_trials},
            {"lemma2_trials", verify.lemma2_trials},
            {"kl_alternatives", verify.kl_alternatives},
            {"max_delta", verify.max_delta},
            {"seed", verify.seed}}}};
}

ExperimentConfig ParseConfig(std::string_view text, const std::filesystem::path& origin) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    const auto& where = e.source().begin;
    throw ConfigError("line " + std::to_string(where.line) + ", column " + std::to_string(where.column),
                      std::string(e.description()));
  }
  Section top(&root, "");
  ExperimentConfig cfg;

  Section run = top.sub("run");
  cfg.name = run.string("name", "run");
  std::filesystem::path out = run.string("output_dir", "runs/" + cfg.name);
  run.finish();
  if (const char* env = std::getenv("NADO_OUTPUT_ROOT"); env && *env) {
    out = std::filesystem::path(env) / out.relative_path();
  }
  cfg.output_dir = out;

  ParseFixture(top.sub("fixture"), origin, cfg);

  Section model = top.sub("model");
  cfg.model.window = model.integer("window", 4, 1, 64);
  cfg.model.embed_dim = model.integer("embed_dim", 8, 1, 1024);
  if (const toml::node* n = model.node("hidden")) {
    if (!n->is_array()) throw ConfigError("model.hidden", "expected an array of layer widths");
    cfg.model.hidden.clear();
    std::size_t i = 0;
    for (const auto& w : *n->as_array()) {
      auto v = w.value<std::int64_t>();
      if (!w.is_integer() || !v || *v < 1 || *v > 4096) {
        throw ConfigError("model.hidden[" + std::to_string(i) + "]", "expected a width in [1, 4096]");
      }
      cfg.model.hidden.push_back(static_cast<int>(*v));
      ++i;
    }
  }
  model.finish();

  Section train = top.sub("train");
  TrainConfig& t = cfg.train;
  t.lambda = train.real("lambda", t.lambda, 0.0, 1e6);
  t.learning_rate = train.real("learning_rate", t.learning_rate, 1e-300, 1e6);
  t.epochs = train.integer("epochs", t.epochs, 0);
  t.batch_size = train.integer("batch_size", t.batch_size, 1);
  t.samples_per_x = train.integer("samples_per_x", t.samples_per_x, 1);
  t.temperature = train.real("temperature", t.temperature, 1e-3, 1e3);
  t.importance_sampling = train.boolean("importance_sampling", t.importance_sampling);
  t.proposal_mix = train.real("proposal_mix", t.proposal_mix, 0.0, 1.0);
  t.proposal_refresh_period = train.integer("proposal_refresh_period", t.proposal_refresh_period, 0);
  t.warmup_epochs = train.integer("warmup_epochs", t.warmup_epochs, 0);
  t.warmup_learning_rate = train.real("warmup_learning_rate", t.warmup_learning_rate, 0.0, 1e6);
  t.seed = train.seed("seed", t.seed);
  cfg.warmup_corpus = train.integer("warmup_corpus", 0, 0);
  cfg.warmup_corpus_seed = train.seed("warmup_corpus_seed", 0);
  train.finish();
  try {
    t.validate();
  } catch (const Error& e) {
    throw ConfigError("train", e.what());
  }

  Section decode = top.sub("decode");
  cfg.decode.strategy = decode.choice("strategy", cfg.decode.strategy, {"sample", "greedy"});
  cfg.decode.top_p = decode.real("top_p", cfg.decode.top_p, 1e-9, 1.0);
  cfg.decode.n_per_x = decode.integer("n_per_x", cfg.decode.n_per_x, 1);
  cfg.decode.seed = decode.seed("seed", cfg.decode.seed);
  cfg.decode.q_rows = decode.boolean("q_rows", cfg.decode.q_rows);
  decode.finish();

  Section eval = top.sub("eval");
  cfg.eval.n_per_x = eval.integer("n_per_x", cfg.eval.n_per_x, 1);
  cfg.eval.seed = eval.seed("seed", cfg.eval.seed);
  cfg.eval.max_bleu_n = eval.integer("max_bleu_n", cfg.eval.max_bleu_n, 1, 8);
  eval.finish();

  Section verify = top.sub("verify");
  VerifyOptions& v = cfg.verify;
  v.random_fixtures = verify.integer("random_fixtures", v.random_fixtures, 0);
  v.lemma1_trials = verify.integer("lemma1_trials", v.lemma1_trials, 0);
  v.lemma2_trials = verify.integer("lemma2_trials", v.lemma2_trials, 0);
  v.kl_alternatives = verify.integer("kl_alternatives", v.kl_alternatives, 1);
  v.max_delta = verify.real("max_delta", v.max_delta, 1.0, 100.0);
  v.seed = verify.seed("seed", v.seed);
  verify.finish();

  top.finish();

  // Model-level consistency the sections cannot see on their own.
  if (cfg.model.window < 1) throw ConfigError("model.window", "must be positive");
  for (const auto& [x, patterns] : cfg.fixture.keywords) {
    if (x >= cfg.fixture.model.num_conditions) {
      throw ConfigError("fixture.keywords." + std::to_string(x), "condition outside the model");
    }
  }
  return cfg;
}

ExperimentConfig LoadConfig(const std::filesystem::path& path) {
  std::string text;
  try {
    text = ReadFile(path);
  } catch (const Error& e) {
    throw ConfigError("config", e.what());
  }
  return ParseConfig(text, path.parent_path());
}

}  // namespace nado::cli
