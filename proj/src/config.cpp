#include "corella/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace corella {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    out.push_back(to_int(key, part));
  }
  if (out.empty()) throw ConfigError("key '" + key + "': expected a comma-separated list");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

struct KeyDef {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyDef>& schema() {
  static const std::vector<KeyDef> defs = [] {
    std::vector<KeyDef> d;
    auto str = [&](const char* k, std::string RunConfig::* f) {
      d.push_back({k, [k, f](RunConfig& c, const std::string& v) { c.*f = v; },
                   [f](const RunConfig& c) { return c.*f; }});
    };
    auto num = [&](const char* k, int RunConfig::* f) {
      d.push_back({k, [k, f](RunConfig& c, const std::string& v) { c.*f = to_int(k, v); },
                   [f](const RunConfig& c) { return std::to_string(c.*f); }});
    };
    auto u64 = [&](const char* k, std::uint64_t RunConfig::* f) {
      d.push_back({k, [k, f](RunConfig& c, const std::string& v) { c.*f = to_u64(k, v); },
                   [f](const RunConfig& c) { return std::to_string(c.*f); }});
    };
    auto dbl = [&](const char* k, double RunConfig::* f) {
      d.push_back({k, [k, f](RunConfig& c, const std::string& v) { c.*f = to_double(k, v); },
                   [f](const RunConfig& c) { return fmt_double(c.*f); }});
    };
    auto ilist = [&](const char* k, std::vector<int> RunConfig::* f) {
      d.push_back({k, [k, f](RunConfig& c, const std::string& v) { c.*f = to_int_list(k, v); },
                   [f](const RunConfig& c) { return fmt_int_list(c.*f); }});
    };

    str("dataset", &RunConfig::dataset);
    str("data.dir", &RunConfig::data_dir);
    str("out.dir", &RunConfig::out_dir);
    u64("seed", &RunConfig::seed);
    num("threads", &RunConfig::threads);
    num("synthetic.n", &RunConfig::synthetic_n);
    num("synthetic.users", &RunConfig::synthetic_users);
    num("synthetic.items", &RunConfig::synthetic_items);
    num("synthetic.genres", &RunConfig::synthetic_genres);
    num("synthetic.segments", &RunConfig::synthetic_segments);
    dbl("synthetic.cue_fraction", &RunConfig::synthetic_cue_fraction);
    dbl("synthetic.noise", &RunConfig::synthetic_noise);
    num("data.history_k", &RunConfig::history_k);
    num("data.max_seq_len", &RunConfig::max_seq_len);
    num("crm.d_emb", &RunConfig::crm_d_emb);
    num("crm.cross_layers", &RunConfig::crm_cross_layers);
    ilist("crm.deep", &RunConfig::crm_deep);
    dbl("crm.lr", &RunConfig::crm_lr);
    dbl("crm.weight_decay", &RunConfig::crm_weight_decay);
    num("llm.d_model", &RunConfig::llm_d_model);
    num("llm.blocks", &RunConfig::llm_blocks);
    num("llm.heads", &RunConfig::llm_heads);
    num("llm.ff", &RunConfig::llm_ff);
    ilist("align.llm_taps", &RunConfig::align_llm_taps);
    ilist("align.crm_taps", &RunConfig::align_crm_taps);
    num("align.projection_dim", &RunConfig::align_projection_dim);
    dbl("align.exponent", &RunConfig::align_exponent);
    dbl("loss.alpha", &RunConfig::loss_alpha);
    dbl("loss.beta", &RunConfig::loss_beta);
    dbl("loss.gamma", &RunConfig::loss_gamma);
    str("router.mode", &RunConfig::router_mode);
    dbl("router.rho", &RunConfig::router_rho);
    dbl("router.tau", &RunConfig::router_tau);
    num("train.stage1.epochs", &RunConfig::stage1_epochs);
    num("train.stage1.batch", &RunConfig::stage1_batch);
    num("train.stage2.epochs", &RunConfig::stage2_epochs);
    num("train.stage2.batch", &RunConfig::stage2_batch);
    num("train.stage2.subset_count", &RunConfig::stage2_subset_count);
    dbl("train.stage2.subset_fraction", &RunConfig::stage2_subset_fraction);
    num("train.stage2.patience", &RunConfig::stage2_patience);
    dbl("train.stage2.crm_lr", &RunConfig::stage2_crm_lr);
    dbl("train.stage2.llm_lr", &RunConfig::stage2_llm_lr);
    num("train.stage3.epochs", &RunConfig::stage3_epochs);
    num("train.stage3.batch", &RunConfig::stage3_batch);
    num("train.stage3.subset_count", &RunConfig::stage3_subset_count);
    dbl("train.stage3.subset_fraction", &RunConfig::stage3_subset_fraction);
    return d;
  }();
  return defs;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const KeyDef& def : schema()) {
    if (key == def.key) {
      def.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::load(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (const char* env = std::getenv("CORELLA_THREADS")) {
    cfg.threads = std::max(1, to_int("CORELLA_THREADS", env));
  }
  auto apply_line = [&cfg](const std::string& raw, const std::string& where) {
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) return;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  };
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      apply_line(line, file->string() + ":" + std::to_string(line_no));
    }
  }
  for (const std::string& ov : overrides) apply_line(ov, "--set " + ov);
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (dataset != "synthetic" && dataset != "movielens" && dataset != "amazon_books" &&
      dataset != "prepared") {
    throw ConfigError("dataset must be synthetic|movielens|amazon_books|prepared, got '" +
                      dataset + "'");
  }
  if (dataset != "synthetic" && data_dir.empty()) {
    throw ConfigError("dataset '" + dataset + "' requires data.dir");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (synthetic_n <= 0 || synthetic_users <= 0 || synthetic_items <= 0 || synthetic_genres <= 0 ||
      synthetic_segments <= 0) {
    throw ConfigError("synthetic sizes must be positive");
  }
  if (synthetic_cue_fraction < 0.0 || synthetic_cue_fraction > 1.0) {
    throw ConfigError("synthetic.cue_fraction must lie in [0,1]");
  }
  if (synthetic_noise < 0.0 || synthetic_noise > 1.0) {
    throw ConfigError("synthetic.noise must lie in [0,1]");
  }
  if (history_k < 0) throw ConfigError("data.history_k must be >= 0");
  if (max_seq_len < 1) throw ConfigError("data.max_seq_len must be >= 1");
  if (crm_d_emb <= 0 || crm_cross_layers < 1) throw ConfigError("bad crm sizes");
  if (llm_d_model <= 0 || llm_blocks < 1 || llm_heads < 1 || llm_ff < 1) {
    throw ConfigError("bad llm sizes");
  }
  if (llm_d_model % llm_heads != 0) throw ConfigError("llm.d_model must be divisible by llm.heads");
  try {
    alignment_config().validate(llm_blocks, crm_cross_layers);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (loss_alpha < 0.0 || loss_beta < 0.0 || loss_gamma < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (router_mode != "quantile" && router_mode != "absolute") {
    throw ConfigError("router.mode must be quantile|absolute");
  }
  if (router_rho < 0.0 || router_rho > 1.0) throw ConfigError("router.rho must lie in [0,1]");
  if (router_tau >= 0.0 && router_tau > std::log(2.0)) {
    throw ConfigError("router.tau must lie in [0, ln 2] (or < 0 for auto calibration)");
  }
  if (stage1_epochs < 0 || stage2_epochs < 0 || stage3_epochs < 0) {
    throw ConfigError("epoch counts must be >= 0");
  }
  if (stage1_batch < 1 || stage2_batch < 1 || stage3_batch < 1) {
    throw ConfigError("batch sizes must be >= 1");
  }
  if (stage2_patience < 1) throw ConfigError("train.stage2.patience must be >= 1");
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const KeyDef& def : schema()) {
    out += def.key;
    out += " = ";
    out += def.get(*this);
    out += "\n";
  }
  return out;
}

SyntheticConfig RunConfig::synthetic_config() const {
  SyntheticConfig s;
  s.n = synthetic_n;
  s.num_users = synthetic_users;
  s.num_items = synthetic_items;
  s.num_genres = synthetic_genres;
  s.num_segments = synthetic_segments;
  s.cue_fraction = synthetic_cue_fraction;
  s.noise = synthetic_noise;
  s.seed = seed;
  return s;
}

TransformOptions RunConfig::transform_options() const {
  TransformOptions o;
  o.history_k = history_k;
  o.max_seq_len = max_seq_len;
  return o;
}

CrmConfig RunConfig::crm_config() const {
  CrmConfig c;
  c.d_emb = crm_d_emb;
  c.cross_layers = crm_cross_layers;
  c.deep_widths = crm_deep;
  return c;
}

LlmConfig RunConfig::llm_config(int vocab_size) const {
  LlmConfig c;
  c.d_model = llm_d_model;
  c.num_blocks = llm_blocks;
  c.num_heads = llm_heads;
  c.ff_dim = llm_ff;
  c.max_seq_len = max_seq_len;
  c.vocab_size = vocab_size;
  c.yes_id = TextTokenizer::kYes;
  c.no_id = TextTokenizer::kNo;
  return c;
}

AlignmentConfig RunConfig::alignment_config() const {
  AlignmentConfig a;
  a.llm_taps = align_llm_taps;
  a.crm_taps = align_crm_taps;
  a.projection_dim = align_projection_dim;
  a.exponent = align_exponent;
  return a;
}

TrainingPlan RunConfig::training_plan() const {
  TrainingPlan p;
  p.seed = seed;
  p.stage1 = {stage1_epochs, stage1_batch, crm_lr, crm_weight_decay};
  p.stage2.epochs = stage2_epochs;
  p.stage2.batch_size = stage2_batch;
  p.stage2.subset_count = stage2_subset_count;
  p.stage2.subset_fraction = stage2_subset_fraction;
  p.stage2.patience = stage2_patience;
  p.stage2.weights = {loss_alpha, loss_beta, loss_gamma};
  p.stage2.crm_lr = stage2_crm_lr;
  p.stage2.llm_lr = stage2_llm_lr;
  p.stage3.epochs = stage3_epochs;
  p.stage3.batch_size = stage3_batch;
  p.stage3.subset_count = stage3_subset_count;
  p.stage3.subset_fraction = stage3_subset_fraction;
  p.stage3.lr = stage2_llm_lr;
  return p;
}

RouterConfig RunConfig::router_config() const {
  RouterConfig r;
  r.mode = router_mode == "quantile" ? RouterConfig::Mode::Quantile : RouterConfig::Mode::Absolute;
  r.rho = router_rho;
  r.tau = router_tau;
  return r;
}

ModelSeeds RunConfig::model_seeds() const {
  return {seed ^ 0xc0ffee01ULL, seed ^ 0xc0ffee02ULL, seed ^ 0xc0ffee03ULL};
}

}  // namespace corella
