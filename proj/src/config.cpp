#include "afp/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "afp/checkpoint.hpp"
#include "afp/error.hpp"

namespace afp {

using nlohmann::json;

namespace {

json languages_to_json(const std::vector<corpus::LanguageConfig>& langs) {
  json arr = json::array();
  for (const auto& l : langs) {
    json o{{"name", l.name}, {"order", std::string(corpus::order_name(l.order))}};
    if (l.offset) o["offset"] = *l.offset;
    arr.push_back(std::move(o));
  }
  return arr;
}

std::string policy_name(corpus::AlignmentPolicy::Kind k) {
  return k == corpus::AlignmentPolicy::Kind::pivot ? "pivot" : "pairwise";
}

corpus::AlignmentPolicy::Kind parse_policy(const std::string& s) {
  if (s == "pivot") return corpus::AlignmentPolicy::Kind::pivot;
  if (s == "pairwise") return corpus::AlignmentPolicy::Kind::pairwise;
  throw ConfigError("unknown alignment policy '" + s + "' (expected pivot or pairwise)");
}

// Every key a config document may contain, with optional fields present.
json schema() {
  RunConfig full;
  full.seed = 0;
  full.eval.layer = 0;
  full.eval.pooling = num::Pooling::mean;
  return to_json(full);
}

void reject_unknown(const json& doc, const json& known, const std::string& path) {
  if (!doc.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + here + "'");
    if (here == "corpus.family.languages") {
      if (!value.is_array()) throw ConfigError("config: '" + here + "' must be an array");
      for (const auto& lang : value) {
        if (!lang.is_object()) throw ConfigError("config: language entries must be objects");
        for (const auto& [lk, lv] : lang.items()) {
          if (lk != "name" && lk != "order" && lk != "offset") {
            throw ConfigError("config: unknown key '" + here + "[]." + lk + "'");
          }
        }
      }
    } else if (known[key].is_object()) {
      reject_unknown(value, known[key], here);
    }
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
  }
}

json section(const json& doc, const char* key) {
  return doc.contains(key) ? doc.at(key) : json::object();
}

}  // namespace

json to_json(const RunConfig& c) {
  json doc;
  if (c.seed) doc["seed"] = *c.seed;
  doc["model"] = {{"vocab_size", c.model.vocab_size}, {"d_model", c.model.d_model},
                  {"n_layers", c.model.n_layers},     {"n_heads", c.model.n_heads},
                  {"d_ff", c.model.d_ff},             {"max_seq_len", c.model.max_seq_len}};
  const auto& t = c.train;
  doc["train"] = {{"align_layer", t.align_layer},
                  {"pooling", std::string(num::pooling_name(t.pooling))},
                  {"tau", t.tau},
                  {"alpha", t.alpha},
                  {"p_src", t.p_src},
                  {"lr", t.lr},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"eps", t.eps},
                  {"weight_decay", t.weight_decay},
                  {"steps", t.steps},
                  {"mcl_batch", t.mcl_batch},
                  {"cif_batch", t.cif_batch},
                  {"eval_every", t.eval_every},
                  {"symmetric_mcl", t.symmetric_mcl},
                  {"precision", t.precision}};
  const auto& k = c.corpus;
  json tasks = json::array();
  for (auto task : k.tasks) tasks.push_back(std::string(corpus::task_name(task)));
  doc["corpus"] = {{"family",
                    {{"concept_count", k.family.concept_count},
                     {"languages", languages_to_json(k.family.languages)},
                     {"min_len", k.family.min_len},
                     {"max_len", k.family.max_len}}},
                   {"policy", policy_name(k.policy)},
                   {"pivot", k.pivot},
                   {"n_pairs_per_combination", k.n_pairs_per_combination},
                   {"n_cif", k.n_cif},
                   {"tasks", tasks},
                   {"n_heldout", k.n_heldout},
                   {"heldout_src", k.heldout_src},
                   {"heldout_tgt", k.heldout_tgt},
                   {"n_heldout_cif", k.n_heldout_cif}};
  const auto& e = c.eval;
  doc["eval"] = {{"task", e.task},
                 {"n", e.n},
                 {"k_shot", e.k_shot},
                 {"max_new_tokens", e.max_new_tokens},
                 {"src", e.src},
                 {"tgt", e.tgt},
                 {"translation_task", std::string(corpus::task_name(e.translation_task))}};
  if (e.layer) doc["eval"]["layer"] = *e.layer;
  if (e.pooling) doc["eval"]["pooling"] = std::string(num::pooling_name(*e.pooling));
  doc["paths"] = {{"corpus_dir", c.paths.corpus_dir}, {"run_dir", c.paths.run_dir}};
  return doc;
}

RunConfig run_config_from_json(const json& doc) {
  reject_unknown(doc, schema(), "");
  RunConfig c;
  if (doc.contains("seed")) {
    const auto& s = doc.at("seed");
    if (!s.is_number_unsigned()) {
      throw ConfigError("config: 'seed' must be a non-negative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }

  const json m = section(doc, "model");
  read(m, "vocab_size", c.model.vocab_size, "model");
  read(m, "d_model", c.model.d_model, "model");
  read(m, "n_layers", c.model.n_layers, "model");
  read(m, "n_heads", c.model.n_heads, "model");
  read(m, "d_ff", c.model.d_ff, "model");
  read(m, "max_seq_len", c.model.max_seq_len, "model");

  const json t = section(doc, "train");
  auto& tc = c.train;
  read(t, "align_layer", tc.align_layer, "train");
  std::string pooling(num::pooling_name(tc.pooling));
  read(t, "pooling", pooling, "train");
  tc.pooling = num::parse_pooling(pooling);
  read(t, "tau", tc.tau, "train");
  read(t, "alpha", tc.alpha, "train");
  read(t, "p_src", tc.p_src, "train");
  read(t, "lr", tc.lr, "train");
  read(t, "beta1", tc.beta1, "train");
  read(t, "beta2", tc.beta2, "train");
  read(t, "eps", tc.eps, "train");
  read(t, "weight_decay", tc.weight_decay, "train");
  read(t, "steps", tc.steps, "train");
  read(t, "mcl_batch", tc.mcl_batch, "train");
  read(t, "cif_batch", tc.cif_batch, "train");
  read(t, "eval_every", tc.eval_every, "train");
  read(t, "symmetric_mcl", tc.symmetric_mcl, "train");
  read(t, "precision", tc.precision, "train");
  if (tc.precision != "f32" && tc.precision != "f64") {
    throw ConfigError("config: train.precision must be f32 or f64, got '" + tc.precision + "'");
  }

  const json k = section(doc, "corpus");
  auto& kc = c.corpus;
  const json f = section(k, "family");
  read(f, "concept_count", kc.family.concept_count, "corpus.family");
  read(f, "min_len", kc.family.min_len, "corpus.family");
  read(f, "max_len", kc.family.max_len, "corpus.family");
  if (f.contains("languages")) {
    kc.family.languages.clear();
    for (const auto& l : f.at("languages")) {
      corpus::LanguageConfig lc;
      if (!l.contains("name")) throw ConfigError("config: every language needs a name");
      read(l, "name", lc.name, "corpus.family.languages[]");
      std::string order(corpus::order_name(lc.order));
      read(l, "order", order, "corpus.family.languages[]");
      lc.order = corpus::parse_order(order);
      if (l.contains("offset")) {
        std::int32_t off = 0;
        read(l, "offset", off, "corpus.family.languages[]");
        lc.offset = off;
      }
      kc.family.languages.push_back(std::move(lc));
    }
  }
  std::string policy = policy_name(kc.policy);
  read(k, "policy", policy, "corpus");
  kc.policy = parse_policy(policy);
  read(k, "pivot", kc.pivot, "corpus");
  read(k, "n_pairs_per_combination", kc.n_pairs_per_combination, "corpus");
  read(k, "n_cif", kc.n_cif, "corpus");
  if (k.contains("tasks")) {
    std::vector<std::string> names;
    read(k, "tasks", names, "corpus");
    kc.tasks.clear();
    for (const auto& n : names) kc.tasks.push_back(corpus::parse_task(n));
  }
  read(k, "n_heldout", kc.n_heldout, "corpus");
  read(k, "heldout_src", kc.heldout_src, "corpus");
  read(k, "heldout_tgt", kc.heldout_tgt, "corpus");
  read(k, "n_heldout_cif", kc.n_heldout_cif, "corpus");

  const json e = section(doc, "eval");
  auto& ec = c.eval;
  read(e, "task", ec.task, "eval");
  read(e, "n", ec.n, "eval");
  read(e, "k_shot", ec.k_shot, "eval");
  read(e, "max_new_tokens", ec.max_new_tokens, "eval");
  read(e, "src", ec.src, "eval");
  read(e, "tgt", ec.tgt, "eval");
  std::string ttask(corpus::task_name(ec.translation_task));
  read(e, "translation_task", ttask, "eval");
  ec.translation_task = corpus::parse_task(ttask);
  if (e.contains("layer")) {
    int layer = 0;
    read(e, "layer", layer, "eval");
    ec.layer = layer;
  }
  if (e.contains("pooling")) {
    std::string p;
    read(e, "pooling", p, "eval");
    ec.pooling = num::parse_pooling(p);
  }

  const json p = section(doc, "paths");
  read(p, "corpus_dir", c.paths.corpus_dir, "paths");
  read(p, "run_dir", c.paths.run_dir, "paths");
  return c;
}

std::string dump_canonical(const json& doc) { return doc.dump(2) + "\n"; }

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  const std::string text = dump_canonical(to_json(config));
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
  (*node)[parts.back()] = std::move(value);
}

RunConfig load_with_overrides(const std::optional<std::filesystem::path>& path,
                              const std::vector<std::string>& overrides) {
  json doc = path ? to_json(load_run_config(*path)) : to_json(RunConfig{});
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

std::uint64_t resolve_seed(const RunConfig& config, std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (config.seed) return *config.seed;
  if (const char* env = std::getenv("AFP_SEED"); env && *env) {
    try {
      if (!std::isdigit(static_cast<unsigned char>(env[0]))) throw std::invalid_argument("not a digit");
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("AFP_SEED is not a non-negative integer: '") + env + "'");
    }
  }
  return 0;
}

ModelConfig resolve_model(const RunConfig& config, const corpus::TwinLanguageFamily& family) {
  ModelConfig m = config.model;
  if (m.vocab_size == 0) m.vocab_size = family.vocab_size();
  if (m.vocab_size < family.vocab_size()) {
    throw ConfigError("model.vocab_size " + std::to_string(m.vocab_size) +
                      " is smaller than the corpus vocabulary " +
                      std::to_string(family.vocab_size()));
  }
  m.validate();
  return m;
}

std::string config_digest(const RunConfig& config) {
  const std::string text = dump_canonical(to_json(config));
  return digest_hex(std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace afp
