#include "afp/io.hpp"

#include <fstream>
#include <sstream>

#include "afp/checkpoint.hpp"
#include "afp/error.hpp"

namespace afp::io {

namespace {

json family_config_json(const corpus::FamilyConfig& c) {
  json langs = json::array();
  for (const auto& l : c.languages) {
    json o{{"name", l.name}, {"order", std::string(corpus::order_name(l.order))}};
    if (l.offset) o["offset"] = *l.offset;
    langs.push_back(std::move(o));
  }
  return {{"concept_count", c.concept_count},
          {"languages", langs},
          {"min_len", c.min_len},
          {"max_len", c.max_len}};
}

template <class T>
T field(const json& rec, const char* key, const std::string& what) {
  if (!rec.is_object() || !rec.contains(key)) {
    throw DataError(what + ": missing field '" + key + "'");
  }
  try {
    return rec.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(what + ": bad field '" + key + "': " + e.what());
  }
}

void check_tokens(const corpus::TwinLanguageFamily& family, const corpus::Tokens& toks,
                  const std::string& what) {
  for (auto t : toks) {
    if (t < 0 || t >= family.vocab_size()) {
      throw DataError(what + ": token " + std::to_string(t) + " outside the family vocabulary");
    }
  }
}

}  // namespace

json family_to_json(const corpus::TwinLanguageFamily& family) {
  json perms = json::object();
  json offsets = json::object();
  for (int l = 0; l < family.language_count(); ++l) {
    const auto& spec = family.language(l);
    perms[spec.name] = spec.concept_to_local;
    offsets[spec.name] = spec.offset;
  }
  return {{"seed", family.seed()},
          {"config", family_config_json(family.config())},
          {"vocab_size", family.vocab_size()},
          {"offsets", offsets},
          {"permutations", perms}};
}

corpus::TwinLanguageFamily family_from_json(const json& doc) {
  corpus::FamilyConfig cfg;
  const json c = field<json>(doc, "config", "family.json");
  cfg.concept_count = field<int>(c, "concept_count", "family.json config");
  cfg.min_len = field<int>(c, "min_len", "family.json config");
  cfg.max_len = field<int>(c, "max_len", "family.json config");
  cfg.languages.clear();
  for (const auto& l : field<json>(c, "languages", "family.json config")) {
    corpus::LanguageConfig lc;
    lc.name = field<std::string>(l, "name", "family.json language");
    lc.order = corpus::parse_order(field<std::string>(l, "order", "family.json language"));
    if (l.contains("offset")) lc.offset = field<std::int32_t>(l, "offset", "family.json language");
    cfg.languages.push_back(std::move(lc));
  }
  auto family = corpus::make_family(cfg, field<std::uint64_t>(doc, "seed", "family.json"));
  const json perms = field<json>(doc, "permutations", "family.json");
  for (int l = 0; l < family.language_count(); ++l) {
    const auto& spec = family.language(l);
    if (!perms.contains(spec.name) ||
        perms.at(spec.name).get<std::vector<std::int32_t>>() != spec.concept_to_local) {
      throw DataError("family.json: stored permutation for " + spec.name +
                      " does not match the one regenerated from its seed");
    }
  }
  return family;
}

json pair_to_json(const corpus::TranslationPair& p, const corpus::TwinLanguageFamily& family) {
  return {{"src", {{"lang", family.language(p.src_lang).name}, {"tokens", p.src}}},
          {"tgt", {{"lang", family.language(p.tgt_lang).name}, {"tokens", p.tgt}}}};
}

corpus::TranslationPair pair_from_json(const json& rec, const corpus::TwinLanguageFamily& family) {
  corpus::TranslationPair p;
  const json src = field<json>(rec, "src", "pair record");
  const json tgt = field<json>(rec, "tgt", "pair record");
  p.src_lang = family.language_id(field<std::string>(src, "lang", "pair src"));
  p.tgt_lang = family.language_id(field<std::string>(tgt, "lang", "pair tgt"));
  p.src = field<corpus::Tokens>(src, "tokens", "pair src");
  p.tgt = field<corpus::Tokens>(tgt, "tokens", "pair tgt");
  check_tokens(family, p.src, "pair src");
  check_tokens(family, p.tgt, "pair tgt");
  return p;
}

json cif_to_json(const corpus::CifSample& s, const corpus::TwinLanguageFamily& family) {
  std::vector<bool> mask(s.loss_mask.begin(), s.loss_mask.end());
  return {{"source_lang", family.language(s.source_lang).name},
          {"target_lang", family.language(s.target_lang).name},
          {"task", std::string(corpus::task_name(s.task))},
          {"input_tokens", s.tokens},
          {"loss_mask", mask}};
}

corpus::CifSample cif_from_json(const json& rec, const corpus::TwinLanguageFamily& family) {
  corpus::CifSample s;
  s.source_lang = family.language_id(field<std::string>(rec, "source_lang", "cif record"));
  s.target_lang = family.language_id(field<std::string>(rec, "target_lang", "cif record"));
  s.task = rec.contains("task") ? corpus::parse_task(field<std::string>(rec, "task", "cif record"))
                                : corpus::Task::copy;
  s.tokens = field<corpus::Tokens>(rec, "input_tokens", "cif record");
  const auto mask = field<std::vector<bool>>(rec, "loss_mask", "cif record");
  if (mask.size() != s.tokens.size()) {
    throw DataError("cif record: loss_mask has " + std::to_string(mask.size()) + " entries for " +
                    std::to_string(s.tokens.size()) + " tokens");
  }
  s.loss_mask.assign(mask.begin(), mask.end());
  check_tokens(family, s.tokens, "cif record");
  return s;
}

std::string to_jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& dir, const corpus::CorpusData& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto& fam = data.family;
  write_text(dir / "family.json", family_to_json(fam).dump(2) + "\n");
  auto pairs = [&](const std::vector<corpus::TranslationPair>& ps) {
    std::vector<json> recs;
    recs.reserve(ps.size());
    for (const auto& p : ps) recs.push_back(pair_to_json(p, fam));
    return to_jsonl(recs);
  };
  auto cifs = [&](const std::vector<corpus::CifSample>& ss) {
    std::vector<json> recs;
    recs.reserve(ss.size());
    for (const auto& s : ss) recs.push_back(cif_to_json(s, fam));
    return to_jsonl(recs);
  };
  write_text(dir / "pairs.jsonl", pairs(data.pairs));
  write_text(dir / "cif.jsonl", cifs(data.cif));
  write_text(dir / "heldout.jsonl", pairs(data.heldout));
  write_text(dir / "heldout_cif.jsonl", cifs(data.heldout_cif));
}

corpus::CorpusData read_corpus(const std::filesystem::path& dir) {
  corpus::CorpusData data;
  json fam;
  try {
    fam = json::parse(read_text(dir / "family.json"));
  } catch (const json::parse_error& e) {
    throw DataError((dir / "family.json").string() + ": " + e.what());
  }
  data.family = family_from_json(fam);
  for (const auto& r : read_jsonl(dir / "pairs.jsonl")) data.pairs.push_back(pair_from_json(r, data.family));
  for (const auto& r : read_jsonl(dir / "cif.jsonl")) data.cif.push_back(cif_from_json(r, data.family));
  for (const auto& r : read_jsonl(dir / "heldout.jsonl")) data.heldout.push_back(pair_from_json(r, data.family));
  if (std::filesystem::exists(dir / "heldout_cif.jsonl")) {
    for (const auto& r : read_jsonl(dir / "heldout_cif.jsonl")) {
      data.heldout_cif.push_back(cif_from_json(r, data.family));
    }
  }
  return data;
}

json report_to_json(const align::AlignReport& r) {
  json j{{"step", r.step},
         {"l_align", r.l_align},
         {"l_uniform", r.l_uniform},
         {"retrieval_acc_at_1", r.retrieval_acc_at_1},
         {"mcl_loss", r.mcl_loss},
         {"cif_loss", r.cif_loss},
         {"afp_loss", r.afp_loss}};
  j["scores"] = json::object();
  for (const auto& [k, v] : r.scores) j["scores"][k] = v;
  return j;
}

json eval_result_to_json(const eval::EvalResult& r, const std::string& config_digest) {
  json j{{"task", r.task}, {"config_digest", config_digest}, {"n", r.n}};
  j["accuracy"] = r.accuracy ? json(*r.accuracy) : json(nullptr);
  j["scores"] = json::object();
  for (const auto& [k, v] : r.scores) j["scores"][k] = v;
  json examples = json::array();
  for (const auto& c : r.classification) {
    examples.push_back({{"label", c.label}, {"chosen", c.chosen}, {"log_likelihoods", c.log_likelihoods}});
  }
  for (const auto& t : r.translation) {
    examples.push_back({{"source", t.source},
                        {"hypothesis", t.hypothesis},
                        {"reference", t.reference},
                        {"exact", t.exact}});
  }
  j["examples"] = examples;
  return j;
}

json embedding_to_json(const EmbeddingRecord& r) {
  return {{"id", r.id},
          {"lang", r.lang},
          {"layer", r.layer},
          {"pooling", std::string(num::pooling_name(r.pooling))},
          {"vector", r.vector},
          {"pca", {r.pca[0], r.pca[1]}}};
}

}  // namespace afp::io
