#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "afp/align.hpp"
#include "afp/corpus.hpp"
#include "afp/eval.hpp"
#include "afp/repr.hpp"
#include "json.hpp"

namespace afp::io {

using nlohmann::json;

json family_to_json(const corpus::TwinLanguageFamily& family);
/// Rebuilds the family from its seed and config and checks the stored
/// permutations against it.
corpus::TwinLanguageFamily family_from_json(const json& doc);

json pair_to_json(const corpus::TranslationPair& pair, const corpus::TwinLanguageFamily& family);
corpus::TranslationPair pair_from_json(const json& rec, const corpus::TwinLanguageFamily& family);
json cif_to_json(const corpus::CifSample& sample, const corpus::TwinLanguageFamily& family);
corpus::CifSample cif_from_json(const json& rec, const corpus::TwinLanguageFamily& family);

/// family.json, pairs.jsonl, cif.jsonl, heldout.jsonl, heldout_cif.jsonl.
void write_corpus(const std::filesystem::path& dir, const corpus::CorpusData& data);
corpus::CorpusData read_corpus(const std::filesystem::path& dir);

json report_to_json(const align::AlignReport& report);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
std::vector<json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<json>& records);

json eval_result_to_json(const eval::EvalResult& result, const std::string& config_digest);

struct EmbeddingRecord {
  std::size_t id = 0;
  std::string lang;
  int layer = 0;
  num::Pooling pooling = num::Pooling::mean;
  std::vector<double> vector;
  std::array<double, 2> pca{};
};

json embedding_to_json(const EmbeddingRecord& rec);

}  // namespace afp::io
