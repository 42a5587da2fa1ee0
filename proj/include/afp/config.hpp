#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "afp/align.hpp"
#include "afp/corpus.hpp"
#include "afp/model.hpp"
#include "json.hpp"

namespace afp {

struct EvalConfig {
  /// classification | retrieval | translation | metrics
  std::string task = "translation";
  int n = 128;
  int k_shot = 0;
  int max_new_tokens = 12;
  std::string src = "L0";
  std::string tgt = "L1";
  corpus::Task translation_task = corpus::Task::copy;
  /// Layer and pooling for retrieval/metrics; unset follows train.
  std::optional<int> layer;
  std::optional<num::Pooling> pooling;
};

struct PathsConfig {
  std::string corpus_dir = "corpus";
  std::string run_dir = "run";
};

/// Everything a command needs. model.vocab_size == 0 means "derive from the
/// corpus family".
struct RunConfig {
  std::optional<std::uint64_t> seed;
  ModelConfig model{0, 64, 4, 4, 256, 32};
  align::TrainConfig train;
  corpus::CorpusConfig corpus;
  EvalConfig eval;
  PathsConfig paths;
};

nlohmann::json to_json(const RunConfig& config);
/// Rejects unknown keys anywhere in the document; absent keys keep defaults.
RunConfig run_config_from_json(const nlohmann::json& doc);

/// Canonical text form: sorted keys, two-space indent, trailing newline.
std::string dump_canonical(const nlohmann::json& doc);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

/// Applies a `dotted.key=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig load_with_overrides(const std::optional<std::filesystem::path>& path,
                              const std::vector<std::string>& overrides);

/// Seed precedence: explicit flag, then the config key, then AFP_SEED, then 0.
std::uint64_t resolve_seed(const RunConfig& config, std::optional<std::uint64_t> flag);

/// Fills model.vocab_size from the family when it is 0 and checks the rest.
ModelConfig resolve_model(const RunConfig& config, const corpus::TwinLanguageFamily& family);

std::string config_digest(const RunConfig& config);

}  // namespace afp
