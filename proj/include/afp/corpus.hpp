#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afp/model.hpp"
#include "afp/rng.hpp"

namespace afp::corpus {

using Tokens = std::vector<std::int32_t>;

enum class OrderTransform { identity, reverse };
enum class Task { copy, reverse };

std::string_view order_name(OrderTransform o);
OrderTransform parse_order(std::string_view s);
std::string_view task_name(Task t);
Task parse_task(std::string_view s);

/// Reserved token ids. Language tags follow at kLangTagBase + lang.
namespace special {
inline constexpr std::int32_t PAD = 0;
inline constexpr std::int32_t BOS = 1;
inline constexpr std::int32_t SEP = 2;
inline constexpr std::int32_t EOS = 3;
inline constexpr std::int32_t QUERY = 4;
inline constexpr std::int32_t YES = 5;
inline constexpr std::int32_t NO = 6;
inline constexpr std::int32_t TASK_COPY = 7;
inline constexpr std::int32_t TASK_REVERSE = 8;
inline constexpr std::int32_t kLangTagBase = 9;
}  // namespace special

struct LanguageConfig {
  std::string name;
  OrderTransform order = OrderTransform::identity;
  /// Explicit first token id; by default languages are packed after the
  /// reserved ids.
  std::optional<std::int32_t> offset;
};

struct FamilyConfig {
  int concept_count = 128;
  std::vector<LanguageConfig> languages = {{"L0", OrderTransform::identity, {}}, {"L1", OrderTransform::identity, {}}};
  int min_len = 3;
  int max_len = 8;
};

struct LanguageSpec {
  int id = 0;
  std::string name;
  std::int32_t offset = 0;
  OrderTransform order = OrderTransform::identity;
  std::vector<std::int32_t> concept_to_local;  // bijection on [0, concept_count)
  std::vector<std::int32_t> local_to_concept;
};

/// Languages sharing one concept process. Language l writes concept c as
/// token offset_l + perm_l[c] and may reverse word order; translation
/// between any two languages is therefore exact.
class TwinLanguageFamily {
 public:
  TwinLanguageFamily() = default;

  std::uint64_t seed() const { return seed_; }
  const FamilyConfig& config() const { return config_; }
  int concept_count() const { return config_.concept_count; }
  int language_count() const { return static_cast<int>(languages_.size()); }
  const LanguageSpec& language(int lang) const;
  int language_id(std::string_view name) const;
  int min_len() const { return config_.min_len; }
  int max_len() const { return config_.max_len; }

  const std::vector<double>& start_distribution() const { return start_; }
  /// Row-major [concept_count, concept_count].
  const std::vector<double>& transition() const { return transition_; }

  /// One past the largest token id in use.
  std::int32_t vocab_size() const;
  std::int32_t lang_tag(int lang) const { return special::kLangTagBase + lang; }
  static std::int32_t task_tag(Task t);
  /// Language owning `token`, or -1 for reserved/unknown ids.
  int language_of(std::int32_t token) const;

  std::vector<std::int32_t> sample_concepts(Pcg32& rng) const;
  Tokens render(std::span<const std::int32_t> concepts, int lang) const;
  /// Inverse of render; throws DataError naming the first foreign token.
  std::vector<std::int32_t> parse(std::span<const std::int32_t> tokens, int lang) const;

  friend TwinLanguageFamily make_family(const FamilyConfig& config, std::uint64_t seed);

 private:
  std::uint64_t seed_ = 0;
  FamilyConfig config_;
  std::vector<LanguageSpec> languages_;
  std::vector<double> start_;
  std::vector<double> transition_;
};

TwinLanguageFamily make_family(const FamilyConfig& config, std::uint64_t seed);

Tokens sample_sentence(const TwinLanguageFamily& family, int lang, Pcg32& rng);

/// Exact translator src_lang -> tgt_lang.
Tokens translate(const TwinLanguageFamily& family, std::span<const std::int32_t> sentence,
                 int src_lang, int tgt_lang);

struct TranslationPair {
  int src_lang = 0;
  int tgt_lang = 1;
  Tokens src;
  Tokens tgt;
};

struct AlignmentPolicy {
  enum class Kind { pivot, pairwise } kind = Kind::pivot;
  int pivot_lang = 0;

  static AlignmentPolicy pivot(int lang) { return {Kind::pivot, lang}; }
  static AlignmentPolicy pairwise() { return {Kind::pairwise, 0}; }
};

/// Language pairs covered by a policy, in generation order.
std::vector<std::pair<int, int>> language_combinations(const TwinLanguageFamily& family,
                                                       const AlignmentPolicy& policy);

std::vector<TranslationPair> make_translation_pairs(const TwinLanguageFamily& family,
                                                    const AlignmentPolicy& policy,
                                                    int n_per_combination, const Pcg32& rng);

/// BOS TASK context LANGTAG(target) SEP response EOS, with the loss mask on
/// the positions that predict response tokens and EOS.
struct CifSample {
  Tokens tokens;
  std::vector<std::uint8_t> loss_mask;
  int source_lang = 0;
  int target_lang = 0;
  Task task = Task::copy;

  /// Index of the SEP token.
  std::size_t sep_index() const;
  /// Response tokens recovered from the loss mask.
  Tokens response() const;
  Tokens context() const;
};

Tokens apply_task(Task task, std::span<const std::int32_t> context);

CifSample make_cif_sample(const TwinLanguageFamily& family, Task task, int src_lang, double p_src,
                          Pcg32& rng);

/// Assembles a CIF sample for a known target language (used by evaluation
/// prompts and the instruction-tuning baseline).
CifSample build_cif_sample(const TwinLanguageFamily& family, Task task,
                           std::span<const std::int32_t> context, int src_lang, int tgt_lang);

/// Right-padded batch. loss_masks may be empty (all false).
TokenBatch pad_batch(std::span<const Tokens* const> seqs,
                     std::span<const std::vector<std::uint8_t>* const> loss_masks,
                     std::int32_t pad_token = special::PAD);
TokenBatch pad_batch(const std::vector<Tokens>& seqs, std::int32_t pad_token = special::PAD);

/// Deterministic epoch-wise shuffled index batches. Each epoch visits every
/// index exactly once; the shuffle of epoch e depends only on (seed, e).
class BatchIterator {
 public:
  BatchIterator(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                bool drop_last = false);

  std::vector<std::size_t> next();
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const;

 private:
  void reshuffle();

  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  bool drop_last_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

/// All batches of one epoch, padded.
std::vector<TokenBatch> epoch_batches(std::span<const CifSample> dataset, std::size_t batch_size,
                                      std::uint64_t seed, std::size_t epoch = 0,
                                      std::int32_t pad_token = special::PAD);

TokenBatch cif_batch(std::span<const CifSample> dataset, std::span<const std::size_t> indices);
TokenBatch pair_side_batch(std::span<const TranslationPair> pairs,
                           std::span<const std::size_t> indices, bool target_side);

/// Counts for the sweep data audit.
struct DataAudit {
  std::size_t n_pairs = 0;
  std::size_t n_cif = 0;
  std::size_t language_combinations = 0;
  double target_eq_source_fraction = 0;
};

DataAudit audit(std::span<const TranslationPair> pairs, std::span<const CifSample> cif);

struct CorpusConfig {
  FamilyConfig family;
  AlignmentPolicy::Kind policy = AlignmentPolicy::Kind::pivot;
  std::string pivot = "L0";
  int n_pairs_per_combination = 4096;
  int n_cif = 8192;
  std::vector<Task> tasks = {Task::copy, Task::reverse};
  int n_heldout = 128;
  std::string heldout_src = "L0";
  std::string heldout_tgt = "L1";
  int n_heldout_cif = 128;
};

struct CorpusData {
  TwinLanguageFamily family;
  std::vector<TranslationPair> pairs;
  std::vector<CifSample> cif;
  std::vector<TranslationPair> heldout;
  std::vector<CifSample> heldout_cif;
};

AlignmentPolicy resolve_policy(const TwinLanguageFamily& family, const CorpusConfig& config);

/// Generates every corpus split from independent streams of `seed`.
CorpusData generate_corpus(const CorpusConfig& config, double p_src, std::uint64_t seed);

}  // namespace afp::corpus
