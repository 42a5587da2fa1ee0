#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afp/corpus.hpp"
#include "afp/model.hpp"

namespace afp::eval {

using corpus::Tokens;

/// Anything that assigns next-token log-probabilities to a token sequence.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual int vocab_size() const = 0;
  virtual int max_seq_len() const = 0;
  /// Row t holds log P(next token | tokens[0..t]); shape [len, vocab].
  virtual num::Tensor<double> next_token_log_probs(std::span<const std::int32_t> tokens) const = 0;
};

template <class T>
class TransformerLM final : public LanguageModel {
 public:
  explicit TransformerLM(const ModelParams<T>& params) : params_(params) {}
  int vocab_size() const override { return params_.config.vocab_size; }
  int max_seq_len() const override { return params_.config.max_seq_len; }
  num::Tensor<double> next_token_log_probs(std::span<const std::int32_t> tokens) const override;

 private:
  const ModelParams<T>& params_;
};

/// Row-wise log-softmax in double precision.
num::Tensor<double> log_softmax_rows(const num::Tensor<double>& logits);

/// Prompt layout for candidate-choice tasks:
///   demo_i  = input_i ++ query_suffix ++ verbalizer[label_i]
///   prompt  = demo_1 SEP ... demo_k SEP input ++ query_suffix
struct Template {
  std::int32_t separator = corpus::special::SEP;
  Tokens query_suffix = {corpus::special::QUERY};
  std::vector<Tokens> verbalizer = {{corpus::special::NO}, {corpus::special::YES}};
  int k = 0;

  void validate() const;
};

struct LabeledExample {
  Tokens input;
  int label = 0;
};

Tokens build_prompt(const Template& tpl, std::span<const LabeledExample> demos,
                    std::span<const std::int32_t> query_input, int max_seq_len);

struct CandidateScores {
  std::size_t chosen = 0;
  std::vector<double> log_likelihoods;
};

/// Summed log-likelihood of each candidate continuation; argmax with ties
/// resolved toward the lowest index.
CandidateScores score_candidates(const LanguageModel& lm, std::span<const std::int32_t> prompt,
                                 std::span<const Tokens> candidates);

struct ClassificationTask {
  std::string name;
  int n_labels = 2;
  std::function<LabeledExample(Pcg32&)> sample;
};

/// Pair of sentences in two languages; label 1 when the second is the
/// translation of the first, 0 when it renders a different concept sequence.
ClassificationTask same_concept_task(const corpus::TwinLanguageFamily& family, int lang_a,
                                     int lang_b);

struct ClassificationRecord {
  int label = 0;
  std::size_t chosen = 0;
  std::vector<double> log_likelihoods;
};

struct TranslationRecord {
  Tokens source;
  Tokens hypothesis;
  Tokens reference;
  bool exact = false;
};

struct EvalResult {
  std::string task;
  std::size_t n = 0;
  /// Unset when there was nothing to score.
  std::optional<double> accuracy;
  std::map<std::string, double> scores;
  std::vector<ClassificationRecord> classification;
  std::vector<TranslationRecord> translation;
};

EvalResult classification_eval(const LanguageModel& lm, const ClassificationTask& task,
                               const Template& tpl, int n, std::uint64_t seed);

struct TranslationEvalConfig {
  int src_lang = 0;
  int tgt_lang = 1;
  int n = 128;
  int max_new_tokens = 12;
  int k_shot = 0;
  corpus::Task task = corpus::Task::copy;
  std::uint64_t seed = 0;
  /// Sentences to translate, in src_lang. Empty means sample n fresh ones;
  /// otherwise the first min(n, size) are used.
  std::vector<Tokens> sources;
};

/// Prompt for translating `source`: BOS, then k demos (TASK src LANGTAG SEP
/// tgt EOS), then TASK source LANGTAG(tgt) SEP.
Tokens translation_prompt(const corpus::TwinLanguageFamily& family, std::span<const Tokens> demo_sources,
                          std::span<const std::int32_t> source, int src_lang, int tgt_lang,
                          corpus::Task task);

/// Greedy continuation until EOS/SEP or the token budget runs out.
Tokens greedy_decode(const LanguageModel& lm, Tokens prompt, int max_new_tokens);

EvalResult translation_eval(const LanguageModel& lm, const corpus::TwinLanguageFamily& family,
                            const TranslationEvalConfig& config);

/// Source sides of the held-out pairs when they run src_lang -> tgt_lang,
/// else empty. Held-out sentences never occur in training.
std::vector<Tokens> held_out_sources(const corpus::CorpusData& data, int src_lang, int tgt_lang);

/// Token-level corpus BLEU with n-gram order min(4, shortest reference),
/// clipped precisions, brevity penalty and no smoothing.
double bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references);

}  // namespace afp::eval
