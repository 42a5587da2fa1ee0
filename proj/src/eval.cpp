#include "afp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace afp::eval {

template <class T>
num::Tensor<double> TransformerLM<T>::next_token_log_probs(std::span<const std::int32_t> tokens) const {
  if (tokens.empty()) throw UsageError("cannot score an empty sequence");
  TokenBatch b;
  b.batch = 1;
  b.seq = tokens.size();
  b.tokens.assign(tokens.begin(), tokens.end());
  b.pad_mask.assign(tokens.size(), 1);
  num::Graph<T> g;
  BoundParams bp = bind_const(g, params_);
  ForwardResult fr = forward(g, bp, params_.config, b);
  return log_softmax_rows(g.value(*fr.logits).template cast<double>());
}

template class TransformerLM<float>;
template class TransformerLM<double>;

num::Tensor<double> log_softmax_rows(const num::Tensor<double>& logits) {
  num::Tensor<double> out = logits;
  const std::size_t V = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double* row = out.data().data() + r * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < V; ++j) row[j] -= lse;
  }
  return out;
}

void Template::validate() const {
  if (k < 0) throw UsageError("template: k must be non-negative");
  if (verbalizer.size() < 2) throw UsageError("template: needs at least two verbalizer entries");
  std::set<Tokens> seen;
  for (const auto& v : verbalizer) {
    if (v.empty()) throw UsageError("template: empty verbalizer output");
    if (!seen.insert(v).second) throw UsageError("template: verbalizer outputs must be distinct");
  }
}

Tokens build_prompt(const Template& tpl, std::span<const LabeledExample> demos,
                    std::span<const std::int32_t> query_input, int max_seq_len) {
  tpl.validate();
  if (demos.size() != static_cast<std::size_t>(tpl.k)) {
    throw UsageError("build_prompt: template expects " + std::to_string(tpl.k) + " demos, got " +
                     std::to_string(demos.size()));
  }
  Tokens out;
  for (const auto& d : demos) {
    if (d.label < 0 || static_cast<std::size_t>(d.label) >= tpl.verbalizer.size()) {
      throw UsageError("build_prompt: demo label outside the verbalizer");
    }
    out.insert(out.end(), d.input.begin(), d.input.end());
    out.insert(out.end(), tpl.query_suffix.begin(), tpl.query_suffix.end());
    const auto& v = tpl.verbalizer[d.label];
    out.insert(out.end(), v.begin(), v.end());
    out.push_back(tpl.separator);
  }
  out.insert(out.end(), query_input.begin(), query_input.end());
  out.insert(out.end(), tpl.query_suffix.begin(), tpl.query_suffix.end());
  if (out.size() > static_cast<std::size_t>(max_seq_len)) {
    throw LengthError("prompt of " + std::to_string(out.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(max_seq_len));
  }
  return out;
}

CandidateScores score_candidates(const LanguageModel& lm, std::span<const std::int32_t> prompt,
                                 std::span<const Tokens> candidates) {
  if (candidates.size() < 2) throw UsageError("score_candidates: needs at least 2 candidates");
  if (prompt.empty()) throw UsageError("score_candidates: empty prompt");
  CandidateScores out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Tokens& cand = candidates[c];
    if (cand.empty()) throw UsageError("score_candidates: empty candidate");
    Tokens seq(prompt.begin(), prompt.end());
    seq.insert(seq.end(), cand.begin(), cand.end());
    if (seq.size() > static_cast<std::size_t>(lm.max_seq_len())) {
      throw LengthError("prompt plus candidate (" + std::to_string(seq.size()) +
                        " tokens) exceeds max_seq_len " + std::to_string(lm.max_seq_len()));
    }
    // The model never needs to predict past the last candidate token.
    const num::Tensor<double> lp =
        lm.next_token_log_probs(std::span<const std::int32_t>(seq.data(), seq.size() - 1));
    double ll = 0;
    for (std::size_t j = 0; j < cand.size(); ++j) {
      const std::size_t pos = prompt.size() - 1 + j;
      ll += lp.at(pos, static_cast<std::size_t>(cand[j]));
    }
    out.log_likelihoods.push_back(ll);
    if (ll > best) {
      best = ll;
      out.chosen = c;
    }
  }
  return out;
}

ClassificationTask same_concept_task(const corpus::TwinLanguageFamily& family, int lang_a, int lang_b) {
  family.language(lang_a);
  family.language(lang_b);
  ClassificationTask t;
  t.name = "same_concept";
  t.n_labels = 2;
  t.sample = [&family, lang_a, lang_b](Pcg32& rng) {
    LabeledExample ex;
    const auto concepts = family.sample_concepts(rng);
    ex.label = static_cast<int>(rng.below(2));
    auto other = concepts;
    if (ex.label == 0) {
      while (other == concepts) other = family.sample_concepts(rng);
    }
    ex.input = family.render(concepts, lang_a);
    const Tokens second = family.render(other, lang_b);
    ex.input.insert(ex.input.end(), second.begin(), second.end());
    return ex;
  };
  return t;
}

EvalResult classification_eval(const LanguageModel& lm, const ClassificationTask& task,
                               const Template& tpl, int n, std::uint64_t seed) {
  tpl.validate();
  if (static_cast<int>(tpl.verbalizer.size()) != task.n_labels) {
    throw UsageError("template verbalizer does not cover the task labels");
  }
  EvalResult res;
  res.task = task.name;
  res.n = static_cast<std::size_t>(std::max(n, 0));
  if (n <= 0) return res;
  Pcg32 base = make_stream(seed, "classification");
  std::size_t correct = 0;
  for (int i = 0; i < n; ++i) {
    Pcg32 qrng = base.derive("query", static_cast<std::uint64_t>(i));
    const LabeledExample query = task.sample(qrng);
    Pcg32 drng = base.derive("demos", static_cast<std::uint64_t>(i));
    std::vector<LabeledExample> demos;
    while (static_cast<int>(demos.size()) < tpl.k) {
      LabeledExample d = task.sample(drng);
      if (d.input != query.input) demos.push_back(std::move(d));
    }
    const Tokens prompt = build_prompt(tpl, demos, query.input, lm.max_seq_len());
    const CandidateScores s = score_candidates(lm, prompt, tpl.verbalizer);
    correct += static_cast<int>(s.chosen) == query.label ? 1 : 0;
    res.classification.push_back({query.label, s.chosen, s.log_likelihoods});
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  res.scores["accuracy"] = *res.accuracy;
  return res;
}

Tokens translation_prompt(const corpus::TwinLanguageFamily& family, std::span<const Tokens> demo_sources,
                          std::span<const std::int32_t> source, int src_lang, int tgt_lang,
                          corpus::Task task) {
  Tokens out{corpus::special::BOS};
  for (const auto& d : demo_sources) {
    const corpus::CifSample s = corpus::build_cif_sample(family, task, d, src_lang, tgt_lang);
    out.insert(out.end(), s.tokens.begin() + 1, s.tokens.end());
  }
  const corpus::CifSample q = corpus::build_cif_sample(family, task, source, src_lang, tgt_lang);
  const std::size_t sep = q.sep_index();
  out.insert(out.end(), q.tokens.begin() + 1, q.tokens.begin() + static_cast<std::ptrdiff_t>(sep + 1));
  return out;
}

Tokens greedy_decode(const LanguageModel& lm, Tokens prompt, int max_new_tokens) {
  Tokens generated;
  for (int step = 0; step < max_new_tokens; ++step) {
    if (prompt.size() >= static_cast<std::size_t>(lm.max_seq_len())) break;
    const num::Tensor<double> lp = lm.next_token_log_probs(prompt);
    const std::size_t V = lp.cols();
    const double* last = lp.data().data() + (lp.rows() - 1) * V;
    const auto next = static_cast<std::int32_t>(std::max_element(last, last + V) - last);
    if (next == corpus::special::EOS || next == corpus::special::SEP) break;
    generated.push_back(next);
    prompt.push_back(next);
  }
  return generated;
}

EvalResult translation_eval(const LanguageModel& lm, const corpus::TwinLanguageFamily& family,
                            const TranslationEvalConfig& c) {
  family.language(c.src_lang);
  family.language(c.tgt_lang);
  EvalResult res;
  res.task = "translation";
  const int n = c.sources.empty() ? c.n : std::min(c.n, static_cast<int>(c.sources.size()));
  res.n = static_cast<std::size_t>(std::max(n, 0));
  if (n <= 0) return res;
  Pcg32 base = make_stream(c.seed, "translation");
  std::vector<Tokens> hyps, refs;
  std::size_t exact = 0;
  for (int i = 0; i < n; ++i) {
    Pcg32 r = base.derive("example", static_cast<std::uint64_t>(i));
    const Tokens src = c.sources.empty() ? corpus::sample_sentence(family, c.src_lang, r) : c.sources[i];
    std::vector<Tokens> demos;
    while (static_cast<int>(demos.size()) < c.k_shot) {
      Tokens d = corpus::sample_sentence(family, c.src_lang, r);
      if (d != src) demos.push_back(std::move(d));
    }
    const Tokens prompt = translation_prompt(family, demos, src, c.src_lang, c.tgt_lang, c.task);
    if (prompt.size() >= static_cast<std::size_t>(lm.max_seq_len())) {
      throw LengthError("translation prompt of " + std::to_string(prompt.size()) +
                        " tokens leaves no room to generate");
    }
    TranslationRecord rec;
    rec.source = src;
    rec.reference = corpus::translate(family, corpus::apply_task(c.task, src), c.src_lang, c.tgt_lang);
    rec.hypothesis = greedy_decode(lm, prompt, c.max_new_tokens);
    rec.exact = rec.hypothesis == rec.reference;
    exact += rec.exact ? 1 : 0;
    hyps.push_back(rec.hypothesis);
    refs.push_back(rec.reference);
    res.translation.push_back(std::move(rec));
  }
  const double em = static_cast<double>(exact) / static_cast<double>(n);
  res.accuracy = em;
  res.scores["exact_match"] = em;
  res.scores["bleu"] = bleu(hyps, refs);
  return res;
}

std::vector<Tokens> held_out_sources(const corpus::CorpusData& data, int src_lang, int tgt_lang) {
  std::vector<Tokens> out;
  for (const auto& p : data.heldout) {
    if (p.src_lang == src_lang && p.tgt_lang == tgt_lang) {
      out.push_back(p.src);
    } else if (p.src_lang == tgt_lang && p.tgt_lang == src_lang) {
      out.push_back(p.tgt);
    }
  }
  return out;
}

namespace {

using Gram = std::vector<std::int32_t>;

std::map<Gram, std::size_t> ngram_counts(const Tokens& s, std::size_t n) {
  std::map<Gram, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Gram(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace

double bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references) {
  if (hypotheses.empty()) throw UsageError("bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw UsageError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                     std::to_string(references.size()) + " references");
  }
  std::size_t shortest = std::numeric_limits<std::size_t>::max();
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    shortest = std::min(shortest, references[i].size());
    hyp_len += hypotheses[i].size();
    ref_len += references[i].size();
  }
  const std::size_t order = std::min<std::size_t>(4, shortest);
  if (order == 0 || hyp_len == 0) return 0.0;
  double log_sum = 0;
  for (std::size_t n = 1; n <= order; ++n) {
    std::size_t matched = 0, total = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      const auto h = ngram_counts(hypotheses[i], n);
      const auto r = ngram_counts(references[i], n);
      for (const auto& [gram, count] : h) {
        total += count;
        auto it = r.find(gram);
        if (it != r.end()) matched += std::min(count, it->second);
      }
    }
    if (matched == 0 || total == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
  }
  const double bp = hyp_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                        : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(order));
}

}  // namespace afp::eval
