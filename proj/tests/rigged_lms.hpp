#pragma once

#include <span>
#include <vector>

#include "afp/eval.hpp"
#include "oracles.hpp"

namespace rigged {

using namespace afp;
using namespace afp::eval;
namespace sp = afp::corpus::special;

// Base for hand-rigged models: subclasses write one row per position.
class RiggedLM : public LanguageModel {
 public:
  RiggedLM(int vocab, int max_len) : vocab_(vocab), max_len_(max_len) {}
  int vocab_size() const override { return vocab_; }
  int max_seq_len() const override { return max_len_; }
  num::Tensor<double> next_token_log_probs(std::span<const std::int32_t> tokens) const override {
    num::Tensor<double> out({tokens.size(), static_cast<std::size_t>(vocab_)});
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      std::vector<double> row(vocab_, 0.0);
      fill(tokens.subspan(0, t + 1), row);
      const auto ls = oracle::log_softmax(row);
      for (int v = 0; v < vocab_; ++v) out.at(t, v) = ls[v];
    }
    return out;
  }

 protected:
  virtual void fill(std::span<const std::int32_t> prefix, std::vector<double>& logits) const = 0;
  int vocab_, max_len_;
};

// Ignores the query entirely.
class UniformLM final : public RiggedLM {
 public:
  using RiggedLM::RiggedLM;
  void fill(std::span<const std::int32_t>, std::vector<double>&) const override {}
};

// Label-agnostic noise keyed on the prefix.
class CoinFlipLM final : public RiggedLM {
 public:
  using RiggedLM::RiggedLM;
  void fill(std::span<const std::int32_t> prefix, std::vector<double>& logits) const override {
    std::uint64_t h = 1469598103934665603ull;
    for (auto t : prefix) h = (h ^ static_cast<std::uint64_t>(t)) * 1099511628211ull;
    Pcg32 r(h, 0);
    for (auto& x : logits) x = r.normal();
  }
};

// Reads the two sentences before the final QUERY and answers correctly.
class SameConceptOracle final : public RiggedLM {
 public:
  SameConceptOracle(const corpus::TwinLanguageFamily& f, int max_len) : RiggedLM(f.vocab_size(), max_len), f_(f) {}
  void fill(std::span<const std::int32_t> prefix, std::vector<double>& logits) const override {
    if (prefix.back() != sp::QUERY) return;
    std::size_t start = prefix.size() - 1;
    while (start > 0 && prefix[start - 1] != sp::SEP) --start;
    corpus::Tokens a, b;
    for (std::size_t i = start; i + 1 < prefix.size(); ++i) {
      (f_.language_of(prefix[i]) == 0 ? a : b).push_back(prefix[i]);
    }
    const bool same = f_.parse(a, 0) == f_.parse(b, 1);
    logits[same ? sp::YES : sp::NO] = 50.0;
  }
  const corpus::TwinLanguageFamily& f_;
};

// Emits the reference translation of the last query, then EOS.
class EchoTranslator final : public RiggedLM {
 public:
  EchoTranslator(const corpus::TwinLanguageFamily& f, corpus::Task task, int max_len)
      : RiggedLM(f.vocab_size(), max_len), f_(f), task_(task) {}
  void fill(std::span<const std::int32_t> prefix, std::vector<double>& logits) const override {
    const std::int32_t tag = corpus::TwinLanguageFamily::task_tag(task_);
    std::size_t sep = prefix.size();
    for (std::size_t i = prefix.size(); i-- > 0;) {
      if (prefix[i] == sp::SEP) {
        sep = i;
        break;
      }
    }
    if (sep == prefix.size() || sep < 2) return;
    std::size_t task_at = sep;
    while (task_at > 0 && prefix[task_at] != tag) --task_at;
    const corpus::Tokens src(prefix.begin() + task_at + 1, prefix.begin() + sep - 1);
    const int src_lang = f_.language_of(src.front());
    const int tgt_lang = prefix[sep - 1] - sp::kLangTagBase;
    const auto ref = corpus::translate(f_, corpus::apply_task(task_, src), src_lang, tgt_lang);
    const std::size_t done = prefix.size() - 1 - sep;
    logits[done < ref.size() ? ref[done] : sp::EOS] = 50.0;
  }
  const corpus::TwinLanguageFamily& f_;
  corpus::Task task_;
};

}  // namespace rigged
