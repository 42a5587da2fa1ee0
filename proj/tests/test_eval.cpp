#include <cmath>

#include "afp/eval.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "rigged_lms.hpp"
#include "test_util.hpp"

using namespace afp;
using namespace afp::eval;
namespace sp = afp::corpus::special;
using namespace rigged;

namespace {

corpus::TwinLanguageFamily family() {
  corpus::FamilyConfig c;
  c.concept_count = 24;
  return corpus::make_family(c, 17);
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("prompt layout") {
  Template tpl;
  tpl.k = 2;
  const std::vector<LabeledExample> demos{{{20, 21}, 1}, {{22}, 0}};
  const corpus::Tokens q{30, 31, 32};
  const auto p = build_prompt(tpl, demos, q, 64);
  const corpus::Tokens expect{20, 21, sp::QUERY, sp::YES, sp::SEP, 22, sp::QUERY, sp::NO, sp::SEP, 30, 31, 32, sp::QUERY};
  CHECK(p == expect);
  CHECK_THROWS_AS(build_prompt(tpl, demos, q, 12), LengthError);
  CHECK_THROWS_AS(build_prompt(tpl, std::span(demos).first(1), q, 64), UsageError);
  tpl.verbalizer = {{sp::YES}, {sp::YES}};
  CHECK_THROWS_AS(tpl.validate(), UsageError);
}

TEST_CASE("candidate scores match the per-position oracle") {
  const ModelConfig c{40, 8, 2, 2, 16, 16};
  auto params = init_params<double>(c, 3);
  Pcg32 r(3, 3);
  for (auto& t : params.tensors)
    for (auto& x : t.value.vec()) x += 0.3 * r.normal();
  const TransformerLM<double> lm(params);
  const corpus::Tokens prompt{1, 12, 30, 4};
  const std::vector<corpus::Tokens> cands{{6}, {5}, {7, 8, 9}};
  const auto s = score_candidates(lm, prompt, cands);
  REQUIRE(s.log_likelihoods.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    corpus::Tokens seq = prompt;
    seq.insert(seq.end(), cands[k].begin(), cands[k].end());
    const auto ref = oracle::forward(params, seq);
    double ll = 0;
    for (std::size_t j = 0; j < cands[k].size(); ++j) {
      ll += oracle::log_softmax(ref.logits[prompt.size() - 1 + j])[cands[k][j]];
    }
    CHECK(s.log_likelihoods[k] == doctest::Approx(ll).epsilon(1e-8));
  }
  const auto best = std::max_element(s.log_likelihoods.begin(), s.log_likelihoods.end()) - s.log_likelihoods.begin();
  CHECK(s.chosen == static_cast<std::size_t>(best));
  CHECK_THROWS_AS(score_candidates(lm, prompt, std::span(cands).first(1)), UsageError);
  const corpus::Tokens long_prompt(15, 1);
  CHECK_THROWS_AS(score_candidates(lm, long_prompt, cands), LengthError);
}

TEST_CASE("ties go to the lowest index and shifts do not matter") {
  const UniformLM lm(10, 32);
  const std::vector<corpus::Tokens> cands{{3}, {2}, {1}};
  CHECK(score_candidates(lm, corpus::Tokens{1, 2}, cands).chosen == 0);
  Pcg32 r(4, 0);
  const auto z = testutil::random_tensor(r, {3, 7});
  auto shifted = z;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 7; ++j) shifted.at(i, j) += 1000.0 * static_cast<double>(i + 1);
  const auto a = log_softmax_rows(z), b = log_softmax_rows(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> row(7);
    for (std::size_t j = 0; j < 7; ++j) row[j] = z.at(i, j);
    const auto ref = oracle::log_softmax(row);
    for (std::size_t j = 0; j < 7; ++j) CHECK(a.at(i, j) == doctest::Approx(ref[j]).epsilon(1e-14));
  }
}

TEST_CASE("a label-agnostic model scores at chance") {
  const auto f = family();
  const auto task = same_concept_task(f, 0, 1);
  Template tpl;
  const CoinFlipLM coin(f.vocab_size(), 64);
  const auto res = classification_eval(coin, task, tpl, 1000, 1);
  REQUIRE(res.accuracy.has_value());
  CHECK(std::abs(*res.accuracy - 0.5) < 0.05);
  const UniformLM flat(f.vocab_size(), 64);
  const auto r2 = classification_eval(flat, task, tpl, 1000, 1);
  std::size_t zeros = 0;
  for (const auto& rec : r2.classification) {
    CHECK(rec.chosen == 0);
    zeros += rec.label == 0;
  }
  CHECK(*r2.accuracy == static_cast<double>(zeros) / 1000.0);
}

TEST_CASE("an oracle model scores perfectly, with and without demos") {
  const auto f = family();
  const auto task = same_concept_task(f, 0, 1);
  const SameConceptOracle lm(f, 128);
  for (int k : {0, 3}) {
    Template tpl;
    tpl.k = k;
    const auto res = classification_eval(lm, task, tpl, 300, 2);
    CHECK(*res.accuracy == 1.0);
    CHECK(res.scores.at("accuracy") == 1.0);
  }
}

TEST_CASE("classification eval is seeded and handles n = 0") {
  const auto f = family();
  const auto task = same_concept_task(f, 0, 1);
  const CoinFlipLM lm(f.vocab_size(), 128);
  Template tpl;
  tpl.k = 2;
  const auto a = classification_eval(lm, task, tpl, 50, 9);
  const auto b = classification_eval(lm, task, tpl, 50, 9);
  REQUIRE(a.classification.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(a.classification[i].label == b.classification[i].label);
    CHECK(a.classification[i].log_likelihoods == b.classification[i].log_likelihoods);
  }
  const auto empty = classification_eval(lm, task, tpl, 0, 9);
  CHECK(empty.n == 0);
  CHECK_FALSE(empty.accuracy.has_value());
  Template three;
  three.verbalizer = {{sp::NO}, {sp::YES}, {sp::QUERY}};
  CHECK_THROWS_AS(classification_eval(lm, task, three, 5, 9), UsageError);
}

TEST_CASE("bleu hand values") {
  using V = std::vector<corpus::Tokens>;
  const V same{{1, 2, 3, 4}, {5, 6, 7, 8, 9}};
  CHECK(bleu(same, same) == 1.0);
  CHECK(bleu(V{{1, 2, 3}}, V{{4, 5, 6}}) == 0.0);
  // p1 = 2/3, p2 = 1/2, p3 = 0.
  CHECK(bleu(V{{1, 2, 1}}, V{{1, 2, 3}}) == 0.0);
  // p_n = 4/5, 3/4, 2/3, 1/2.
  CHECK(bleu(V{{1, 2, 3, 4, 5}}, V{{1, 2, 3, 4, 6}}) == doctest::Approx(std::pow(0.2, 0.25)).epsilon(1e-12));
  // All precisions 1, brevity penalty exp(1 - 6/5).
  CHECK(bleu(V{{1, 2, 3, 4, 5}}, V{{1, 2, 3, 4, 5, 6}}) == doctest::Approx(std::exp(-0.2)).epsilon(1e-12));
  // Clipping: the repeated unigram counts once.
  CHECK(bleu(V{{7, 7}}, V{{7, 8}}) == 0.0);
  CHECK(bleu(V{{7, 7, 8}}, V{{7, 8}}) == doctest::Approx(std::sqrt(2.0 / 3 * 1.0 / 2)).epsilon(1e-12));
  CHECK_THROWS_AS(bleu(V{}, V{}), UsageError);
  CHECK_THROWS_AS(bleu(same, V{{1}}), UsageError);
}

TEST_CASE("an echo translator gets full marks") {
  const auto f = family();
  for (const auto task : {corpus::Task::copy, corpus::Task::reverse}) {
    const EchoTranslator lm(f, task, 96);
    for (int k : {0, 2}) {
      TranslationEvalConfig c;
      c.n = 40;
      c.k_shot = k;
      c.task = task;
      c.seed = 3;
      const auto res = translation_eval(lm, f, c);
      CHECK(res.scores.at("exact_match") == 1.0);
      CHECK(res.scores.at("bleu") == 1.0);
      for (const auto& rec : res.translation) {
        CHECK(rec.reference == corpus::translate(f, corpus::apply_task(task, rec.source), 0, 1));
      }
    }
  }
  // Explicit sources are used in order and cap n.
  {
    const EchoTranslator lm(f, corpus::Task::copy, 96);
    TranslationEvalConfig c;
    c.n = 10;
    c.sources = {f.render(std::vector<std::int32_t>{1, 2, 3}, 0), f.render(std::vector<std::int32_t>{5, 4}, 0)};
    const auto res = translation_eval(lm, f, c);
    REQUIRE(res.translation.size() == 2);
    CHECK(res.translation[0].source == c.sources[0]);
    CHECK(res.translation[1].source == c.sources[1]);
    CHECK(res.scores.at("exact_match") == 1.0);
  }
  const UniformLM mute(f.vocab_size(), 96);
  TranslationEvalConfig c;
  c.n = 5;
  const auto res = translation_eval(mute, f, c);
  CHECK(res.scores.at("exact_match") == 0.0);
  CHECK(res.scores.at("bleu") == 0.0);
}

TEST_CASE("translation prompts and decoding") {
  const auto f = family();
  const corpus::Tokens src = f.render(std::vector<std::int32_t>{1, 2, 3}, 0);
  const corpus::Tokens demo = f.render(std::vector<std::int32_t>{4, 5}, 0);
  const auto p = translation_prompt(f, std::vector<corpus::Tokens>{demo}, src, 0, 1, corpus::Task::copy);
  const auto tag = corpus::TwinLanguageFamily::task_tag(corpus::Task::copy);
  corpus::Tokens expect{sp::BOS, tag};
  expect.insert(expect.end(), demo.begin(), demo.end());
  expect.push_back(f.lang_tag(1));
  expect.push_back(sp::SEP);
  const auto dt = f.render(std::vector<std::int32_t>{4, 5}, 1);
  expect.insert(expect.end(), dt.begin(), dt.end());
  expect.push_back(sp::EOS);
  expect.push_back(tag);
  expect.insert(expect.end(), src.begin(), src.end());
  expect.push_back(f.lang_tag(1));
  expect.push_back(sp::SEP);
  CHECK(p == expect);
  // The token budget and the context window both stop generation.
  const EchoTranslator lm(f, corpus::Task::copy, 96);
  CHECK(greedy_decode(lm, p, 2).size() == 2);
  const EchoTranslator tight(f, corpus::Task::copy, static_cast<int>(p.size()) + 1);
  CHECK(greedy_decode(tight, p, 10).size() == 1);
  TranslationEvalConfig c;
  c.n = 3;
  const EchoTranslator tiny(f, corpus::Task::copy, 6);
  CHECK_THROWS_AS(translation_eval(tiny, f, c), LengthError);
}

}  // TEST_SUITE
