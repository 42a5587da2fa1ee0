#include "afp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace afp::corpus {

std::string_view order_name(OrderTransform o) {
  return o == OrderTransform::identity ? "identity" : "reverse";
}

OrderTransform parse_order(std::string_view s) {
  if (s == "identity") return OrderTransform::identity;
  if (s == "reverse") return OrderTransform::reverse;
  throw ConfigError("unknown order transform '" + std::string(s) + "'");
}

std::string_view task_name(Task t) { return t == Task::copy ? "copy" : "reverse"; }

Task parse_task(std::string_view s) {
  if (s == "copy") return Task::copy;
  if (s == "reverse") return Task::reverse;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

const LanguageSpec& TwinLanguageFamily::language(int lang) const {
  if (lang < 0 || lang >= language_count()) {
    throw UsageError("language " + std::to_string(lang) + " not in family of " +
                     std::to_string(language_count()));
  }
  return languages_[lang];
}

int TwinLanguageFamily::language_id(std::string_view name) const {
  for (const auto& l : languages_)
    if (l.name == name) return l.id;
  throw ConfigError("unknown language '" + std::string(name) + "'");
}

std::int32_t TwinLanguageFamily::vocab_size() const {
  std::int32_t v = special::kLangTagBase + language_count();
  for (const auto& l : languages_) v = std::max(v, l.offset + concept_count());
  return v;
}

std::int32_t TwinLanguageFamily::task_tag(Task t) {
  return t == Task::copy ? special::TASK_COPY : special::TASK_REVERSE;
}

int TwinLanguageFamily::language_of(std::int32_t token) const {
  for (const auto& l : languages_)
    if (token >= l.offset && token < l.offset + concept_count()) return l.id;
  return -1;
}

std::vector<std::int32_t> TwinLanguageFamily::sample_concepts(Pcg32& rng) const {
  const int span = config_.max_len - config_.min_len + 1;
  const int len = config_.min_len + static_cast<int>(rng.below(static_cast<std::uint32_t>(span)));
  const std::size_t C = concept_count();
  auto draw = [&](const double* probs) {
    const double u = rng.uniform();
    double acc = 0;
    for (std::size_t j = 0; j < C; ++j) {
      acc += probs[j];
      if (u < acc) return static_cast<std::int32_t>(j);
    }
    return static_cast<std::int32_t>(C - 1);
  };
  std::vector<std::int32_t> out;
  out.reserve(len);
  out.push_back(draw(start_.data()));
  for (int i = 1; i < len; ++i) out.push_back(draw(transition_.data() + out.back() * C));
  return out;
}

Tokens TwinLanguageFamily::render(std::span<const std::int32_t> concepts, int lang) const {
  const LanguageSpec& L = language(lang);
  Tokens out;
  out.reserve(concepts.size());
  for (auto c : concepts) {
    if (c < 0 || c >= concept_count()) throw DataError("concept id " + std::to_string(c) + " out of range");
    out.push_back(L.offset + L.concept_to_local[c]);
  }
  if (L.order == OrderTransform::reverse) std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::int32_t> TwinLanguageFamily::parse(std::span<const std::int32_t> tokens,
                                                    int lang) const {
  const LanguageSpec& L = language(lang);
  std::vector<std::int32_t> concepts;
  concepts.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::int32_t local = tokens[i] - L.offset;
    if (local < 0 || local >= concept_count()) {
      throw DataError("token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                      " is not in language " + L.name);
    }
    concepts.push_back(L.local_to_concept[local]);
  }
  if (L.order == OrderTransform::reverse) std::reverse(concepts.begin(), concepts.end());
  return concepts;
}

namespace {

std::vector<double> random_distribution(Pcg32& rng, std::size_t n) {
  // Log-normal weights give rows with a few likely successors and a long
  // tail, so sentences have structure without being deterministic.
  std::vector<double> w(n);
  double total = 0;
  for (auto& x : w) {
    x = std::exp(1.5 * rng.normal());
    total += x;
  }
  for (auto& x : w) x /= total;
  return w;
}

}  // namespace

TwinLanguageFamily make_family(const FamilyConfig& config, std::uint64_t seed) {
  if (config.concept_count < 8) throw ConfigError("concept_count must be at least 8");
  if (config.languages.size() < 2) throw ConfigError("a family needs at least 2 languages");
  if (config.min_len < 1 || config.max_len < config.min_len) {
    throw ConfigError("sentence length bounds must satisfy 1 <= min_len <= max_len");
  }
  TwinLanguageFamily f;
  f.seed_ = seed;
  f.config_ = config;
  const int C = config.concept_count;
  const int n_langs = static_cast<int>(config.languages.size());
  const std::int32_t reserved_end = special::kLangTagBase + n_langs;
  std::set<std::string> names;
  Pcg32 root = make_stream(seed, "family");
  for (int l = 0; l < n_langs; ++l) {
    const auto& lc = config.languages[l];
    if (lc.name.empty() || !names.insert(lc.name).second) {
      throw ConfigError("language names must be unique and non-empty");
    }
    LanguageSpec spec;
    spec.id = l;
    spec.name = lc.name;
    spec.order = lc.order;
    spec.offset = lc.offset.value_or(reserved_end + l * C);
    spec.concept_to_local.resize(C);
    std::iota(spec.concept_to_local.begin(), spec.concept_to_local.end(), 0);
    Pcg32 rng = root.derive("perm", static_cast<std::uint64_t>(l));
    for (int i = C - 1; i > 0; --i) {
      const auto j = static_cast<int>(rng.below(static_cast<std::uint32_t>(i + 1)));
      std::swap(spec.concept_to_local[i], spec.concept_to_local[j]);
    }
    spec.local_to_concept.resize(C);
    for (int c = 0; c < C; ++c) spec.local_to_concept[spec.concept_to_local[c]] = c;
    f.languages_.push_back(std::move(spec));
  }
  for (const auto& a : f.languages_) {
    if (a.offset < reserved_end) {
      throw ConfigError("language " + a.name + " token range overlaps the reserved ids");
    }
    for (const auto& b : f.languages_) {
      if (a.id < b.id && a.offset < b.offset + C && b.offset < a.offset + C) {
        throw ConfigError("token ranges of " + a.name + " and " + b.name + " overlap");
      }
    }
  }
  Pcg32 chain = root.derive("chain");
  f.start_ = random_distribution(chain, C);
  f.transition_.reserve(static_cast<std::size_t>(C) * C);
  for (int i = 0; i < C; ++i) {
    auto row = random_distribution(chain, C);
    f.transition_.insert(f.transition_.end(), row.begin(), row.end());
  }
  return f;
}

Tokens sample_sentence(const TwinLanguageFamily& family, int lang, Pcg32& rng) {
  family.language(lang);
  return family.render(family.sample_concepts(rng), lang);
}

Tokens translate(const TwinLanguageFamily& family, std::span<const std::int32_t> sentence,
                 int src_lang, int tgt_lang) {
  auto concepts = family.parse(sentence, src_lang);
  return family.render(concepts, tgt_lang);
}

std::vector<std::pair<int, int>> language_combinations(const TwinLanguageFamily& family,
                                                       const AlignmentPolicy& policy) {
  const int n = family.language_count();
  if (n < 2) throw UsageError("alignment needs at least 2 languages");
  std::vector<std::pair<int, int>> out;
  if (policy.kind == AlignmentPolicy::Kind::pivot) {
    family.language(policy.pivot_lang);
    for (int l = 0; l < n; ++l)
      if (l != policy.pivot_lang) out.emplace_back(policy.pivot_lang, l);
  } else {
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) out.emplace_back(a, b);
  }
  return out;
}

std::vector<TranslationPair> make_translation_pairs(const TwinLanguageFamily& family,
                                                    const AlignmentPolicy& policy,
                                                    int n_per_combination, const Pcg32& rng) {
  if (n_per_combination < 0) throw UsageError("n_per_combination must be non-negative");
  std::vector<TranslationPair> out;
  std::uint64_t index = 0;
  for (auto [a, b] : language_combinations(family, policy)) {
    for (int i = 0; i < n_per_combination; ++i) {
      Pcg32 r = rng.derive("pair", index++);
      TranslationPair p;
      p.src_lang = a;
      p.tgt_lang = b;
      p.src = sample_sentence(family, a, r);
      p.tgt = translate(family, p.src, a, b);
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::size_t CifSample::sep_index() const {
  auto it = std::find(tokens.begin(), tokens.end(), special::SEP);
  if (it == tokens.end()) throw DataError("CIF sample has no SEP token");
  return static_cast<std::size_t>(it - tokens.begin());
}

Tokens CifSample::response() const {
  Tokens r;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t)
    if (loss_mask[t] && tokens[t + 1] != special::EOS) r.push_back(tokens[t + 1]);
  return r;
}

Tokens CifSample::context() const {
  // BOS TASK context... LANGTAG SEP
  const std::size_t sep = sep_index();
  return Tokens(tokens.begin() + 2, tokens.begin() + static_cast<std::ptrdiff_t>(sep - 1));
}

Tokens apply_task(Task task, std::span<const std::int32_t> context) {
  Tokens r(context.begin(), context.end());
  if (task == Task::reverse) std::reverse(r.begin(), r.end());
  return r;
}

CifSample build_cif_sample(const TwinLanguageFamily& family, Task task,
                           std::span<const std::int32_t> context, int src_lang, int tgt_lang) {
  Tokens response = translate(family, apply_task(task, context), src_lang, tgt_lang);
  CifSample s;
  s.source_lang = src_lang;
  s.target_lang = tgt_lang;
  s.task = task;
  s.tokens.push_back(special::BOS);
  s.tokens.push_back(TwinLanguageFamily::task_tag(task));
  s.tokens.insert(s.tokens.end(), context.begin(), context.end());
  s.tokens.push_back(family.lang_tag(tgt_lang));
  s.tokens.push_back(special::SEP);
  const std::size_t sep = s.tokens.size() - 1;
  s.tokens.insert(s.tokens.end(), response.begin(), response.end());
  s.tokens.push_back(special::EOS);
  s.loss_mask.assign(s.tokens.size(), 0);
  for (std::size_t t = sep; t + 1 < s.tokens.size(); ++t) s.loss_mask[t] = 1;
  return s;
}

CifSample make_cif_sample(const TwinLanguageFamily& family, Task task, int src_lang, double p_src,
                          Pcg32& rng) {
  if (!(p_src >= 0.0 && p_src <= 1.0)) throw UsageError("p_src must lie in [0, 1]");
  const int n = family.language_count();
  Tokens context = sample_sentence(family, src_lang, rng);
  int tgt = src_lang;
  if (!(rng.uniform() < p_src)) {
    const auto k = static_cast<int>(rng.below(static_cast<std::uint32_t>(n - 1)));
    tgt = k < src_lang ? k : k + 1;
  }
  return build_cif_sample(family, task, context, src_lang, tgt);
}

TokenBatch pad_batch(std::span<const Tokens* const> seqs,
                     std::span<const std::vector<std::uint8_t>* const> loss_masks,
                     std::int32_t pad_token) {
  if (seqs.empty()) throw UsageError("pad_batch: empty batch");
  TokenBatch b;
  b.batch = seqs.size();
  for (const auto* s : seqs) b.seq = std::max(b.seq, s->size());
  b.tokens.assign(b.batch * b.seq, pad_token);
  b.pad_mask.assign(b.batch * b.seq, 0);
  b.loss_mask.assign(b.batch * b.seq, 0);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const Tokens& s = *seqs[i];
    std::copy(s.begin(), s.end(), b.tokens.begin() + static_cast<std::ptrdiff_t>(i * b.seq));
    std::fill_n(b.pad_mask.begin() + static_cast<std::ptrdiff_t>(i * b.seq), s.size(), 1);
    if (!loss_masks.empty()) {
      const auto& m = *loss_masks[i];
      std::copy(m.begin(), m.end(), b.loss_mask.begin() + static_cast<std::ptrdiff_t>(i * b.seq));
    }
  }
  return b;
}

TokenBatch pad_batch(const std::vector<Tokens>& seqs, std::int32_t pad_token) {
  std::vector<const Tokens*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  return pad_batch(ptrs, {}, pad_token);
}

BatchIterator::BatchIterator(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                             bool drop_last)
    : n_(dataset_size), batch_(batch_size), seed_(seed), drop_last_(drop_last) {
  if (batch_size == 0) throw UsageError("batch size must be at least 1");
  if (dataset_size == 0) throw UsageError("cannot batch an empty dataset");
  if (drop_last && dataset_size < batch_size) {
    throw UsageError("dataset smaller than one full batch");
  }
  reshuffle();
}

void BatchIterator::reshuffle() {
  order_.resize(n_);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Pcg32 rng = make_stream(seed_, "batches").derive("epoch", epoch_);
  for (std::size_t i = n_ - 1; i > 0; --i) {
    const std::size_t j = rng.below(static_cast<std::uint32_t>(i + 1));
    std::swap(order_[i], order_[j]);
  }
  cursor_ = 0;
}

std::size_t BatchIterator::batches_per_epoch() const {
  return drop_last_ ? n_ / batch_ : (n_ + batch_ - 1) / batch_;
}

std::vector<std::size_t> BatchIterator::next() {
  const std::size_t remaining = n_ - cursor_;
  if (remaining == 0 || (drop_last_ && remaining < batch_)) {
    ++epoch_;
    reshuffle();
  }
  const std::size_t take = std::min(batch_, n_ - cursor_);
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
  cursor_ += take;
  return out;
}

TokenBatch cif_batch(std::span<const CifSample> dataset, std::span<const std::size_t> indices) {
  std::vector<const Tokens*> seqs;
  std::vector<const std::vector<std::uint8_t>*> masks;
  for (auto i : indices) {
    seqs.push_back(&dataset[i].tokens);
    masks.push_back(&dataset[i].loss_mask);
  }
  return pad_batch(seqs, masks, special::PAD);
}

TokenBatch pair_side_batch(std::span<const TranslationPair> pairs,
                           std::span<const std::size_t> indices, bool target_side) {
  std::vector<const Tokens*> seqs;
  for (auto i : indices) seqs.push_back(target_side ? &pairs[i].tgt : &pairs[i].src);
  return pad_batch(seqs, {}, special::PAD);
}

std::vector<TokenBatch> epoch_batches(std::span<const CifSample> dataset, std::size_t batch_size,
                                      std::uint64_t seed, std::size_t epoch,
                                      std::int32_t pad_token) {
  BatchIterator it(dataset.size(), batch_size, seed);
  for (std::size_t e = 0; e < epoch; ++e)
    for (std::size_t b = 0; b < it.batches_per_epoch(); ++b) it.next();
  std::vector<TokenBatch> out;
  for (std::size_t b = 0; b < it.batches_per_epoch(); ++b) {
    auto idx = it.next();
    std::vector<const Tokens*> seqs;
    std::vector<const std::vector<std::uint8_t>*> masks;
    for (auto i : idx) {
      seqs.push_back(&dataset[i].tokens);
      masks.push_back(&dataset[i].loss_mask);
    }
    out.push_back(pad_batch(seqs, masks, pad_token));
  }
  return out;
}

DataAudit audit(std::span<const TranslationPair> pairs, std::span<const CifSample> cif) {
  DataAudit a;
  a.n_pairs = pairs.size();
  a.n_cif = cif.size();
  std::set<std::pair<int, int>> combos;
  for (const auto& p : pairs) combos.emplace(std::min(p.src_lang, p.tgt_lang), std::max(p.src_lang, p.tgt_lang));
  a.language_combinations = combos.size();
  std::size_t same = 0;
  for (const auto& s : cif) same += s.source_lang == s.target_lang ? 1 : 0;
  a.target_eq_source_fraction = cif.empty() ? 0.0 : static_cast<double>(same) / static_cast<double>(cif.size());
  return a;
}

AlignmentPolicy resolve_policy(const TwinLanguageFamily& family, const CorpusConfig& config) {
  if (config.policy == AlignmentPolicy::Kind::pairwise) return AlignmentPolicy::pairwise();
  return AlignmentPolicy::pivot(family.language_id(config.pivot));
}

CorpusData generate_corpus(const CorpusConfig& config, double p_src, std::uint64_t seed) {
  if (config.tasks.empty()) throw ConfigError("corpus needs at least one task");
  CorpusData data;
  data.family = make_family(config.family, seed);
  const auto& fam = data.family;
  data.pairs = make_translation_pairs(fam, resolve_policy(fam, config), config.n_pairs_per_combination,
                                      make_stream(seed, "pairs"));
  // Concept sequences seen in training; held-out splits avoid them so the
  // held-out scores measure generalization rather than recall.
  std::set<std::vector<std::int32_t>> seen;
  for (const auto& p : data.pairs) seen.insert(fam.parse(p.src, p.src_lang));
  constexpr int kMaxDraws = 1000;
  auto cif_split = [&](std::string_view label, int n, bool held_out) {
    std::vector<CifSample> out;
    Pcg32 base = make_stream(seed, label);
    for (int i = 0; i < n; ++i) {
      Pcg32 r = base.derive("sample", static_cast<std::uint64_t>(i));
      for (int draw = 0;; ++draw) {
        if (draw == kMaxDraws) throw DataError("cannot draw a held-out CIF sample unseen in training");
        const int src = static_cast<int>(r.below(static_cast<std::uint32_t>(fam.language_count())));
        const Task task = config.tasks[r.below(static_cast<std::uint32_t>(config.tasks.size()))];
        CifSample s = make_cif_sample(fam, task, src, p_src, r);
        auto concepts = fam.parse(s.context(), s.source_lang);
        if (held_out && seen.count(concepts)) continue;
        if (!held_out) seen.insert(std::move(concepts));
        out.push_back(std::move(s));
        break;
      }
    }
    return out;
  };
  data.cif = cif_split("cif", config.n_cif, false);
  const int hs = fam.language_id(config.heldout_src);
  const int ht = fam.language_id(config.heldout_tgt);
  if (hs == ht) throw ConfigError("held-out source and target languages must differ");
  // Held-out pairs are also distinct from each other, so retrieval has a
  // single correct target per query.
  std::set<std::vector<std::int32_t>> held_seen;
  Pcg32 held = make_stream(seed, "heldout");
  for (int i = 0; i < config.n_heldout; ++i) {
    Pcg32 r = held.derive("pair", static_cast<std::uint64_t>(i));
    TranslationPair p;
    p.src_lang = hs;
    p.tgt_lang = ht;
    for (int draw = 0;; ++draw) {
      if (draw == kMaxDraws) throw DataError("cannot draw a distinct held-out pair unseen in training");
      auto concepts = fam.sample_concepts(r);
      if (seen.count(concepts) || !held_seen.insert(concepts).second) continue;
      p.src = fam.render(concepts, hs);
      break;
    }
    p.tgt = translate(fam, p.src, hs, ht);
    data.heldout.push_back(std::move(p));
  }
  data.heldout_cif = cif_split("heldout_cif", config.n_heldout_cif, true);
  return data;
}

}  // namespace afp::corpus
