#include "afp/sweep.hpp"

#include <cstdio>

#include "afp/eval.hpp"

namespace afp {

std::string_view sweep_kind_name(SweepKind k) {
  switch (k) {
    case SweepKind::layer:
      return "layer";
    case SweepKind::p_src:
      return "p_src";
    case SweepKind::pooling:
      return "pooling";
    case SweepKind::alpha:
      return "alpha";
    case SweepKind::policy:
      return "policy";
  }
  return "layer";
}

SweepKind parse_sweep_kind(std::string_view s) {
  for (auto k : {SweepKind::layer, SweepKind::p_src, SweepKind::pooling, SweepKind::alpha, SweepKind::policy}) {
    if (sweep_kind_name(k) == s) return k;
  }
  throw UsageError("unknown sweep kind '" + std::string(s) +
                   "' (expected layer, p_src, pooling, alpha or policy)");
}

std::vector<std::string> default_grid(SweepKind kind, const RunConfig& base) {
  switch (kind) {
    case SweepKind::layer: {
      std::vector<std::string> g;
      for (int l = 0; l <= base.model.n_layers; ++l) g.push_back(std::to_string(l));
      return g;
    }
    case SweepKind::p_src:
      return {"0", "0.25", "0.5", "0.75", "1"};
    case SweepKind::pooling:
      return {"mean", "max", "last_token"};
    case SweepKind::alpha:
      return {"1", "1.5", "2"};
    case SweepKind::policy:
      return {"pivot", "pairwise"};
  }
  return {};
}

namespace {

double parse_number(const std::string& v, const char* what) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw UsageError(std::string("sweep: '") + v + "' is not a valid " + what);
  }
}

}  // namespace

RunConfig apply_grid_value(const RunConfig& base, SweepKind kind, const std::string& value) {
  RunConfig c = base;
  switch (kind) {
    case SweepKind::layer: {
      const double l = parse_number(value, "layer");
      if (l != static_cast<int>(l)) throw UsageError("sweep: layer must be an integer");
      c.train.align_layer = static_cast<int>(l);
      break;
    }
    case SweepKind::p_src:
      c.train.p_src = parse_number(value, "p_src");
      break;
    case SweepKind::pooling:
      c.train.pooling = num::parse_pooling(value);
      break;
    case SweepKind::alpha:
      c.train.alpha = parse_number(value, "alpha");
      break;
    case SweepKind::policy:
      if (value == "pivot") {
        c.corpus.policy = corpus::AlignmentPolicy::Kind::pivot;
      } else if (value == "pairwise") {
        c.corpus.policy = corpus::AlignmentPolicy::Kind::pairwise;
      } else {
        throw UsageError("sweep: unknown policy '" + value + "'");
      }
      if (c.corpus.family.languages.size() < 3) {
        throw UsageError("sweep: a policy comparison needs at least 3 languages");
      }
      break;
  }
  return c;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, SweepKind kind,
                                const std::vector<std::string>& grid, std::uint64_t seed,
                                const std::function<void(const SweepRow&)>& on_row) {
  if (grid.empty()) throw UsageError("sweep: empty grid");
  // Validate every grid point before spending time on training.
  std::vector<RunConfig> configs;
  for (const auto& v : grid) configs.push_back(apply_grid_value(base, kind, v));

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const RunConfig& c = configs[i];
    const corpus::CorpusData data = corpus::generate_corpus(c.corpus, c.train.p_src, seed);
    const ModelConfig model = resolve_model(c, data.family);
    c.train.validate(model);

    SweepRow row;
    row.kind = std::string(sweep_kind_name(kind));
    row.value = grid[i];
    row.align_layer = c.train.align_layer;
    row.pooling = std::string(num::pooling_name(c.train.pooling));
    row.alpha = c.train.alpha;
    row.p_src = c.train.p_src;
    row.policy = c.corpus.policy == corpus::AlignmentPolicy::Kind::pivot ? "pivot" : "pairwise";
    row.audit = corpus::audit(data.pairs, data.cif);

    eval::TranslationEvalConfig ec;
    ec.src_lang = data.family.language_id(c.eval.src);
    ec.tgt_lang = data.family.language_id(c.eval.tgt);
    ec.n = c.eval.n;
    ec.max_new_tokens = c.eval.max_new_tokens;
    ec.k_shot = c.eval.k_shot;
    ec.task = c.eval.translation_task;
    ec.seed = seed;
    ec.sources = eval::held_out_sources(data, ec.src_lang, ec.tgt_lang);
    auto finish = [&](const auto& result) {
      row.final_report = result.reports.back();
      const eval::TransformerLM lm(result.params);
      const eval::EvalResult er = eval::translation_eval(lm, data.family, ec);
      row.translation_em = er.scores.at("exact_match");
      row.translation_bleu = er.scores.at("bleu");
    };
    if (c.train.precision == "f64") {
      finish(align::train<double>(model, c.train, data, seed));
    } else {
      finish(align::train<float>(model, c.train, data, seed));
    }
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out =
      "kind,value,align_layer,pooling,alpha,p_src,policy,n_pairs,n_cif,language_combinations,"
      "target_eq_source_fraction,step,l_align,l_uniform,retrieval_acc_at_1,mcl_loss,cif_loss,"
      "afp_loss,translation_em,translation_bleu\n";
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    const auto& f = r.final_report;
    out += r.kind + "," + r.value + "," + std::to_string(r.align_layer) + "," + r.pooling + "," +
           num(r.alpha) + "," + num(r.p_src) + "," + r.policy + "," + std::to_string(r.audit.n_pairs) +
           "," + std::to_string(r.audit.n_cif) + "," + std::to_string(r.audit.language_combinations) +
           "," + num(r.audit.target_eq_source_fraction) + "," + std::to_string(f.step) + "," +
           num(f.l_align) + "," + num(f.l_uniform) + "," + num(f.retrieval_acc_at_1) + "," +
           num(f.mcl_loss) + "," + num(f.cif_loss) + "," + num(f.afp_loss) + "," +
           num(r.translation_em) + "," + num(r.translation_bleu) + "\n";
  }
  return out;
}

}  // namespace afp
