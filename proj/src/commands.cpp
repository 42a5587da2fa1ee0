#include "afp/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <variant>

#include "CLI11.hpp"
#include "afp/checkpoint.hpp"
#include "afp/config.hpp"
#include "afp/error.hpp"
#include "afp/eval.hpp"
#include "afp/gradcheck.hpp"
#include "afp/io.hpp"
#include "afp/repr.hpp"
#include "afp/sweep.hpp"

namespace afp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const CorruptArtifact*>(&e) || dynamic_cast<const DataError*>(&e)) return kCorrupt;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const TrainingError*>(&e)) return kNumeric;
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const LengthError*>(&e) || dynamic_cast<const IndexError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return kUsage;
  }
  return kCheckFailed;
}

namespace {

struct Common {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON run config");
    app->add_option("--set", overrides, "Override a config key, e.g. train.steps=100")->take_all();
    app->add_option("--seed", seed, "Seed (beats the config key and AFP_SEED)");
  }

  RunConfig load() const {
    std::optional<fs::path> p;
    if (config_path) p = *config_path;
    return load_with_overrides(p, overrides);
  }
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

corpus::CorpusData load_corpus_dir(const fs::path& dir) {
  if (!fs::exists(dir / "family.json")) {
    throw UsageError("no corpus at " + dir.string() + " (run gen-corpus first)");
  }
  return io::read_corpus(dir);
}

std::string report_line(const align::AlignReport& r) {
  return "step " + std::to_string(r.step) + "  l_align " + fmt(r.l_align) + "  l_uniform " +
         fmt(r.l_uniform) + "  acc@1 " + fmt(r.retrieval_acc_at_1) + "  mcl " + fmt(r.mcl_loss) +
         "  cif " + fmt(r.cif_loss);
}

// ---------------------------------------------------------------- gen-corpus

int cmd_gen_corpus(const Common& common, const std::optional<std::string>& out_dir, std::ostream& out) {
  const RunConfig c = common.load();
  const std::uint64_t seed = resolve_seed(c, common.seed);
  const fs::path dir = out_dir ? fs::path(*out_dir) : fs::path(c.paths.corpus_dir);
  const corpus::CorpusData data = corpus::generate_corpus(c.corpus, c.train.p_src, seed);
  io::write_corpus(dir, data);
  const auto a = corpus::audit(data.pairs, data.cif);
  out << "wrote " << dir.string() << ": " << data.pairs.size() << " pairs, " << data.cif.size()
      << " cif samples, " << data.heldout.size() << " held-out pairs, " << data.heldout_cif.size()
      << " held-out cif samples; " << a.language_combinations << " language combinations, vocab "
      << data.family.vocab_size() << "\n";
  return kOk;
}

// --------------------------------------------------------------------- train

template <class T>
int train_typed(const RunConfig& c, const ModelConfig& model, const corpus::CorpusData& data,
                std::uint64_t seed, const fs::path& run_dir, std::ostream& out) {
  std::vector<json> reports;
  align::TrainHooks hooks;
  hooks.out_dir = run_dir;
  hooks.on_report = [&](const align::AlignReport& r) {
    reports.push_back(io::report_to_json(r));
    out << report_line(r) << "\n";
  };
  try {
    align::train<T>(model, c.train, data, seed, hooks);
  } catch (const TrainingError&) {
    io::write_text(run_dir / "reports.jsonl", io::to_jsonl(reports));
    throw;
  }
  io::write_text(run_dir / "reports.jsonl", io::to_jsonl(reports));
  const auto bytes = read_file_bytes(run_dir / "checkpoint.afpt");
  out << "checkpoint " << (run_dir / "checkpoint.afpt").string() << " digest " << digest_hex(bytes) << "\n";
  return kOk;
}

int cmd_train(const Common& common, const std::optional<std::string>& corpus_dir,
              const std::optional<std::string>& out_dir, std::ostream& out) {
  RunConfig c = common.load();
  const std::uint64_t seed = resolve_seed(c, common.seed);
  const corpus::CorpusData data = load_corpus_dir(corpus_dir ? *corpus_dir : c.paths.corpus_dir);
  const ModelConfig model = resolve_model(c, data.family);
  c.train.validate(model);
  const fs::path run_dir = out_dir ? fs::path(*out_dir) : fs::path(c.paths.run_dir);
  ensure_dir(run_dir);
  RunConfig resolved = c;
  resolved.seed = seed;
  resolved.model = model;
  save_run_config(run_dir / "config.json", resolved);
  if (c.train.precision == "f64") return train_typed<double>(c, model, data, seed, run_dir, out);
  return train_typed<float>(c, model, data, seed, run_dir, out);
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
  std::optional<std::string> checkpoint;
  std::optional<std::string> corpus_dir;
  std::optional<std::string> task;
  std::optional<std::string> out;
};

int resolve_layer(const RunConfig& c, int n_layers) {
  const int layer = c.eval.layer.value_or(c.train.align_layer);
  if (layer < 0 || layer > n_layers) {
    throw UsageError("layer " + std::to_string(layer) + " outside [0, " + std::to_string(n_layers) + "]");
  }
  return layer;
}

std::vector<corpus::Tokens> side(const std::vector<corpus::TranslationPair>& pairs, bool target) {
  std::vector<corpus::Tokens> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(target ? p.tgt : p.src);
  return out;
}

template <class T>
eval::EvalResult eval_typed(const ModelParams<T>& params, const RunConfig& c,
                            const corpus::CorpusData& data, const std::string& task,
                            std::uint64_t seed) {
  const auto& fam = data.family;
  if (params.config.vocab_size < fam.vocab_size()) {
    throw ConfigError("checkpoint vocabulary (" + std::to_string(params.config.vocab_size) +
                      ") is smaller than the corpus vocabulary (" + std::to_string(fam.vocab_size()) + ")");
  }
  const eval::TransformerLM<T> lm(params);
  if (task == "classification") {
    eval::Template tpl;
    tpl.k = c.eval.k_shot;
    const auto t = eval::same_concept_task(fam, fam.language_id(c.eval.src), fam.language_id(c.eval.tgt));
    return eval::classification_eval(lm, t, tpl, c.eval.n, seed);
  }
  if (task == "translation") {
    eval::TranslationEvalConfig ec;
    ec.src_lang = fam.language_id(c.eval.src);
    ec.tgt_lang = fam.language_id(c.eval.tgt);
    ec.n = c.eval.n;
    ec.max_new_tokens = c.eval.max_new_tokens;
    ec.k_shot = c.eval.k_shot;
    ec.task = c.eval.translation_task;
    ec.seed = seed;
    ec.sources = eval::held_out_sources(data, ec.src_lang, ec.tgt_lang);
    return eval::translation_eval(lm, fam, ec);
  }
  // retrieval and metrics both work on the held-out pairs.
  if (data.heldout.size() < 2) throw UsageError("need at least 2 held-out pairs");
  const int layer = resolve_layer(c, params.config.n_layers);
  const num::Pooling pooling = c.eval.pooling.value_or(c.train.pooling);
  const auto src = repr::encode(params, corpus::pad_batch(side(data.heldout, false)), layer, pooling);
  const auto tgt = repr::encode(params, corpus::pad_batch(side(data.heldout, true)), layer, pooling);
  eval::EvalResult r;
  r.task = task;
  r.n = data.heldout.size();
  const double acc = repr::retrieval_acc_at_1(src, tgt);
  r.scores["retrieval_acc_at_1"] = acc;
  if (task == "retrieval") {
    r.accuracy = acc;
  } else {
    r.scores["l_align"] = repr::alignment_metric(src.vectors, tgt.vectors);
    r.scores["l_uniform"] = repr::uniformity_metric(repr::stack_rows(src.vectors, tgt.vectors));
  }
  return r;
}

int cmd_eval(const Common& common, const EvalArgs& a, std::ostream& out, bool to_stdout) {
  RunConfig c = common.load();
  const std::uint64_t seed = resolve_seed(c, common.seed);
  const std::string task = a.task.value_or(c.eval.task);
  if (task != "classification" && task != "retrieval" && task != "translation" && task != "metrics") {
    throw UsageError("unknown eval task '" + task + "' (expected classification, retrieval, translation or metrics)");
  }
  const fs::path ckpt = a.checkpoint ? fs::path(*a.checkpoint) : fs::path(c.paths.run_dir) / "checkpoint.afpt";
  const AnyParams params = load_checkpoint(ckpt);
  const corpus::CorpusData data = load_corpus_dir(a.corpus_dir.value_or(c.paths.corpus_dir));
  const eval::EvalResult r =
      std::visit([&](const auto& p) { return eval_typed(p, c, data, task, seed); }, params);
  json doc = io::eval_result_to_json(r, config_digest(c));
  doc["checkpoint_digest"] = digest_hex(read_file_bytes(ckpt));
  if (task == "metrics") {
    doc["l_align"] = r.scores.at("l_align");
    doc["l_uniform"] = r.scores.at("l_uniform");
  }
  const std::string text = doc.dump(2) + "\n";
  if (a.out) {
    io::write_text(*a.out, text);
  } else if (!to_stdout) {
    const fs::path dir = c.paths.run_dir;
    ensure_dir(dir);
    io::write_text(dir / ("eval_" + task + ".json"), text);
  }
  if (to_stdout) {
    out << text;
  } else {
    out << task << ": n " << r.n;
    for (const auto& [k, v] : r.scores) out << "  " << k << " " << fmt(v);
    out << "\n";
  }
  return kOk;
}

// --------------------------------------------------------- export-embeddings

struct ExportArgs {
  std::optional<std::string> checkpoint;
  std::optional<std::string> corpus_dir;
  std::optional<int> layer;
  std::optional<std::string> pooling;
  std::string split = "heldout";
  std::optional<std::size_t> limit;
  std::optional<std::string> out;
};

template <class T>
std::vector<json> export_typed(const ModelParams<T>& params, const corpus::CorpusData& data,
                               const std::vector<corpus::TranslationPair>& pairs, int layer,
                               num::Pooling pooling) {
  if (layer < 0 || layer > params.config.n_layers) {
    throw UsageError("layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(params.config.n_layers) + "]");
  }
  std::vector<corpus::Tokens> sentences;
  std::vector<int> langs;
  for (const auto& p : pairs) {
    sentences.push_back(p.src);
    langs.push_back(p.src_lang);
    sentences.push_back(p.tgt);
    langs.push_back(p.tgt_lang);
  }
  const auto pooled = repr::encode(params, corpus::pad_batch(sentences), layer, pooling);
  const repr::Pca2 pca = repr::pca2(pooled.vectors);
  std::vector<json> records;
  const std::size_t d = pooled.vectors.cols();
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    io::EmbeddingRecord rec;
    rec.id = i;
    rec.lang = data.family.language(langs[i]).name;
    rec.layer = layer;
    rec.pooling = pooling;
    rec.vector.assign(pooled.vectors.data().begin() + i * d, pooled.vectors.data().begin() + (i + 1) * d);
    rec.pca = {pca.coords.at(i, 0), pca.coords.at(i, 1)};
    records.push_back(io::embedding_to_json(rec));
  }
  return records;
}

int cmd_export(const Common& common, const ExportArgs& a, std::ostream& out) {
  const RunConfig c = common.load();
  const fs::path ckpt = a.checkpoint ? fs::path(*a.checkpoint) : fs::path(c.paths.run_dir) / "checkpoint.afpt";
  const AnyParams params = load_checkpoint(ckpt);
  const corpus::CorpusData data = load_corpus_dir(a.corpus_dir.value_or(c.paths.corpus_dir));
  std::vector<corpus::TranslationPair> pairs;
  if (a.split == "heldout") {
    pairs = data.heldout;
  } else if (a.split == "pairs") {
    pairs = data.pairs;
  } else {
    throw UsageError("unknown split '" + a.split + "' (expected heldout or pairs)");
  }
  if (a.limit && *a.limit < pairs.size()) pairs.resize(*a.limit);
  if (pairs.empty()) throw UsageError("no sentences to export");
  const int layer = a.layer.value_or(c.eval.layer.value_or(c.train.align_layer));
  const num::Pooling pooling =
      a.pooling ? num::parse_pooling(*a.pooling) : c.eval.pooling.value_or(c.train.pooling);
  const auto records =
      std::visit([&](const auto& p) { return export_typed(p, data, pairs, layer, pooling); }, params);
  const fs::path dest = a.out ? fs::path(*a.out) : fs::path(c.paths.run_dir) / "embeddings.jsonl";
  if (dest.has_parent_path()) ensure_dir(dest.parent_path());
  io::write_text(dest, io::to_jsonl(records));
  out << "wrote " << records.size() << " embeddings to " << dest.string() << "\n";
  return kOk;
}

// ----------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  int seeds = 20;
  bool corrupt = false;
  std::optional<std::string> out;
};

int cmd_gradcheck(const Common& common, const GradcheckArgs& a, std::ostream& out) {
  GradcheckConfig gc;
  gc.seeds = a.seeds;
  gc.corrupt_backward = a.corrupt;
  gc.base_seed = common.seed.value_or(0);
  const GradcheckReport r = run_gradcheck(gc);
  json rows = json::array();
  out << "loss  seeds  checks  worst_rel_err  direction  pass\n";
  for (const auto& row : r.rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-5s %6d %7d  %13.3e  %s  %s\n", row.loss.c_str(), row.seeds,
                  row.checks, row.worst_rel_err, row.worst_direction.c_str(), row.pass ? "ok" : "FAIL");
    out << line;
    rows.push_back({{"loss", row.loss},
                    {"seeds", row.seeds},
                    {"checks", row.checks},
                    {"worst_rel_err", row.worst_rel_err},
                    {"worst_direction", row.worst_direction},
                    {"worst_seed", row.worst_seed},
                    {"pass", row.pass}});
  }
  char worst[64];
  std::snprintf(worst, sizeof worst, "%.3e", r.worst_rel_err());
  out << "worst relative error " << worst << " (tolerance " << fmt(gc.tolerance) << ")\n";
  if (a.out) {
    io::write_text(*a.out, json{{"rows", rows}, {"pass", r.pass()}, {"worst_rel_err", r.worst_rel_err()}}.dump(2) + "\n");
  }
  return r.pass() ? kOk : kCheckFailed;
}

// --------------------------------------------------------------------- sweep

struct SweepArgs {
  std::string kind;
  std::vector<std::string> grid;
  std::optional<std::string> out;
};

int cmd_sweep(const Common& common, const SweepArgs& a, std::ostream& out) {
  const RunConfig c = common.load();
  const std::uint64_t seed = resolve_seed(c, common.seed);
  const SweepKind kind = parse_sweep_kind(a.kind);
  const auto grid = a.grid.empty() ? default_grid(kind, c) : a.grid;
  const auto rows = run_sweep(c, kind, grid, seed, [&](const SweepRow& r) {
    out << a.kind << "=" << r.value << "  " << report_line(r.final_report) << "  em "
        << fmt(r.translation_em) << "\n";
  });
  const fs::path dest = a.out ? fs::path(*a.out) : fs::path(c.paths.run_dir) / ("sweep_" + a.kind + ".csv");
  if (dest.has_parent_path()) ensure_dir(dest.parent_path());
  io::write_text(dest, sweep_csv(rows));
  out << "wrote " << rows.size() << " rows to " << dest.string() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Align-after-pretraining desk toolkit", "afp"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, metrics_c, export_c, grad_c, sweep_c;
  std::optional<std::string> gen_out, train_corpus, train_out;
  EvalArgs eval_a, metrics_a;
  ExportArgs export_a;
  GradcheckArgs grad_a;
  SweepArgs sweep_a;

  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus");
  gen_c.attach(gen);
  gen->add_option("--out", gen_out, "Output directory (default paths.corpus_dir)");

  auto* train = app.add_subcommand("train", "Train with the combined alignment objective");
  train_c.attach(train);
  train->add_option("--corpus", train_corpus, "Corpus directory (default paths.corpus_dir)");
  train->add_option("--out", train_out, "Run directory (default paths.run_dir)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_c.attach(ev);
  ev->add_option("--checkpoint", eval_a.checkpoint, "Checkpoint (default run_dir/checkpoint.afpt)");
  ev->add_option("--corpus", eval_a.corpus_dir, "Corpus directory (default paths.corpus_dir)");
  ev->add_option("--task", eval_a.task, "classification | retrieval | translation | metrics")
      ->check(CLI::IsMember({"classification", "retrieval", "translation", "metrics"}));
  ev->add_option("--out", eval_a.out, "Result JSON (default run_dir/eval_<task>.json)");

  auto* met = app.add_subcommand("metrics", "Print alignment/uniformity metrics of a checkpoint as JSON");
  metrics_c.attach(met);
  met->add_option("--checkpoint", metrics_a.checkpoint, "Checkpoint (default run_dir/checkpoint.afpt)");
  met->add_option("--corpus", metrics_a.corpus_dir, "Corpus directory (default paths.corpus_dir)");
  met->add_option("--out", metrics_a.out, "Also write the JSON here");

  auto* ex = app.add_subcommand("export-embeddings", "Write pooled sentence vectors with 2-D PCA");
  export_c.attach(ex);
  ex->add_option("--checkpoint", export_a.checkpoint, "Checkpoint (default run_dir/checkpoint.afpt)");
  ex->add_option("--corpus", export_a.corpus_dir, "Corpus directory (default paths.corpus_dir)");
  ex->add_option("--layer", export_a.layer, "Hidden layer to pool (default eval.layer, then train.align_layer)");
  ex->add_option("--pooling", export_a.pooling, "Pooling (default eval.pooling, then train.pooling)")->check(CLI::IsMember({"mean", "max", "last_token", "last"}));
  ex->add_option("--split", export_a.split, "heldout | pairs")->capture_default_str();
  ex->add_option("--limit", export_a.limit, "Export at most this many pairs");
  ex->add_option("--out", export_a.out, "JSONL path (default run_dir/embeddings.jsonl)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradients");
  grad_c.attach(gc);
  gc->add_option("--seeds", grad_a.seeds)->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_flag("--corrupt-backward", grad_a.corrupt, "Negative control with a broken GELU backward");
  gc->add_option("--out", grad_a.out, "Also write the report as JSON");

  auto* sw = app.add_subcommand("sweep", "Ablation sweep; one CSV row per grid value");
  sweep_c.attach(sw);
  sw->add_option("--kind", sweep_a.kind, "layer | p_src | pooling | alpha | policy")
      ->required()
      ->check(CLI::IsMember({"layer", "p_src", "pooling", "alpha", "policy"}));
  sw->add_option("--grid", sweep_a.grid, "Comma-separated grid values")->delimiter(',');
  sw->add_option("--out", sweep_a.out, "CSV path (default run_dir/sweep_<kind>.csv)");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      const auto subs = app.get_subcommands();
      out << (subs.empty() ? app.help() : subs.front()->help());
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen_corpus(gen_c, gen_out, out);
    if (*train) return cmd_train(train_c, train_corpus, train_out, out);
    if (*ev) return cmd_eval(eval_c, eval_a, out, false);
    if (*met) {
      metrics_a.task = "metrics";
      return cmd_eval(metrics_c, metrics_a, out, true);
    }
    if (*ex) return cmd_export(export_c, export_a, out);
    if (*gc) return cmd_gradcheck(grad_c, grad_a, out);
    if (*sw) return cmd_sweep(sweep_c, sweep_a, out);
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "error: " << e.what() << "\n";
    if (code == kUsage) {
      const auto subs = app.get_subcommands();
      if (!subs.empty()) err << subs.front()->help();
    }
    return code;
  }
  return kUsage;
}

}  // namespace afp::cli
