#include <cstdlib>
#include <fstream>

#include "afp/config.hpp"
#include "afp/io.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace afp;
using nlohmann::json;

namespace {

corpus::CorpusData small_data() {
  corpus::CorpusConfig c;
  c.family.concept_count = 16;
  c.family.languages = {{"EN", corpus::OrderTransform::identity, {}},
                        {"ZH", corpus::OrderTransform::reverse, {}},
                        {"TH", corpus::OrderTransform::identity, {}}};
  c.n_pairs_per_combination = 12;
  c.n_cif = 20;
  c.n_heldout = 6;
  c.heldout_src = "EN";
  c.heldout_tgt = "ZH";
  c.pivot = "EN";
  c.n_heldout_cif = 5;
  return corpus::generate_corpus(c, 0.5, 21);
}

struct EnvGuard {
  EnvGuard(const char* v) {
    if (v) {
      setenv("AFP_SEED", v, 1);
    } else {
      unsetenv("AFP_SEED");
    }
  }
  ~EnvGuard() { unsetenv("AFP_SEED"); }
};

}  // namespace

TEST_SUITE("config_io") {

TEST_CASE("config round-trips through canonical JSON") {
  RunConfig c;
  c.seed = 12;
  c.train.alpha = 0.25;
  c.train.pooling = num::Pooling::last_token;
  c.corpus.policy = corpus::AlignmentPolicy::Kind::pairwise;
  c.corpus.tasks = {corpus::Task::reverse};
  c.corpus.family.languages[1].order = corpus::OrderTransform::reverse;
  c.corpus.family.languages[1].offset = 100;
  c.eval.layer = 2;
  const std::string text = dump_canonical(to_json(c));
  const RunConfig back = run_config_from_json(json::parse(text));
  CHECK(dump_canonical(to_json(back)) == text);
  CHECK(back.seed == 12u);
  CHECK(back.train.alpha == 0.25);
  CHECK(back.corpus.family.languages[1].offset == 100);
  CHECK(back.eval.layer == 2);
  CHECK_FALSE(back.eval.pooling.has_value());
  CHECK(text.back() == '\n');
  // Defaults survive an empty document.
  CHECK(dump_canonical(to_json(run_config_from_json(json::object()))) == dump_canonical(to_json(RunConfig{})));
  CHECK(config_digest(c) == config_digest(back));
  c.train.alpha = 0.5;
  CHECK(config_digest(c) != config_digest(back));
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"trian": {}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"alpah": 1}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"corpus": {"family": {"languages": [{"name": "A", "color": 1}]}}})")),
                  ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"seed": -3})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"seed": 1.5})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"precision": "bf16"}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"tau": "hot"}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"corpus": {"policy": "star"}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse("[1, 2]")), ConfigError);
}

TEST_CASE("overrides") {
  json doc = to_json(RunConfig{});
  apply_override(doc, "train.alpha=0");
  apply_override(doc, "eval.src=L1");
  apply_override(doc, "train.pooling=\"max\"");
  apply_override(doc, "seed=9");
  const RunConfig c = run_config_from_json(doc);
  CHECK(c.train.alpha == 0.0);
  CHECK(c.eval.src == "L1");
  CHECK(c.train.pooling == num::Pooling::max);
  CHECK(c.seed == 9u);
  CHECK_THROWS_AS(apply_override(doc, "novalue"), UsageError);
  CHECK_THROWS_AS(apply_override(doc, "seed.x=1"), ConfigError);
  json bad = to_json(RunConfig{});
  apply_override(bad, "train.nope=1");
  CHECK_THROWS_AS(run_config_from_json(bad), ConfigError);

  const auto dir = testutil::temp_dir("overrides");
  RunConfig base;
  base.train.steps = 7;
  save_run_config(dir / "c.json", base);
  const RunConfig loaded = load_with_overrides(dir / "c.json", {"train.lr=0.01"});
  CHECK(loaded.train.steps == 7);
  CHECK(loaded.train.lr == 0.01);
  CHECK_THROWS_AS(load_run_config(dir / "absent.json"), IoError);
  std::ofstream(dir / "broken.json") << "{ nope";
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
}

TEST_CASE("seed precedence") {
  RunConfig c;
  {
    EnvGuard env(nullptr);
    CHECK(resolve_seed(c, std::nullopt) == 0u);
  }
  {
    EnvGuard env("33");
    CHECK(resolve_seed(c, std::nullopt) == 33u);
    c.seed = 4;
    CHECK(resolve_seed(c, std::nullopt) == 4u);
    CHECK(resolve_seed(c, 5u) == 5u);
  }
  c.seed.reset();
  for (const char* bad : {"x1", "-1", "12abc"}) {
    EnvGuard env(bad);
    CHECK_THROWS_AS(resolve_seed(c, std::nullopt), ConfigError);
  }
}

TEST_CASE("model vocabulary is derived from the family") {
  RunConfig c;
  const auto fam = corpus::make_family(c.corpus.family, 1);
  CHECK(resolve_model(c, fam).vocab_size == fam.vocab_size());
  c.model.vocab_size = fam.vocab_size() - 1;
  CHECK_THROWS_AS(resolve_model(c, fam), ConfigError);
  c.model.vocab_size = fam.vocab_size() + 10;
  CHECK(resolve_model(c, fam).vocab_size == fam.vocab_size() + 10);
}

TEST_CASE("corpus files round-trip") {
  const auto data = small_data();
  const auto dir = testutil::temp_dir("corpus_rt");
  io::write_corpus(dir, data);
  const auto back = io::read_corpus(dir);
  CHECK(back.family.vocab_size() == data.family.vocab_size());
  CHECK(back.family.transition() == data.family.transition());
  REQUIRE(back.pairs.size() == data.pairs.size());
  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    CHECK(back.pairs[i].src == data.pairs[i].src);
    CHECK(back.pairs[i].tgt == data.pairs[i].tgt);
    CHECK(back.pairs[i].src_lang == data.pairs[i].src_lang);
    CHECK(back.pairs[i].tgt_lang == data.pairs[i].tgt_lang);
  }
  REQUIRE(back.cif.size() == data.cif.size());
  for (std::size_t i = 0; i < data.cif.size(); ++i) {
    CHECK(back.cif[i].tokens == data.cif[i].tokens);
    CHECK(back.cif[i].loss_mask == data.cif[i].loss_mask);
    CHECK(back.cif[i].task == data.cif[i].task);
  }
  CHECK(back.heldout.size() == data.heldout.size());
  CHECK(back.heldout_cif.size() == data.heldout_cif.size());
  // Writing twice gives identical bytes.
  const auto dir2 = testutil::temp_dir("corpus_rt2");
  io::write_corpus(dir2, back);
  for (const char* f : {"family.json", "pairs.jsonl", "cif.jsonl", "heldout.jsonl", "heldout_cif.jsonl"}) {
    CHECK(io::read_text(dir / f) == io::read_text(dir2 / f));
  }
  CHECK(io::read_jsonl(dir / "pairs.jsonl").size() == data.pairs.size());
}

TEST_CASE("tampered corpus files are reported as data errors") {
  const auto data = small_data();
  const auto dir = testutil::temp_dir("corpus_bad");
  io::write_corpus(dir, data);

  json fam = json::parse(io::read_text(dir / "family.json"));
  std::swap(fam["permutations"]["ZH"][0], fam["permutations"]["ZH"][1]);
  CHECK_THROWS_AS(io::family_from_json(fam), DataError);

  const auto& f = data.family;
  json rec = io::pair_to_json(data.pairs[0], f);
  CHECK(io::pair_from_json(rec, f).src == data.pairs[0].src);
  rec["src"]["tokens"].push_back(100000);
  CHECK_THROWS_AS(io::pair_from_json(rec, f), DataError);
  json missing = io::pair_to_json(data.pairs[0], f);
  missing.erase("tgt");
  CHECK_THROWS_AS(io::pair_from_json(missing, f), DataError);

  json cif = io::cif_to_json(data.cif[0], f);
  cif["loss_mask"].erase(0);
  CHECK_THROWS_AS(io::cif_from_json(cif, f), DataError);

  io::write_text(dir / "cif.jsonl", io::read_text(dir / "cif.jsonl") + "{not json\n");
  CHECK_THROWS_AS(io::read_corpus(dir), DataError);
  CHECK_THROWS_AS(io::read_corpus(dir / "nowhere"), IoError);
}

TEST_CASE("report and embedding records") {
  align::AlignReport r;
  r.step = 4;
  r.l_align = 0.5;
  r.scores["extra"] = 1.0;
  const json j = io::report_to_json(r);
  CHECK(j.at("step") == 4);
  CHECK(j.at("l_align") == 0.5);
  for (const char* k : {"l_uniform", "retrieval_acc_at_1", "mcl_loss", "cif_loss", "afp_loss"}) CHECK(j.contains(k));

  io::EmbeddingRecord e;
  e.id = 3;
  e.lang = "L1";
  e.layer = 2;
  e.pooling = num::Pooling::max;
  e.vector = {0.25, -1.0};
  e.pca = {1.0, 2.0};
  const json ej = io::embedding_to_json(e);
  CHECK(ej.at("id") == 3);
  CHECK(ej.at("pooling") == "max");
  CHECK(ej.at("vector").size() == 2);
  CHECK(ej.at("pca")[1] == 2.0);

  eval::EvalResult er;
  er.task = "classification";
  const json ej2 = io::eval_result_to_json(er, "abc");
  CHECK(ej2.at("accuracy").is_null());
  CHECK(ej2.at("config_digest") == "abc");
}

}  // TEST_SUITE
