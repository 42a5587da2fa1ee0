#include "afp/align.hpp"

#include <cmath>
#include <numeric>

#include "afp/checkpoint.hpp"

namespace afp::align {

using num::Graph;
using num::Var;

void TrainConfig::validate(const ModelConfig& model) const {
  auto bad = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(tau > 0)) bad("tau must be positive");
  if (!(alpha >= 0)) bad("alpha must be non-negative");
  if (!(p_src >= 0 && p_src <= 1)) bad("p_src must lie in [0, 1]");
  if (align_layer < 0 || align_layer > model.n_layers) {
    bad("align_layer must lie in [0, " + std::to_string(model.n_layers) + "]");
  }
  if (!(lr >= 0)) bad("lr must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad("betas must lie in [0, 1)");
  if (!(eps > 0)) bad("eps must be positive");
  if (!(weight_decay >= 0)) bad("weight_decay must be non-negative");
  if (steps < 0) bad("steps must be non-negative");
  if (mcl_batch < 2) bad("mcl_batch must be at least 2");
  if (cif_batch < 1) bad("cif_batch must be at least 1");
  if (eval_every < 1) bad("eval_every must be at least 1");
  if (precision != "f32" && precision != "f64") bad("precision must be f32 or f64");
}

template <class T>
Var mcl_loss(Graph<T>& g, Var h, Var h_plus, double tau, bool symmetric) {
  if (g.shape(h) != g.shape(h_plus) || g.shape(h).size() != 2) {
    throw DimensionError("mcl_loss: pooled batches differ, " + num::shape_str(g.shape(h)) + " vs " +
                         num::shape_str(g.shape(h_plus)));
  }
  const std::size_t n = g.shape(h)[0];
  if (n < 2) throw UsageError("mcl_loss: needs at least 2 pairs for in-batch negatives");
  if (!(tau > 0)) throw UsageError("mcl_loss: tau must be positive");
  Var a = num::l2_normalize_rows(g, h);
  Var b = num::l2_normalize_rows(g, h_plus);
  Var logits = num::scale(g, num::matmul(g, a, num::transpose(g, b)), 1.0 / tau);
  std::vector<std::int32_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  Var forward_dir = num::cross_entropy_rows(g, logits, diag, {}).value;
  if (!symmetric) return forward_dir;
  Var backward_dir = num::cross_entropy_rows(g, num::transpose(g, logits), diag, {}).value;
  return num::scale(g, num::add(g, forward_dir, backward_dir), 0.5);
}

double mcl_loss_value(const repr::Matrix& h, const repr::Matrix& h_plus, double tau, bool symmetric) {
  Graph<double> g;
  return g.value(mcl_loss(g, g.constant_ref(h), g.constant_ref(h_plus), tau, symmetric)).item();
}

template <class T>
num::LossResult cif_loss(Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                         const TokenBatch& cif_batch) {
  return sequence_nll(g, p, config, cif_batch);
}

template <class T>
Var pooled_layer(Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                 const TokenBatch& batch, int layer, num::Pooling pooling) {
  ForwardResult fr = forward(g, p, config, batch, ForwardOptions{layer});
  return num::pool_rows(g, fr.hidden_states.back(), batch.batch, batch.seq, batch.pad_mask, pooling);
}

template <class T>
AfpLoss<T> afp_loss(Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                    const MclBatch& mcl_batch, const TokenBatch& cif_batch,
                    const TrainConfig& train) {
  if (mcl_batch.src.batch != mcl_batch.tgt.batch) {
    throw UsageError("afp_loss: MCL source and target batches differ in size");
  }
  AfpLoss<T> out;
  Var h = pooled_layer(g, p, config, mcl_batch.src, train.align_layer, train.pooling);
  Var hp = pooled_layer(g, p, config, mcl_batch.tgt, train.align_layer, train.pooling);
  out.mcl = mcl_loss(g, h, hp, train.tau, train.symmetric_mcl);
  out.cif = cif_loss(g, p, config, cif_batch).value;
  out.total = num::add(g, out.mcl, num::scale(g, out.cif, train.alpha));
  out.mcl_value = g.value(out.mcl).item();
  out.cif_value = g.value(out.cif).item();
  out.total_value = g.value(out.total).item();
  return out;
}

template <class T>
OptState<T> OptState<T>::zeros_like(const ModelParams<T>& params) {
  OptState s;
  for (const auto& p : params.tensors) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

template <class T>
void adamw_step(ModelParams<T>& params, OptState<T>& state, const AdamWConfig& c) {
  if (state.m.size() != params.tensors.size()) {
    throw DimensionError("adamw_step: optimizer state does not match the parameters");
  }
  for (const auto& p : params.tensors) {
    if (!num::all_finite<T>(p.grad.data())) {
      throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    auto& p = params.tensors[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.shape() != p.value.shape()) throw DimensionError("adamw_step: moment shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = p.grad[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double w = p.value[i];
      p.value[i] = static_cast<T>(w - c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * w));
    }
  }
}

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

template <class T>
double batch_nll(const ModelParams<T>& params, const TokenBatch& batch) {
  Graph<T> g;
  BoundParams bp = bind_const(g, params);
  return g.value(sequence_nll(g, bp, params.config, batch).value).item();
}

}  // namespace

template <class T>
AlignReport evaluate_alignment(const ModelParams<T>& params, const corpus::CorpusData& data,
                               const TrainConfig& train, int step) {
  if (data.heldout.size() < 2) throw UsageError("alignment report needs at least 2 held-out pairs");
  const auto idx = all_indices(data.heldout.size());
  const TokenBatch src = corpus::pair_side_batch(data.heldout, idx, false);
  const TokenBatch tgt = corpus::pair_side_batch(data.heldout, idx, true);
  const repr::PooledBatch hs = repr::encode(params, src, train.align_layer, train.pooling);
  const repr::PooledBatch ht = repr::encode(params, tgt, train.align_layer, train.pooling);
  AlignReport r;
  r.step = step;
  r.l_align = repr::alignment_metric(hs.vectors, ht.vectors);
  r.l_uniform = repr::uniformity_metric(repr::stack_rows(hs.vectors, ht.vectors));
  r.retrieval_acc_at_1 = repr::retrieval_acc_at_1(hs, ht);
  r.mcl_loss = mcl_loss_value(hs.vectors, ht.vectors, train.tau, train.symmetric_mcl);
  if (!data.heldout_cif.empty()) {
    r.cif_loss = batch_nll(params, corpus::cif_batch(data.heldout_cif, all_indices(data.heldout_cif.size())));
  }
  r.afp_loss = r.mcl_loss + train.alpha * r.cif_loss;
  return r;
}

template <class T>
double instruction_nll(const ModelParams<T>& params, const corpus::CorpusData& data,
                       std::span<const corpus::CifSample> samples) {
  std::vector<corpus::CifSample> plain;
  for (const auto& s : samples) {
    plain.push_back(corpus::build_cif_sample(data.family, s.task, s.context(), s.source_lang, s.source_lang));
  }
  return batch_nll(params, corpus::cif_batch(plain, all_indices(plain.size())));
}

template <class T>
TrainResult<T> train(const ModelConfig& model, const TrainConfig& config,
                     const corpus::CorpusData& data, std::uint64_t seed, const TrainHooks& hooks) {
  return train_from(init_params<T>(model, seed), config, data, seed, hooks);
}

template <class T>
TrainResult<T> train_from(ModelParams<T> init, const TrainConfig& config,
                          const corpus::CorpusData& data, std::uint64_t seed,
                          const TrainHooks& hooks) {
  const ModelConfig& model = init.config;
  model.validate();
  config.validate(model);
  if (data.family.vocab_size() > model.vocab_size) {
    throw ConfigError("model vocab_size " + std::to_string(model.vocab_size) +
                      " is smaller than the corpus vocabulary " +
                      std::to_string(data.family.vocab_size()));
  }
  if (data.pairs.size() < static_cast<std::size_t>(config.mcl_batch)) {
    throw UsageError("fewer translation pairs than one MCL batch");
  }
  if (data.cif.empty()) throw UsageError("no CIF samples to train on");

  TrainResult<T> result{std::move(init), {}};
  ModelParams<T>& params = result.params;
  OptState<T> opt = OptState<T>::zeros_like(params);
  const AdamWConfig adamw{config.lr, config.beta1, config.beta2, config.eps, config.weight_decay};
  corpus::BatchIterator mcl_it(data.pairs.size(), config.mcl_batch, splitmix64(seed ^ hash_label("mcl")), true);
  corpus::BatchIterator cif_it(data.cif.size(), config.cif_batch, splitmix64(seed ^ hash_label("cif")),
                               data.cif.size() >= static_cast<std::size_t>(config.cif_batch));

  auto report_at = [&](int step) {
    AlignReport r = evaluate_alignment(params, data, config, step);
    result.reports.push_back(r);
    if (hooks.out_dir) save_checkpoint(*hooks.out_dir / "last_good.afpt", params);
    if (hooks.on_report) hooks.on_report(r);
  };

  report_at(0);
  for (int step = 1; step <= config.steps; ++step) {
    const auto mi = mcl_it.next();
    const auto ci = cif_it.next();
    MclBatch mb{corpus::pair_side_batch(data.pairs, mi, false), corpus::pair_side_batch(data.pairs, mi, true)};
    const TokenBatch cb = corpus::cif_batch(data.cif, ci);
    params.zero_grad();
    try {
      Graph<T> g;
      BoundParams bp = bind(g, params, true);
      AfpLoss<T> loss = afp_loss(g, bp, model, mb, cb, config);
      if (!std::isfinite(loss.total_value)) throw NumericError("loss is not finite");
      g.backward(loss.total);
      adamw_step(params, opt, adamw);
    } catch (const NumericError& e) {
      throw TrainingError("training aborted at step " + std::to_string(step) + ": " + e.what());
    } catch (const TrainingError& e) {
      throw TrainingError("training aborted at step " + std::to_string(step) + ": " + e.what());
    }
    if (step % config.eval_every == 0) report_at(step);
  }
  if (hooks.out_dir) save_checkpoint(*hooks.out_dir / "checkpoint.afpt", params);
  return result;
}

#define AFP_INSTANTIATE_ALIGN(T)                                                                  \
  template Var mcl_loss<T>(Graph<T>&, Var, Var, double, bool);                                    \
  template num::LossResult cif_loss<T>(Graph<T>&, const BoundParams&, const ModelConfig&,         \
                                       const TokenBatch&);                                        \
  template Var pooled_layer<T>(Graph<T>&, const BoundParams&, const ModelConfig&,                 \
                               const TokenBatch&, int, num::Pooling);                             \
  template AfpLoss<T> afp_loss<T>(Graph<T>&, const BoundParams&, const ModelConfig&,              \
                                  const MclBatch&, const TokenBatch&, const TrainConfig&);        \
  template struct OptState<T>;                                                                    \
  template void adamw_step<T>(ModelParams<T>&, OptState<T>&, const AdamWConfig&);                 \
  template AlignReport evaluate_alignment<T>(const ModelParams<T>&, const corpus::CorpusData&,    \
                                             const TrainConfig&, int);                            \
  template double instruction_nll<T>(const ModelParams<T>&, const corpus::CorpusData&,            \
                                     std::span<const corpus::CifSample>);                         \
  template TrainResult<T> train<T>(const ModelConfig&, const TrainConfig&,                        \
                                   const corpus::CorpusData&, std::uint64_t, const TrainHooks&);  \
  template TrainResult<T> train_from<T>(ModelParams<T>, const TrainConfig&,                       \
                                        const corpus::CorpusData&, std::uint64_t,                 \
                                        const TrainHooks&);

AFP_INSTANTIATE_ALIGN(float)
AFP_INSTANTIATE_ALIGN(double)

}  // namespace afp::align
