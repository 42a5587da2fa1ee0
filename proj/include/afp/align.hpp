#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "afp/corpus.hpp"
#include "afp/model.hpp"
#include "afp/repr.hpp"

namespace afp::align {

struct TrainConfig {
  int align_layer = 1;
  num::Pooling pooling = num::Pooling::mean;
  double tau = 0.05;
  double alpha = 1.5;
  double p_src = 0.5;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int steps = 2000;
  int mcl_batch = 32;
  int cif_batch = 32;
  int eval_every = 200;
  /// Average the src->tgt and tgt->src InfoNCE directions.
  bool symmetric_mcl = false;
  /// "f32" or "f64".
  std::string precision = "f32";

  void validate(const ModelConfig& model) const;
};

/// In-batch InfoNCE over cosine similarities. Row i of `h` is the anchor,
/// row i of `h_plus` its positive, and every row of `h_plus` enters the
/// denominator.
template <class T>
num::Var mcl_loss(num::Graph<T>& g, num::Var h, num::Var h_plus, double tau,
                  bool symmetric = false);

/// Value-only evaluation on pooled vectors.
double mcl_loss_value(const repr::Matrix& h, const repr::Matrix& h_plus, double tau,
                      bool symmetric = false);

template <class T>
num::LossResult cif_loss(num::Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                         const TokenBatch& cif_batch);

struct MclBatch {
  TokenBatch src;
  TokenBatch tgt;
};

template <class T>
struct AfpLoss {
  num::Var total;
  num::Var mcl;
  num::Var cif;
  double mcl_value = 0;
  double cif_value = 0;
  double total_value = 0;
};

/// L = L_MCL + alpha * L_CIF. The MCL term pools hidden_states[align_layer]
/// of two truncated forwards (source side and target side).
template <class T>
AfpLoss<T> afp_loss(num::Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                    const MclBatch& mcl_batch, const TokenBatch& cif_batch,
                    const TrainConfig& train);

template <class T>
num::Var pooled_layer(num::Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                      const TokenBatch& batch, int layer, num::Pooling pooling);

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <class T>
struct OptState {
  std::vector<num::Tensor<T>> m;
  std::vector<num::Tensor<T>> v;
  std::int64_t t = 0;

  static OptState zeros_like(const ModelParams<T>& params);
};

/// One AdamW update using the gradients stored in params. Decay is applied
/// to the pre-update weights, decoupled from the adaptive step.
template <class T>
void adamw_step(ModelParams<T>& params, OptState<T>& state, const AdamWConfig& config);

struct AlignReport {
  int step = 0;
  double l_align = 0;
  double l_uniform = 0;
  double retrieval_acc_at_1 = 0;
  double mcl_loss = 0;
  double cif_loss = 0;
  double afp_loss = 0;
  std::map<std::string, double> scores;
};

/// Diagnostics on held-out pairs and held-out CIF samples.
template <class T>
AlignReport evaluate_alignment(const ModelParams<T>& params, const corpus::CorpusData& data,
                               const TrainConfig& train, int step);

/// Mean NLL of plain same-language instruction tuning: each CIF sample's
/// response rebuilt in its source language.
template <class T>
double instruction_nll(const ModelParams<T>& params, const corpus::CorpusData& data,
                       std::span<const corpus::CifSample> samples);

struct TrainHooks {
  /// Where to write checkpoint.afpt and last_good.afpt; unset keeps
  /// everything in memory.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const AlignReport&)> on_report;
};

template <class T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<AlignReport> reports;
};

/// Runs `steps` AFP updates from init_params(model, seed). Reports are
/// produced at every multiple of eval_every (including step 0).
template <class T>
TrainResult<T> train(const ModelConfig& model, const TrainConfig& config,
                     const corpus::CorpusData& data, std::uint64_t seed,
                     const TrainHooks& hooks = {});

template <class T>
TrainResult<T> train_from(ModelParams<T> init, const TrainConfig& config,
                          const corpus::CorpusData& data, std::uint64_t seed,
                          const TrainHooks& hooks = {});

}  // namespace afp::align
