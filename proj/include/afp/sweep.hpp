#pragma once

#include <functional>
#include <string>
#include <vector>

#include "afp/config.hpp"

namespace afp {

enum class SweepKind { layer, p_src, pooling, alpha, policy };

std::string_view sweep_kind_name(SweepKind k);
SweepKind parse_sweep_kind(std::string_view s);

/// Grid used when none is given: every layer 0..n_layers, p_src in
/// {0, .25, .5, .75, 1}, all pooling methods, alpha in {1, 1.5, 2}, and
/// both alignment policies.
std::vector<std::string> default_grid(SweepKind kind, const RunConfig& base);

/// Base config with one grid value applied.
RunConfig apply_grid_value(const RunConfig& base, SweepKind kind, const std::string& value);

struct SweepRow {
  std::string kind;
  std::string value;
  int align_layer = 0;
  std::string pooling;
  double alpha = 0;
  double p_src = 0;
  std::string policy;
  corpus::DataAudit audit;
  align::AlignReport final_report;
  double translation_em = 0;
  double translation_bleu = 0;
};

/// Regenerates the corpus and trains once per grid value, all from the
/// same seed.
std::vector<SweepRow> run_sweep(const RunConfig& base, SweepKind kind,
                                const std::vector<std::string>& grid, std::uint64_t seed,
                                const std::function<void(const SweepRow&)>& on_row = {});

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace afp
