#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afp/model.hpp"
#include "afp/ops.hpp"

namespace afp {

struct GradcheckConfig {
  ModelConfig model{64, 16, 2, 2, 64, 32};
  int concept_count = 26;
  int max_len = 5;
  int batch = 4;
  int seeds = 20;
  std::uint64_t base_seed = 0;
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Std of the Gaussian noise added to the initial parameters.
  double jitter = 0.3;
  double tau = 0.05;
  double alpha = 1.5;
  int align_layer = 1;
  num::Pooling pooling = num::Pooling::mean;
  /// Negative control: run with a deliberately wrong GELU backward rule.
  bool corrupt_backward = false;
};

struct GradcheckRow {
  std::string loss;  // mcl | cif | afp
  int seeds = 0;
  int checks = 0;
  double worst_rel_err = 0;
  std::string worst_direction;
  int worst_seed = 0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  bool pass() const;
  double worst_rel_err() const;
};

/// Below this magnitude a derivative is treated as zero; float64 central
/// differences at h = 1e-5 carry roughly 1e-10 of roundoff.
inline constexpr double kRelErrFloor = 1e-5;

/// |a - n| / max(|a|, |n|, kRelErrFloor).
double relative_error(double analytic, double numeric);

/// Compares backprop directional derivatives with central differences in
/// float64. Each seed checks one random unit direction per parameter tensor
/// and one over all parameters jointly.
GradcheckReport run_gradcheck(const GradcheckConfig& config);

}  // namespace afp
