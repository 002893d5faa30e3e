#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsmoe/common.hpp"

namespace fsmoe {

// Affine duration model: t(n) = alpha_ms + n * beta_ms_per_unit.
// n counts 4-byte float elements for communication kinds and MACs for GEMM.
struct LinearModel {
  double alpha_ms = 0.0;
  double beta_ms_per_unit = 0.0;
};

// Full-size launch: t(n).
double predict_ms(const LinearModel& m, double n);

// One of r equal chunks: alpha_ms + (n / r) * beta_ms_per_unit.
// Each chunk pays the full launch overhead. Requires r >= 1.
double chunk_ms(const LinearModel& m, double n, int r);

// Inverse of predict_ms: elements transferable within t_ms.
// Clamped to 0 when t_ms <= alpha_ms. Requires beta > 0.
double invert_elements(const LinearModel& m, double t_ms);

struct FitResult {
  LinearModel model;
  double r_squared = 0.0;
  bool clamped = false;  // a negative OLS coefficient was clamped to zero
};

// Ordinary least squares over (n, t_ms) samples.
// Negative alpha or beta is clamped to 0 and the other coefficient refit.
// r_squared = 1 - SS_res/SS_tot; if SS_tot == 0 it is 1.0 when all residuals
// vanish and 0.0 otherwise. Requires at least 2 samples.
FitResult fit_linear(std::span<const std::pair<double, double>> samples);

// Per-kind models for one cluster. Communication kinds are element-based,
// gemm is MAC-based.
struct ClusterProfile {
  LinearModel a2a;   // all-to-all (dispatch and combine)
  LinearModel ag;    // allgather
  LinearModel rs;    // reducescatter
  LinearModel ar;    // allreduce (gradient sync)
  LinearModel gemm;  // expert / dense matmul
};

// Task kinds accepted in benchmark CSV files ("a2a", "ag", "rs", "ar", "gemm").
struct BenchSample {
  std::string kind;
  double n = 0.0;
  double t_ms = 0.0;
};

struct ProfileFit {
  ClusterProfile profile;
  double min_r_squared = 0.0;             // worst kind
  std::vector<std::string> clamped_kinds; // kinds whose fit was clamped
};

// Fits one model per kind. All five kinds must be present.
// Throws FitQualityError when any kind's r_squared < min_r2.
ProfileFit fit_profile(const std::vector<BenchSample>& samples, double min_r2);

}  // namespace fsmoe
