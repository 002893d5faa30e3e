#pragma once

#include <array>

#include "fsmoe/cost_models.hpp"
#include "fsmoe/schedule_sim.hpp"
#include "fsmoe/workload.hpp"

namespace fsmoe {

// Everything the degree optimizer needs for one phase of one layer.
struct PhaseInputs {
  TaskVolumes volumes;
  ClusterProfile profile;
  double t_gar_ms = 0.0;   // gradient-sync time competing for the inter link
  int exp_multiplier = 1;  // 1 forward, 2 backward
};

// Expert launch model: gemm model scaled by the number of GEMM launches
// (gemm_count, doubled in backward). n volume stays per-GEMM.
LinearModel effective_exp_model(const ClusterProfile& profile,
                                const TaskVolumes& vol, int exp_multiplier);

// Per-chunk durations at degree r (volumes split n/r, real-valued).
struct PhaseChunkTimes {
  double a2a = 0.0;
  double ag = 0.0;
  double rs = 0.0;
  double exp = 0.0;
};
PhaseChunkTimes phase_chunk_times(const PhaseInputs& in, int r);

// Strict inequalities governing which schedule shape is optimal at degree r.
using PredicateVector = std::array<bool, 7>;
PredicateVector q_predicates(const PhaseInputs& in, int r);

// Whether `predicates` certify schedule case `case_id` (1..4).
bool case_feasible(int case_id, const PredicateVector& predicates);

// Closed-form span of schedule case `case_id` at degree r.
double case_cost(int case_id, const PhaseInputs& in, int r);

struct CaseMin {
  bool feasible = false;
  int r = 1;
  double t_ms = 0.0;
};

// Minimizes case_cost over integers r in [1, r_max] subject to the case's
// predicates holding at r. Every case cost is a*r + b/r + c with a, b >= 0,
// so the scan, the clamped stationary point sqrt(b/a), and the feasibility
// boundaries agree on the argmin.
CaseMin minimize_case(int case_id, const PhaseInputs& in, int r_max);

struct DegreeChoice {
  int r = 1;
  int case_id = 0;  // 1..4; 0 when the brute-force fallback decided
  double t_moe_ms = 0.0;
  PredicateVector q{};    // predicates at the chosen r
  bool boundary = false;  // no case was certified; simulation chose the degree
};

// Solves all four cases and returns the global minimum (ties: smaller r, then
// smaller case id). Falls back to brute-force simulation when every case is
// infeasible at every degree.
DegreeChoice find_optimal_pipeline_degree(const PhaseInputs& in, int r_max = 16);

// Inter-link idle inside the layer span at degree r, available for gradient
// sync. Defined for cases 2..4 (case 1 keeps the inter link saturated);
// clamped at 0. Throws InvariantError for case 1 or unknown ids.
double overlappable_moe_time(int case_id, const PhaseInputs& in, int r);

struct PipelinePlan {
  int r_fwd = 1;
  int case_fwd = 0;
  double t_moe_fwd_ms = 0.0;
  PredicateVector q_fwd{};
  bool boundary_fwd = false;

  int r_bwd = 1;
  int case_bwd = 0;
  double t_moe_bwd_ms = 0.0;
  PredicateVector q_bwd{};
  bool boundary_bwd = false;

  double t_gar_bwd_ms = 0.0;      // grad-sync input used for the backward solve
  double t_olp_moe_bwd_ms = 0.0;  // idle at r_bwd with grad sync zeroed
};

// Forward plan at (t_gar = 0, multiplier 1); backward at (t_gar_bwd_ms,
// multiplier 2). The phases are independent.
PipelinePlan plan_layer(const TaskVolumes& vol, const ClusterProfile& profile,
                        double t_gar_bwd_ms, int r_max = 16);

}  // namespace fsmoe
