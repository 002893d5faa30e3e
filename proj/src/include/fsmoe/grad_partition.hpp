#pragma once

#include <cstdint>
#include <vector>

#include "fsmoe/cost_models.hpp"
#include "fsmoe/pipeline_optimizer.hpp"
#include "fsmoe/workload.hpp"

namespace fsmoe {

// One generalized layer (an MoE layer plus the adjacent dense ops), listed in
// backward traversal order: index 0 runs first in the backward pass.
struct GradLayer {
  TaskVolumes volumes;
  double t_olp_dense_ms = 0.0;  // measured dense window adjacent to the layer
  double n_grad = 0.0;          // gradient elements this layer produces
};

struct DeParams {
  int population = 0;  // 0 -> 15 * dims, floor 8
  int generations = 200;
  double weight = 0.8;     // differential weight F
  double crossover = 0.9;  // crossover rate CR
  std::uint64_t seed = 1;
};

// Sizing of one layer's sync windows: the zero-sync backward solve fixes the
// degree, the case, and the inter-link idle available for gradient sync.
struct SyncWindow {
  int degree = 1;
  int case_id = 0;
  double t_olp_moe_ms = 0.0;
  double t_olp_dense_ms = 0.0;
  double total_ms() const { return t_olp_moe_ms + t_olp_dense_ms; }
};
SyncWindow sync_window(const GradLayer& layer, const ClusterProfile& profile,
                       int r_max);

struct Step1Result {
  std::vector<double> n_first;        // window-absorbed elements per layer
  std::vector<double> n_first_dense;  // share riding the dense window
  std::vector<double> n_first_moe;    // share riding the post-dispatch slot
  std::vector<double> remainder;      // unabsorbed elements by origin layer
};

// Greedy pass in traversal order: each layer's windows absorb as much of the
// pending older-layer gradient as fits (dense window first), oldest origin
// first; the layer's own gradient joins the pool afterwards.
// Absorbed + remaining = produced, exactly.
Step1Result step1_assign(const std::vector<GradLayer>& layers,
                         const ClusterProfile& profile,
                         const std::vector<SyncWindow>& windows);

// Differential evolution (rand/1/bin) over the extra per-layer slot load
// x[i]. Candidates are repaired into the availability polytope: layer i may
// sync at most the remainder produced at layers <= i not yet assigned.
// slot_base[i] holds elements step 1 already committed to slot i; slot i
// issues one launch for both, so the objective prices layer i with
// t_gar = t_ar(slot_base[i] + x[i]). Empty slot_base means all zeros.
// Objective: sum of re-optimized layer spans plus the tail launch.
// Deterministic for a fixed seed. Throws ConfigError when population < 4.
std::vector<double> step2_optimize(const std::vector<GradLayer>& layers,
                                   const std::vector<double>& remainder,
                                   const ClusterProfile& profile,
                                   const DeParams& de, int r_max,
                                   const std::vector<double>& slot_base = {});

struct LayerAssignment {
  double n_first = 0.0;
  double n_first_dense = 0.0;
  double n_first_moe = 0.0;
  double x_g = 0.0;
  double t_gar_ms = 0.0;  // sync time attributed to the layer, 0 when empty
  SyncWindow window;
};

struct PartitionPlan {
  std::vector<LayerAssignment> layers;
  double tail_elements = 0.0;  // synced after the last layer
  double tail_ms = 0.0;
  double objective_ms = 0.0;  // step-2 objective at the returned vector
  bool step2_ran = false;
};

// Step 1, then step 2 when gradient remains; leftovers become the tail.
// Conservation: sum(n_first) + sum(x_g) + tail == sum(n_grad) exactly.
PartitionPlan build_partition_plan(const std::vector<GradLayer>& layers,
                                   const ClusterProfile& profile,
                                   const DeParams& de, int r_max = 16);

}  // namespace fsmoe
