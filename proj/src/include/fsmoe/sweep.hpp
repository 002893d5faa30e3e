#pragma once

#include <string>
#include <vector>

#include "fsmoe/pipeline_optimizer.hpp"
#include "fsmoe/schedule_sim.hpp"
#include "fsmoe/workload.hpp"

namespace fsmoe {

// Candidate grid over layer shapes: 3 batches x 3 head counts x 3 sequence
// lengths x 3 widths x 3 hidden scales x 3 capacity factors x 2 ffn types.
std::vector<LayerConfig> default_grid();

struct SweepRow {
  int index = 0;
  LayerConfig cfg;
  TaskVolumes volumes;
  DegreeChoice fwd;
  DegreeChoice bwd;
  BruteForceResult brute_fwd;
  BruteForceResult brute_bwd;
  // Simulated makespans at the analytic degree of each phase.
  double fwd_ms[4] = {0, 0, 0, 0};  // indexed by ScheduleStyle
  double bwd_ms[4] = {0, 0, 0, 0};
};

struct SweepSummary {
  int cases = 0;
  int varied_degree_cases = 0;  // r_fwd != r_bwd
  int fwd_within_5pct = 0;      // analytic choice vs brute-force simulation
  int bwd_within_5pct = 0;
  // Geometric-mean speedups of the pipelined schedule, forward+backward.
  double speedup_vs_sequential = 0.0;
  double speedup_vs_pipemoe = 0.0;
  double speedup_vs_no_iio = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepSummary summary;
};

// Runs every grid case: derive volumes, plan both phases, brute-force both
// phases, simulate all four styles at the analytic degrees. Backward grad
// sync is the layer's full gradient in one launch. jobs > 1 distributes
// cases over threads; row order stays the grid order.
SweepResult run_sweep(const std::vector<LayerConfig>& grid,
                      const ParallelConfig& pcfg,
                      const ClusterProfile& profile, int r_max, int jobs);

std::string sweep_csv(const SweepResult& result);
std::string summary_json_text(const SweepResult& result);

}  // namespace fsmoe
