#pragma once

#include <array>
#include <string>
#include <vector>

#include "fsmoe/common.hpp"
#include "fsmoe/cost_models.hpp"
#include "fsmoe/workload.hpp"

namespace fsmoe {

enum class Resource : int { inter_link = 0, intra_link = 1, compute = 2 };

enum class OpKind {
  a2a_dispatch,
  allgather,
  expert,
  reducescatter,
  a2a_combine,
  grad_allreduce,
  dense_compute,
};

// Fixed mapping: a2a and gradient sync cross nodes, collectives stay inside
// a node, expert/dense occupy the GPU.
Resource resource_of(OpKind kind);
const char* to_string(OpKind kind);
const char* to_string(Resource res);

struct SimTask {
  int id = 0;
  OpKind kind = OpKind::expert;
  double duration_ms = 0.0;
  std::vector<int> deps;
  int chunk = -1;        // pipeline chunk index, -1 when not chunked
  int order_group = -1;  // tasks sharing a group also serialize in emission order
  std::string label;
};

struct Dag {
  std::vector<SimTask> tasks;  // emission order fixes per-resource issue order
};

struct ScheduledTask {
  double start_ms = 0.0;
  double end_ms = 0.0;
};

struct Timeline {
  std::vector<ScheduledTask> tasks;  // indexed by task id
  double makespan_ms = 0.0;
  std::array<double, 3> busy_ms{};   // per resource
};

// Deterministic evaluation. Each resource issues its tasks in emission order;
// an order group serializes its members the same way across resources. A task
// starts at the max of its dependencies' ends and its queue predecessors'
// ends. Throws InvariantError on dangling deps or ordering cycles.
Timeline simulate(const Dag& dag);

// Per-chunk durations of one MoE layer split into r pipeline chunks.
// grad_sync_ms entries are the allreduce launches issued after the last
// dispatch (in order); empty in forward.
struct StageTimes {
  int degree = 1;
  double dispatch_ms = 0.0;
  double gather_ms = 0.0;
  double expert_ms = 0.0;
  double scatter_ms = 0.0;
  double combine_ms = 0.0;
  std::vector<double> grad_sync_ms;
};

// Chunk durations from volumes at degree r; expert time scales with
// gemm_count * exp_multiplier GEMM launches per chunk.
StageTimes stage_times(const TaskVolumes& vol, const ClusterProfile& profile,
                       int exp_multiplier, int r,
                       std::vector<double> grad_sync_ms = {});

enum class ScheduleStyle { fsmoe, fsmoe_no_iio, pipemoe, sequential };
ScheduleStyle style_from_string(const std::string& s);  // ConfigError on unknown
const char* to_string(ScheduleStyle style);

// Pipelined dual-lane schedule: per chunk i the chain
// dispatch(i) -> allgather(i) -> expert(i) -> reducescatter(i) -> combine(i);
// grad sync launches sit on the inter link between the last dispatch and the
// first combine.
Dag build_moe_dag(const StageTimes& stage);

// fsmoe = build_moe_dag; fsmoe_no_iio additionally serializes inter and intra
// communication into one issue order; pipemoe interleaves dispatch/gather and
// scatter/combine on a shared comm order with grad sync last; sequential is
// one chain of everything.
Dag build_baseline_dag(ScheduleStyle style, const StageTimes& stage);

struct BruteForceResult {
  int r = 1;
  double makespan_ms = 0.0;
};

// Simulates the pipelined schedule for every degree in [1, r_max] and returns
// the argmin (ties toward smaller r).
BruteForceResult brute_force_best_degree(const TaskVolumes& vol,
                                         const ClusterProfile& profile,
                                         double t_gar_ms, int exp_multiplier,
                                         int r_max);

// Span = [earliest task start, latest end on `res`]; returns span length
// minus busy time of `res` inside the span.
double idle_within_span(const Dag& dag, const Timeline& tl, Resource res);

// Chrome trace-event JSON ({name, ph:"X", ts, dur, pid, tid}, microseconds).
std::string chrome_trace_json(const Dag& dag, const Timeline& tl);

// Stable one-line-per-task rendering for golden files.
std::string timeline_text(const Dag& dag, const Timeline& tl);

// One generalized layer of a backward pass: a dense block, allreduce launches
// overlapping it, then the MoE stage (whose grad_sync_ms launches fill the
// post-dispatch slot).
struct BackwardLayerSim {
  StageTimes stage;
  double dense_ms = 0.0;
  std::vector<double> pre_sync_ms;
};

// Chains generalized layers in traversal order; a trailing sync launch (if
// nonzero) runs after the last layer.
Dag build_backward_model_dag(const std::vector<BackwardLayerSim>& layers,
                             double tail_sync_ms = 0.0);

}  // namespace fsmoe
