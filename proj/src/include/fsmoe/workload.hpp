#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsmoe/common.hpp"

namespace fsmoe {

// Transformer-block shape. H (ffn hidden) = hidden_scale * M.
struct LayerConfig {
  int batch = 0;          // sequences per step (B)
  int heads = 0;          // attention heads (shape bookkeeping only)
  int seq_len = 0;        // tokens per sequence (L)
  int model_dim = 0;      // embedding width (M)
  int hidden_scale = 0;   // ffn hidden = hidden_scale * model_dim
  double capacity_factor = 0.0;  // ignored when unlimited_capacity
  bool unlimited_capacity = false;
  enum class Ffn { simple, gated3 } ffn = Ffn::simple;  // 2 or 3 GEMMs per expert
  int experts = 0;        // E
  int top_k = 0;          // experts per token (k)
  double t_olp_dense_ms = 0.0;  // dense-op window adjacent to this layer
  std::optional<double> grad_elements_override;  // replaces the derived value
};

// Device-group sizes. experts must divide evenly across expert-parallel groups.
struct ParallelConfig {
  int total_gpus = 0;       // P
  int gpus_per_node = 0;
  int data_parallel = 0;    // n_dp
  int tensor_parallel = 0;  // n_mp
  int expert_parallel = 0;  // n_ep
  int expert_shard = 0;     // n_esp (a2a group width)
};

// Throws ConfigError on nonpositive dims or invalid group sizes.
void validate(const LayerConfig& cfg);
void validate(const ParallelConfig& pcfg);

// Per-expert token capacity: ceil(k * f * B * L / E), or k * B * L when
// capacity is unlimited. The ceil tolerates 1e-9 of float noise downward.
long long capacity_tokens(const LayerConfig& cfg);

// Per-layer task volumes (elements / MACs), all exactly representable doubles.
struct TaskVolumes {
  double a2a_elements = 0.0;      // one dispatch (= one combine)
  double ag_elements = 0.0;       // one allgather
  double rs_elements = 0.0;       // one reducescatter
  double gemm_macs = 0.0;         // one expert GEMM
  int gemm_count = 0;             // GEMMs per expert pass (2 simple, 3 gated3)
  double grad_elements = 0.0;     // gradient to allreduce for this layer
  long long capacity = 0;         // tokens per expert (T)
};

// Derives volumes from shapes. Throws ConfigError when experts do not divide
// evenly across expert-parallel groups.
TaskVolumes derive_volumes(const LayerConfig& cfg, const ParallelConfig& pcfg);

// --- Routing ---------------------------------------------------------------

// Row-major matrix, minimal on purpose.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

enum class GateKind { noisy_topk, sigmoid_topk, cosine_topk, expert_choice };

struct GateConfig {
  GateKind kind = GateKind::noisy_topk;
  int top_k = 0;           // per token (token-choice) or per expert (expert_choice)
  std::uint64_t seed = 0;  // noise seed (noisy_topk only)
};

// Learned parameters, caller-supplied. All gates use score_weights
// (model_dim x experts except cosine_topk: proj_dim x experts);
// noisy_topk also uses noise_weights; cosine_topk also uses projection
// (proj_dim x model_dim).
struct GateParams {
  Matrix score_weights;
  Matrix noise_weights;
  Matrix projection;
};

// One routing decision: token -> expert with a combine weight.
struct Assignment {
  int token = 0;
  int expert = 0;
  double weight = 0.0;
};

// Assignments are emitted in deterministic order: token-major for
// token-choice gates, expert-major for expert_choice. Ties in every top-k
// pick go to the lowest index.
struct GateOutput {
  int tokens = 0;
  int experts = 0;
  std::vector<Assignment> picks;
};

// tokens: rows are tokens, cols = model_dim.
GateOutput run_gate(const Matrix& tokens, const GateConfig& gcfg,
                    const GateParams& params);

// Dispatch layout: per-expert buffers of `capacity` token slots.
struct DispatchResult {
  int experts = 0;
  long long capacity = 0;
  Matrix buffers;                 // (experts*capacity) x model_dim, row-major slots
  std::vector<int> slot_of_pick;  // per gate pick: slot index or -1 if dropped
  std::vector<long long> fill;    // per expert: slots used
  long long dropped = 0;          // picks beyond capacity
};

// Packs tokens into per-expert buffers in pick order; overflow drops.
// Replayable: identical gate output and capacity give identical layout.
DispatchResult dispatch_tokens(const Matrix& tokens, const GateOutput& gate,
                               long long capacity);

// Inverse of dispatch_tokens: weighted combine of per-expert buffers back to
// token order. Dropped picks contribute nothing. With identity experts the
// result equals each token scaled by the sum of its surviving weights.
Matrix combine_tokens(const Matrix& expert_buffers, const GateOutput& gate,
                      const DispatchResult& layout, int model_dim);

}  // namespace fsmoe
