#include "fsmoe/workload.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fsmoe {

void validate(const LayerConfig& cfg) {
  auto positive = [](int v, const char* name) {
    if (v <= 0)
      throw ConfigError(std::string("layer: ") + name + " must be positive");
  };
  positive(cfg.batch, "batch");
  positive(cfg.heads, "heads");
  positive(cfg.seq_len, "seq_len");
  positive(cfg.model_dim, "model_dim");
  positive(cfg.hidden_scale, "hidden_scale");
  positive(cfg.experts, "experts");
  positive(cfg.top_k, "top_k");
  if (!cfg.unlimited_capacity && cfg.capacity_factor <= 0.0)
    throw ConfigError("layer: capacity_factor must be positive");
  if (cfg.t_olp_dense_ms < 0.0)
    throw ConfigError("layer: t_olp_dense_ms must be nonnegative");
}

void validate(const ParallelConfig& pcfg) {
  auto positive = [](int v, const char* name) {
    if (v <= 0)
      throw ConfigError(std::string("parallel: ") + name + " must be positive");
  };
  positive(pcfg.total_gpus, "total_gpus");
  positive(pcfg.gpus_per_node, "gpus_per_node");
  positive(pcfg.data_parallel, "data_parallel");
  positive(pcfg.tensor_parallel, "tensor_parallel");
  positive(pcfg.expert_parallel, "expert_parallel");
  positive(pcfg.expert_shard, "expert_shard");
  if (pcfg.total_gpus % pcfg.gpus_per_node != 0)
    throw ConfigError("parallel: total_gpus must be a multiple of gpus_per_node");
}

long long capacity_tokens(const LayerConfig& cfg) {
  validate(cfg);
  double tokens = double(cfg.batch) * cfg.seq_len;
  if (cfg.unlimited_capacity)
    return static_cast<long long>(double(cfg.top_k) * tokens);
  double v = cfg.top_k * cfg.capacity_factor * tokens / cfg.experts;
  // Guard the ceiling against float noise pushing an exact product up by one.
  return static_cast<long long>(std::ceil(v - 1e-9));
}

TaskVolumes derive_volumes(const LayerConfig& cfg, const ParallelConfig& pcfg) {
  validate(cfg);
  validate(pcfg);
  if (cfg.experts % pcfg.expert_parallel != 0)
    throw ConfigError("experts must divide evenly across expert_parallel groups");

  double t = static_cast<double>(capacity_tokens(cfg));
  double m = cfg.model_dim;
  double h = double(cfg.hidden_scale) * m;
  double experts_local = double(cfg.experts) / pcfg.expert_parallel;

  TaskVolumes v;
  v.capacity = static_cast<long long>(t);
  v.a2a_elements = double(cfg.experts) * t * m / pcfg.expert_shard;
  v.ag_elements = experts_local * t * m;
  v.rs_elements = v.ag_elements;
  v.gemm_macs = t * m * h;
  v.gemm_count = cfg.ffn == LayerConfig::Ffn::gated3 ? 3 : 2;
  v.grad_elements = experts_local * v.gemm_count * m * h / pcfg.expert_shard +
                    4.0 * m * m / pcfg.tensor_parallel;
  if (cfg.grad_elements_override) {
    if (*cfg.grad_elements_override < 0)
      throw ConfigError("grad_elements override must be >= 0");
    v.grad_elements = *cfg.grad_elements_override;
  }
  return v;
}

// --- Routing ---------------------------------------------------------------

namespace {

// Bit-stable standard normal: Box-Muller over explicit 53-bit uniforms.
class NormalDraws {
 public:
  explicit NormalDraws(std::uint64_t seed) : rng_(seed) {}

  double next() {
    double u1 = ((rng_() >> 11) + 0.5) * 0x1.0p-53;
    double u2 = ((rng_() >> 11) + 0.5) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

 private:
  std::mt19937_64 rng_;
};

double softplus(double z) { return std::log1p(std::exp(z)); }

std::vector<double> matvec_row(const Matrix& x, int row, const Matrix& w) {
  std::vector<double> out(w.cols, 0.0);
  for (int c = 0; c < w.cols; ++c)
    for (int j = 0; j < x.cols; ++j) out[c] += x.at(row, j) * w.at(j, c);
  return out;
}

// Top-k by score, ties to the lowest index, returned in ascending index order.
std::vector<int> top_k(const std::vector<double>& scores, int k) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> masked_softmax(const std::vector<double>& scores,
                                   const std::vector<int>& keep) {
  double mx = scores[keep.front()];
  for (int i : keep) mx = std::max(mx, scores[i]);
  double z = 0.0;
  for (int i : keep) z += std::exp(scores[i] - mx);
  std::vector<double> w(keep.size());
  for (size_t j = 0; j < keep.size(); ++j)
    w[j] = std::exp(scores[keep[j]] - mx) / z;
  return w;
}

void require_dims(const Matrix& m, int rows, int cols, const char* name) {
  if (m.rows != rows || m.cols != cols)
    throw ConfigError(std::string("gate: ") + name + " must be " +
                      std::to_string(rows) + "x" + std::to_string(cols));
}

}  // namespace

GateOutput run_gate(const Matrix& tokens, const GateConfig& gcfg,
                    const GateParams& params) {
  const int n_tokens = tokens.rows;
  const int dim = tokens.cols;
  const int experts = params.score_weights.cols;
  if (n_tokens <= 0 || dim <= 0) throw ConfigError("gate: empty token matrix");
  if (experts <= 0) throw ConfigError("gate: no experts");
  if (gcfg.top_k <= 0) throw ConfigError("gate: top_k must be positive");

  GateOutput out;
  out.tokens = n_tokens;
  out.experts = experts;

  if (gcfg.kind == GateKind::expert_choice) {
    if (gcfg.top_k > n_tokens)
      throw ConfigError("gate: expert capacity exceeds token count");
    require_dims(params.score_weights, dim, experts, "score_weights");
    for (int e = 0; e < experts; ++e) {
      std::vector<double> scores(n_tokens, 0.0);
      for (int t = 0; t < n_tokens; ++t)
        for (int j = 0; j < dim; ++j)
          scores[t] += tokens.at(t, j) * params.score_weights.at(j, e);
      auto keep = top_k(scores, gcfg.top_k);
      auto weights = masked_softmax(scores, keep);
      for (size_t j = 0; j < keep.size(); ++j)
        out.picks.push_back({keep[j], e, weights[j]});
    }
    return out;
  }

  if (gcfg.top_k > experts)
    throw ConfigError("gate: top_k exceeds expert count");

  for (int t = 0; t < n_tokens; ++t) {
    std::vector<double> scores;
    switch (gcfg.kind) {
      case GateKind::noisy_topk: {
        require_dims(params.score_weights, dim, experts, "score_weights");
        require_dims(params.noise_weights, dim, experts, "noise_weights");
        scores = matvec_row(tokens, t, params.score_weights);
        auto spread = matvec_row(tokens, t, params.noise_weights);
        NormalDraws noise(gcfg.seed + static_cast<std::uint64_t>(t));
        for (int e = 0; e < experts; ++e)
          scores[e] += noise.next() * softplus(spread[e]);
        auto keep = top_k(scores, gcfg.top_k);
        auto weights = masked_softmax(scores, keep);
        for (size_t j = 0; j < keep.size(); ++j)
          out.picks.push_back({t, keep[j], weights[j]});
        break;
      }
      case GateKind::sigmoid_topk: {
        require_dims(params.score_weights, dim, experts, "score_weights");
        scores = matvec_row(tokens, t, params.score_weights);
        auto keep = top_k(scores, gcfg.top_k);
        for (int e : keep)
          out.picks.push_back({t, e, 1.0 / (1.0 + std::exp(-scores[e]))});
        break;
      }
      case GateKind::cosine_topk: {
        const int proj_dim = params.projection.rows;
        require_dims(params.projection, proj_dim, dim, "projection");
        require_dims(params.score_weights, proj_dim, experts, "score_weights");
        std::vector<double> proj(proj_dim, 0.0);
        for (int p = 0; p < proj_dim; ++p)
          for (int j = 0; j < dim; ++j)
            proj[p] += params.projection.at(p, j) * tokens.at(t, j);
        double pnorm = 0.0;
        for (double v : proj) pnorm += v * v;
        if (pnorm == 0.0)
          throw ConfigError("gate: projected token has zero norm");
        scores.assign(experts, 0.0);
        for (int e = 0; e < experts; ++e) {
          double dot = 0.0, enorm = 0.0;
          for (int p = 0; p < proj_dim; ++p) {
            dot += proj[p] * params.score_weights.at(p, e);
            enorm += params.score_weights.at(p, e) * params.score_weights.at(p, e);
          }
          if (enorm == 0.0)
            throw ConfigError("gate: expert embedding has zero norm");
          scores[e] = dot / std::sqrt(pnorm * enorm);
        }
        auto keep = top_k(scores, gcfg.top_k);
        auto weights = masked_softmax(scores, keep);
        for (size_t j = 0; j < keep.size(); ++j)
          out.picks.push_back({t, keep[j], weights[j]});
        break;
      }
      case GateKind::expert_choice:
        break;  // handled above
    }
  }
  return out;
}

DispatchResult dispatch_tokens(const Matrix& tokens, const GateOutput& gate,
                               long long capacity) {
  if (capacity <= 0) throw ConfigError("dispatch: capacity must be positive");

  DispatchResult d;
  d.experts = gate.experts;
  d.capacity = capacity;
  d.buffers = Matrix(static_cast<int>(gate.experts * capacity), tokens.cols);
  d.slot_of_pick.assign(gate.picks.size(), -1);
  d.fill.assign(gate.experts, 0);

  for (size_t p = 0; p < gate.picks.size(); ++p) {
    const auto& pick = gate.picks[p];
    if (pick.expert < 0 || pick.expert >= gate.experts ||
        pick.token < 0 || pick.token >= tokens.rows)
      throw ConfigError("dispatch: pick references an unknown token or expert");
    if (d.fill[pick.expert] >= capacity) {
      ++d.dropped;
      continue;
    }
    int slot = static_cast<int>(pick.expert * capacity + d.fill[pick.expert]);
    for (int j = 0; j < tokens.cols; ++j)
      d.buffers.at(slot, j) = tokens.at(pick.token, j);
    d.slot_of_pick[p] = slot;
    ++d.fill[pick.expert];
  }
  return d;
}

Matrix combine_tokens(const Matrix& expert_buffers, const GateOutput& gate,
                      const DispatchResult& layout, int model_dim) {
  if (expert_buffers.cols != model_dim)
    throw ConfigError("combine: buffer width does not match model_dim");
  if (layout.slot_of_pick.size() != gate.picks.size())
    throw ConfigError("combine: layout does not match the gate output");

  Matrix y(gate.tokens, model_dim);
  for (size_t p = 0; p < gate.picks.size(); ++p) {
    int slot = layout.slot_of_pick[p];
    if (slot < 0) continue;
    const auto& pick = gate.picks[p];
    for (int j = 0; j < model_dim; ++j)
      y.at(pick.token, j) += pick.weight * expert_buffers.at(slot, j);
  }
  return y;
}

}  // namespace fsmoe
