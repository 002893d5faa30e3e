#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "fsmoe/workload.hpp"

using namespace fsmoe;
using doctest::Approx;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double lo,
                     double hi) {
  Matrix m(rows, cols);
  for (auto& v : m.v) v = lo + (hi - lo) * ((rng() >> 11) * 0x1.0p-53);
  return m;
}

// Brute-force top-k with lowest-index tie-break: stable sort on (-score, idx).
std::vector<int> topk_indices(const std::vector<double>& scores, int k) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(std::min<size_t>(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> masked_softmax(const std::vector<double>& scores,
                                   const std::vector<int>& keep) {
  double mx = -1e300;
  for (int i : keep) mx = std::max(mx, scores[i]);
  double z = 0;
  for (int i : keep) z += std::exp(scores[i] - mx);
  std::vector<double> w;
  for (int i : keep) w.push_back(std::exp(scores[i] - mx) / z);
  return w;
}

std::vector<double> row_times(const Matrix& x, int row, const Matrix& w) {
  std::vector<double> out(w.cols, 0.0);
  for (int c = 0; c < w.cols; ++c)
    for (int j = 0; j < x.cols; ++j) out[c] += x.at(row, j) * w.at(j, c);
  return out;
}

}  // namespace

TEST_CASE("capacity_tokens applies the ceiling with a tolerance guard") {
  LayerConfig cfg;
  cfg.batch = 4;
  cfg.heads = 16;
  cfg.seq_len = 1024;
  cfg.model_dim = 1024;
  cfg.hidden_scale = 2;
  cfg.capacity_factor = 1.2;
  cfg.experts = 8;
  cfg.top_k = 2;
  CHECK(capacity_tokens(cfg) == 1229);  // 1228.8 rounds up

  cfg.capacity_factor = 1.0;
  cfg.top_k = 1;
  cfg.batch = 2;
  cfg.seq_len = 4;
  CHECK(capacity_tokens(cfg) == 1);  // exact product stays exact

  cfg.unlimited_capacity = true;
  cfg.batch = 1;
  cfg.seq_len = 8;
  cfg.top_k = 2;
  CHECK(capacity_tokens(cfg) == 16);  // k * B * L
}

TEST_CASE("derive_volumes matches the hand-traced example") {
  LayerConfig cfg;
  cfg.batch = 4;
  cfg.heads = 16;
  cfg.seq_len = 1024;
  cfg.model_dim = 1024;
  cfg.hidden_scale = 2;
  cfg.capacity_factor = 1.2;
  cfg.experts = 8;
  cfg.top_k = 2;
  ParallelConfig pcfg;
  pcfg.total_gpus = 32;
  pcfg.gpus_per_node = 8;
  pcfg.data_parallel = 2;
  pcfg.tensor_parallel = 4;
  pcfg.expert_parallel = 8;
  pcfg.expert_shard = 4;

  auto v = derive_volumes(cfg, pcfg);
  CHECK(v.capacity == 1229);
  CHECK(v.a2a_elements == 2516992.0);
  CHECK(v.ag_elements == 1258496.0);
  CHECK(v.rs_elements == 1258496.0);
  CHECK(v.gemm_macs == 2577399808.0);
  CHECK(v.gemm_count == 2);
  CHECK(v.grad_elements == 2097152.0);

  SUBCASE("three-matrix ffn grows GEMM count and expert gradients") {
    cfg.ffn = LayerConfig::Ffn::gated3;
    auto v3 = derive_volumes(cfg, pcfg);
    CHECK(v3.gemm_count == 3);
    CHECK(v3.gemm_macs == v.gemm_macs);
    CHECK(v3.grad_elements == Approx(1572864.0 + 1048576.0));
  }

  SUBCASE("doubling the batch doubles traffic, not parameters") {
    cfg.batch = 8;
    auto v2 = derive_volumes(cfg, pcfg);
    CHECK(v2.a2a_elements == 2 * v.a2a_elements);
    CHECK(v2.ag_elements == 2 * v.ag_elements);
    CHECK(v2.rs_elements == 2 * v.rs_elements);
    CHECK(v2.gemm_macs == 2 * v.gemm_macs);
    CHECK(v2.grad_elements == v.grad_elements);
  }

  SUBCASE("expert count must split evenly across expert-parallel groups") {
    pcfg.expert_parallel = 3;
    CHECK_THROWS_AS(derive_volumes(cfg, pcfg), ConfigError);
  }
}

TEST_CASE("derive_volumes degenerate sharding") {
  LayerConfig cfg;
  cfg.batch = 1;
  cfg.heads = 8;
  cfg.seq_len = 16;
  cfg.model_dim = 4;
  cfg.hidden_scale = 2;
  cfg.capacity_factor = 1.0;
  cfg.experts = 4;
  cfg.top_k = 1;
  ParallelConfig pcfg;
  pcfg.total_gpus = 4;
  pcfg.gpus_per_node = 4;
  pcfg.data_parallel = 1;
  pcfg.tensor_parallel = 1;
  pcfg.expert_parallel = 4;  // one expert per group
  pcfg.expert_shard = 1;

  auto v = derive_volumes(cfg, pcfg);
  long long t = capacity_tokens(cfg);  // 16/4 = 4
  CHECK(t == 4);
  CHECK(v.ag_elements == double(t) * 4.0);
  CHECK(v.rs_elements == double(t) * 4.0);
  CHECK(v.a2a_elements == 4.0 * double(t) * 4.0);
}

TEST_CASE("noisy gate with suppressed noise matches the brute-force oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    int tokens = 2 + int(rng() % 5);
    int experts = 2 + int(rng() % 5);
    int dim = 2 + int(rng() % 4);
    int k = 1 + int(rng() % std::min(3, experts));
    // Positive inputs against a large negative noise projection force the
    // noise scale to exactly zero.
    Matrix x = random_matrix(rng, tokens, dim, 0.2, 1.5);
    GateParams params;
    params.score_weights = random_matrix(rng, dim, experts, -1.0, 1.0);
    params.noise_weights = Matrix(dim, experts);
    for (auto& w : params.noise_weights.v) w = -1e4;

    GateConfig gcfg{GateKind::noisy_topk, k, 99};
    auto out = run_gate(x, gcfg, params);
    REQUIRE(out.picks.size() == size_t(tokens) * k);

    for (int t = 0; t < tokens; ++t) {
      auto logits = row_times(x, t, params.score_weights);
      auto keep = topk_indices(logits, k);
      auto weights = masked_softmax(logits, keep);
      for (int j = 0; j < k; ++j) {
        const auto& pick = out.picks[size_t(t) * k + j];
        CHECK(pick.token == t);
        CHECK(pick.expert == keep[j]);
        CHECK(pick.weight == Approx(weights[j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("noisy gate is reproducible per seed and perturbs scores") {
  std::mt19937_64 rng(5);
  Matrix x = random_matrix(rng, 4, 3, -1, 1);
  GateParams params;
  params.score_weights = random_matrix(rng, 3, 5, -1, 1);
  params.noise_weights = random_matrix(rng, 3, 5, 0.5, 1.0);
  GateConfig gcfg{GateKind::noisy_topk, 2, 1234};

  auto a = run_gate(x, gcfg, params);
  auto b = run_gate(x, gcfg, params);
  REQUIRE(a.picks.size() == b.picks.size());
  for (size_t i = 0; i < a.picks.size(); ++i) {
    CHECK(a.picks[i].expert == b.picks[i].expert);
    CHECK(a.picks[i].weight == b.picks[i].weight);
  }
  for (int t = 0; t < 4; ++t) {
    double sum = 0;
    for (int j = 0; j < 2; ++j) sum += a.picks[size_t(t) * 2 + j].weight;
    CHECK(sum == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("ties in top-k go to the lowest expert index") {
  Matrix x(1, 1);
  x.at(0, 0) = 1.0;
  GateParams params;
  params.score_weights = Matrix(1, 3);
  params.score_weights.at(0, 0) = 1.0;
  params.score_weights.at(0, 1) = 1.0;
  params.score_weights.at(0, 2) = 0.0;
  GateConfig gcfg{GateKind::sigmoid_topk, 2, 0};
  auto out = run_gate(x, gcfg, params);
  CHECK(out.picks[0].expert == 0);
  CHECK(out.picks[1].expert == 1);
}

TEST_CASE("sigmoid gate scales picks by the logistic of their logit") {
  Matrix x(1, 1);
  x.at(0, 0) = 1.0;
  GateParams params;
  params.score_weights = Matrix(1, 2);

  SUBCASE("zero logit gives weight one half") {
    params.score_weights.at(0, 0) = 0.0;
    params.score_weights.at(0, 1) = -5.0;
    GateConfig gcfg{GateKind::sigmoid_topk, 1, 0};
    auto out = run_gate(x, gcfg, params);
    CHECK(out.picks[0].expert == 0);
    CHECK(out.picks[0].weight == Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("picks the larger logit") {
    params.score_weights.at(0, 0) = -1.0;
    params.score_weights.at(0, 1) = 4.0;
    GateConfig gcfg{GateKind::sigmoid_topk, 1, 0};
    auto out = run_gate(x, gcfg, params);
    CHECK(out.picks[0].expert == 1);
    CHECK(out.picks[0].weight == Approx(1.0 / (1.0 + std::exp(-4.0))));
  }
  SUBCASE("k equal to expert count selects everyone") {
    params.score_weights.at(0, 0) = -1.0;
    params.score_weights.at(0, 1) = 4.0;
    GateConfig gcfg{GateKind::sigmoid_topk, 2, 0};
    auto out = run_gate(x, gcfg, params);
    REQUIRE(out.picks.size() == 2);
    CHECK(out.picks[0].expert == 0);
    CHECK(out.picks[0].weight == Approx(1.0 / (1.0 + std::exp(1.0))));
    CHECK(out.picks[1].expert == 1);
    CHECK(out.picks[1].weight == Approx(1.0 / (1.0 + std::exp(-4.0))));
  }
}

TEST_CASE("sigmoid gate matches the brute-force oracle on random instances") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    int tokens = 2 + int(rng() % 5);
    int experts = 2 + int(rng() % 5);
    int dim = 2 + int(rng() % 4);
    int k = 1 + int(rng() % std::min(3, experts));
    Matrix x = random_matrix(rng, tokens, dim, -1, 1);
    GateParams params;
    params.score_weights = random_matrix(rng, dim, experts, -1, 1);
    GateConfig gcfg{GateKind::sigmoid_topk, k, 0};
    auto out = run_gate(x, gcfg, params);
    for (int t = 0; t < tokens; ++t) {
      auto logits = row_times(x, t, params.score_weights);
      auto keep = topk_indices(logits, k);
      for (int j = 0; j < k; ++j) {
        const auto& pick = out.picks[size_t(t) * k + j];
        CHECK(pick.expert == keep[j]);
        CHECK(pick.weight ==
              Approx(1.0 / (1.0 + std::exp(-logits[keep[j]]))).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("cosine gate scores by direction, not magnitude") {
  GateParams params;
  params.projection = Matrix(2, 2);
  params.projection.at(0, 0) = 1.0;
  params.projection.at(1, 1) = 1.0;

  SUBCASE("parallel embedding wins with full weight") {
    Matrix x(1, 2);
    x.at(0, 0) = 3.0;  // projected token along axis 0
    params.score_weights = Matrix(2, 2);
    params.score_weights.at(0, 0) = 0.5;  // expert 0 parallel
    params.score_weights.at(1, 1) = 2.0;  // expert 1 orthogonal
    GateConfig gcfg{GateKind::cosine_topk, 1, 0};
    auto out = run_gate(x, gcfg, params);
    CHECK(out.picks[0].expert == 0);
    CHECK(out.picks[0].weight == Approx(1.0));
  }
  SUBCASE("antiparallel single expert still selected") {
    Matrix x(1, 2);
    x.at(0, 0) = 1.0;
    params.score_weights = Matrix(2, 1);
    params.score_weights.at(0, 0) = -2.0;
    GateConfig gcfg{GateKind::cosine_topk, 1, 0};
    auto out = run_gate(x, gcfg, params);
    CHECK(out.picks[0].expert == 0);
    CHECK(out.picks[0].weight == Approx(1.0));  // lone survivor
  }
  SUBCASE("zero-norm embedding is rejected") {
    Matrix x(1, 2);
    x.at(0, 0) = 1.0;
    params.score_weights = Matrix(2, 1);  // all zero
    GateConfig gcfg{GateKind::cosine_topk, 1, 0};
    CHECK_THROWS_AS(run_gate(x, gcfg, params), ConfigError);
  }
}

TEST_CASE("cosine gate matches the brute-force oracle on random instances") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    int tokens = 2 + int(rng() % 4);
    int experts = 2 + int(rng() % 4);
    int dim = 3 + int(rng() % 3);
    int proj_dim = 2;
    int k = 1 + int(rng() % 2);
    Matrix x = random_matrix(rng, tokens, dim, 0.1, 1.0);
    GateParams params;
    params.projection = random_matrix(rng, proj_dim, dim, 0.1, 1.0);
    params.score_weights = random_matrix(rng, proj_dim, experts, 0.1, 1.0);
    GateConfig gcfg{GateKind::cosine_topk, k, 0};
    auto out = run_gate(x, gcfg, params);

    for (int t = 0; t < tokens; ++t) {
      std::vector<double> proj(proj_dim, 0.0);
      for (int p = 0; p < proj_dim; ++p)
        for (int j = 0; j < dim; ++j)
          proj[p] += params.projection.at(p, j) * x.at(t, j);
      std::vector<double> scores(experts, 0.0);
      for (int e = 0; e < experts; ++e) {
        double dot = 0, na = 0, nb = 0;
        for (int p = 0; p < proj_dim; ++p) {
          dot += proj[p] * params.score_weights.at(p, e);
          na += proj[p] * proj[p];
          nb += params.score_weights.at(p, e) * params.score_weights.at(p, e);
        }
        scores[e] = dot / std::sqrt(na * nb);
      }
      auto keep = topk_indices(scores, k);
      auto weights = masked_softmax(scores, keep);
      for (int j = 0; j < k; ++j) {
        const auto& pick = out.picks[size_t(t) * k + j];
        CHECK(pick.expert == keep[j]);
        CHECK(pick.weight == Approx(weights[j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("expert-choice gate lets experts pick tokens") {
  Matrix x(2, 2);
  x.at(0, 0) = 1.0;
  x.at(1, 1) = 1.0;
  GateParams params;
  params.score_weights = Matrix(2, 2);
  params.score_weights.at(0, 0) = 9.0;
  params.score_weights.at(1, 1) = 9.0;

  SUBCASE("diagonal dominance routes each token to its expert") {
    GateConfig gcfg{GateKind::expert_choice, 1, 0};
    auto out = run_gate(x, gcfg, params);
    REQUIRE(out.picks.size() == 2);
    CHECK(out.picks[0].expert == 0);
    CHECK(out.picks[0].token == 0);
    CHECK(out.picks[1].expert == 1);
    CHECK(out.picks[1].token == 1);
    CHECK(out.picks[0].weight == Approx(1.0));
  }
  SUBCASE("capacity equal to token count selects all tokens per expert") {
    GateConfig gcfg{GateKind::expert_choice, 2, 0};
    auto out = run_gate(x, gcfg, params);
    CHECK(out.picks.size() == 4);
  }
  SUBCASE("capacity beyond token count is rejected") {
    GateConfig gcfg{GateKind::expert_choice, 3, 0};
    CHECK_THROWS_AS(run_gate(x, gcfg, params), ConfigError);
  }
}

TEST_CASE("expert-choice gate matches the per-expert brute-force oracle") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    int tokens = 2 + int(rng() % 5);
    int experts = 2 + int(rng() % 5);
    int dim = 2 + int(rng() % 4);
    int cap = 1 + int(rng() % tokens);
    Matrix x = random_matrix(rng, tokens, dim, -1, 1);
    GateParams params;
    params.score_weights = random_matrix(rng, dim, experts, -1, 1);
    GateConfig gcfg{GateKind::expert_choice, cap, 0};
    auto out = run_gate(x, gcfg, params);
    REQUIRE(out.picks.size() == size_t(experts) * cap);

    size_t at = 0;
    for (int e = 0; e < experts; ++e) {
      std::vector<double> scores(tokens, 0.0);
      for (int t = 0; t < tokens; ++t)
        for (int j = 0; j < dim; ++j)
          scores[t] += x.at(t, j) * params.score_weights.at(j, e);
      auto keep = topk_indices(scores, cap);
      auto weights = masked_softmax(scores, keep);
      for (int j = 0; j < cap; ++j, ++at) {
        CHECK(out.picks[at].expert == e);
        CHECK(out.picks[at].token == keep[j]);
        CHECK(out.picks[at].weight == Approx(weights[j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("dispatch packs tokens per expert and drops overflow") {
  Matrix x(2, 1);
  x.at(0, 0) = 3.0;
  x.at(1, 0) = 7.0;

  GateOutput gate;
  gate.tokens = 2;
  gate.experts = 2;
  gate.picks = {{0, 0, 1.0}, {1, 1, 1.0}};

  SUBCASE("balanced routing fills both buffers") {
    auto d = dispatch_tokens(x, gate, 1);
    CHECK(d.dropped == 0);
    CHECK(d.buffers.at(0, 0) == 3.0);
    CHECK(d.buffers.at(1, 0) == 7.0);
    CHECK(d.fill[0] == 1);
    CHECK(d.fill[1] == 1);
  }
  SUBCASE("overflow beyond capacity is dropped, buffer zero-padded") {
    gate.picks = {{0, 0, 1.0}, {1, 0, 1.0}};
    auto d = dispatch_tokens(x, gate, 1);
    CHECK(d.dropped == 1);
    CHECK(d.buffers.at(0, 0) == 3.0);
    CHECK(d.buffers.at(1, 0) == 0.0);
    CHECK(d.slot_of_pick[0] == 0);
    CHECK(d.slot_of_pick[1] == -1);
  }
}

TEST_CASE("combine is the weighted inverse of dispatch") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    int tokens = 2 + int(rng() % 5);
    int experts = 2 + int(rng() % 4);
    int dim = 2 + int(rng() % 4);
    int k = 1 + int(rng() % 2);
    Matrix x = random_matrix(rng, tokens, dim, -1, 1);
    GateParams params;
    params.score_weights = random_matrix(rng, dim, experts, -1, 1);
    GateConfig gcfg{GateKind::sigmoid_topk, k, 0};
    auto gate = run_gate(x, gcfg, params);
    long long cap = 1 + int(rng() % tokens);
    auto d = dispatch_tokens(x, gate, cap);

    for (int e = 0; e < experts; ++e) CHECK(d.fill[e] <= cap);

    // Identity experts: combining the dispatched buffers scales each token
    // by the sum of its surviving weights.
    auto y = combine_tokens(d.buffers, gate, d, dim);
    std::vector<double> wsum(tokens, 0.0);
    for (size_t p = 0; p < gate.picks.size(); ++p)
      if (d.slot_of_pick[p] >= 0) wsum[gate.picks[p].token] += gate.picks[p].weight;
    for (int t = 0; t < tokens; ++t)
      for (int j = 0; j < dim; ++j)
        CHECK(y.at(t, j) == Approx(wsum[t] * x.at(t, j)).epsilon(1e-12));
  }
}

TEST_CASE("single-pick unit-weight routing reconstructs tokens exactly") {
  Matrix x(3, 2);
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 2; ++j) x.at(t, j) = t * 10.0 + j;
  GateOutput gate;
  gate.tokens = 3;
  gate.experts = 3;
  gate.picks = {{0, 2, 1.0}, {1, 0, 1.0}, {2, 1, 1.0}};
  auto d = dispatch_tokens(x, gate, 1);
  REQUIRE(d.dropped == 0);
  auto y = combine_tokens(d.buffers, gate, d, 2);
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 2; ++j) CHECK(y.at(t, j) == x.at(t, j));
}

TEST_CASE("fully dropped tokens combine to zero") {
  Matrix x(2, 1);
  x.at(0, 0) = 5.0;
  x.at(1, 0) = 6.0;
  GateOutput gate;
  gate.tokens = 2;
  gate.experts = 1;
  gate.picks = {{0, 0, 1.0}, {1, 0, 1.0}};
  auto d = dispatch_tokens(x, gate, 1);
  auto y = combine_tokens(d.buffers, gate, d, 1);
  CHECK(y.at(0, 0) == 5.0);
  CHECK(y.at(1, 0) == 0.0);
}
