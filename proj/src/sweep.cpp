#include "fsmoe/sweep.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "fsmoe/cost_models.hpp"
#include "fsmoe/json_io.hpp"

namespace fsmoe {

std::vector<LayerConfig> default_grid() {
  const int batches[] = {1, 2, 4};
  const int heads[] = {8, 16, 32};
  const int seq_lens[] = {512, 1024, 2048};
  const int model_dims[] = {1024, 2048, 4096};
  const int hidden_scales[] = {2, 3, 4};
  const double factors[] = {1.2, 2.4, 0.0};  // 0 marks unlimited
  const LayerConfig::Ffn ffns[] = {LayerConfig::Ffn::simple,
                                   LayerConfig::Ffn::gated3};

  std::vector<LayerConfig> grid;
  for (int b : batches)
    for (int h : heads)
      for (int l : seq_lens)
        for (int m : model_dims)
          for (int s : hidden_scales)
            for (double f : factors)
              for (auto ffn : ffns) {
                LayerConfig cfg;
                cfg.batch = b;
                cfg.heads = h;
                cfg.seq_len = l;
                cfg.model_dim = m;
                cfg.hidden_scale = s;
                if (f > 0)
                  cfg.capacity_factor = f;
                else
                  cfg.unlimited_capacity = true;
                cfg.ffn = ffn;
                cfg.experts = 6;
                cfg.top_k = 2;
                grid.push_back(cfg);
              }
  return grid;
}

namespace {

SweepRow evaluate_case(int index, const LayerConfig& cfg,
                       const ParallelConfig& pcfg,
                       const ClusterProfile& profile, int r_max) {
  SweepRow row;
  row.index = index;
  row.cfg = cfg;
  row.volumes = derive_volumes(cfg, pcfg);

  PhaseInputs fwd_in{row.volumes, profile, 0.0, 1};
  row.fwd = find_optimal_pipeline_degree(fwd_in, r_max);

  double t_gar = row.volumes.grad_elements > 0
                     ? predict_ms(profile.ar, row.volumes.grad_elements)
                     : 0.0;
  PhaseInputs bwd_in{row.volumes, profile, t_gar, 2};
  row.bwd = find_optimal_pipeline_degree(bwd_in, r_max);

  row.brute_fwd = brute_force_best_degree(row.volumes, profile, 0.0, 1, r_max);
  row.brute_bwd =
      brute_force_best_degree(row.volumes, profile, t_gar, 2, r_max);

  std::vector<double> sync;
  if (t_gar > 0) sync.push_back(t_gar);
  auto fwd_stage = stage_times(row.volumes, profile, 1, row.fwd.r, {});
  auto bwd_stage = stage_times(row.volumes, profile, 2, row.bwd.r, sync);
  for (auto style : {ScheduleStyle::fsmoe, ScheduleStyle::fsmoe_no_iio,
                     ScheduleStyle::pipemoe, ScheduleStyle::sequential}) {
    int s = static_cast<int>(style);
    row.fwd_ms[s] = simulate(build_baseline_dag(style, fwd_stage)).makespan_ms;
    row.bwd_ms[s] = simulate(build_baseline_dag(style, bwd_stage)).makespan_ms;
  }
  return row;
}

SweepSummary summarize(const std::vector<SweepRow>& rows) {
  SweepSummary s;
  s.cases = static_cast<int>(rows.size());
  const int ours = static_cast<int>(ScheduleStyle::fsmoe);
  const int merged = static_cast<int>(ScheduleStyle::fsmoe_no_iio);
  const int interleaved = static_cast<int>(ScheduleStyle::pipemoe);
  const int serial = static_cast<int>(ScheduleStyle::sequential);

  double log_serial = 0.0, log_inter = 0.0, log_merged = 0.0;
  for (const auto& row : rows) {
    if (row.fwd.r != row.bwd.r) ++s.varied_degree_cases;
    if (row.fwd_ms[ours] <= 1.05 * row.brute_fwd.makespan_ms + 1e-12)
      ++s.fwd_within_5pct;
    if (row.bwd_ms[ours] <= 1.05 * row.brute_bwd.makespan_ms + 1e-12)
      ++s.bwd_within_5pct;
    double total = row.fwd_ms[ours] + row.bwd_ms[ours];
    log_serial += std::log((row.fwd_ms[serial] + row.bwd_ms[serial]) / total);
    log_inter +=
        std::log((row.fwd_ms[interleaved] + row.bwd_ms[interleaved]) / total);
    log_merged += std::log((row.fwd_ms[merged] + row.bwd_ms[merged]) / total);
  }
  if (s.cases > 0) {
    s.speedup_vs_sequential = std::exp(log_serial / s.cases);
    s.speedup_vs_pipemoe = std::exp(log_inter / s.cases);
    s.speedup_vs_no_iio = std::exp(log_merged / s.cases);
  }
  return s;
}

}  // namespace

SweepResult run_sweep(const std::vector<LayerConfig>& grid,
                      const ParallelConfig& pcfg,
                      const ClusterProfile& profile, int r_max, int jobs) {
  if (jobs < 1) throw ConfigError("sweep: jobs must be >= 1");

  SweepResult result;
  result.rows.resize(grid.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= grid.size()) break;
      result.rows[i] =
          evaluate_case(static_cast<int>(i), grid[i], pcfg, profile, r_max);
    }
  };

  if (jobs == 1 || grid.size() < 2) {
    worker();
  } else {
    std::vector<std::thread> pool;
    size_t n = std::min<size_t>(jobs, grid.size());
    for (size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  result.summary = summarize(result.rows);
  return result;
}

std::string sweep_csv(const SweepResult& result) {
  std::string out =
      "index,batch,heads,seq_len,model_dim,hidden_scale,capacity_factor,ffn,"
      "a2a_elements,ag_elements,gemm_macs,grad_elements,"
      "r_fwd,case_fwd,t_moe_fwd_ms,r_bwd,case_bwd,t_moe_bwd_ms,"
      "brute_r_fwd,brute_fwd_ms,brute_r_bwd,brute_bwd_ms,"
      "fsmoe_fwd_ms,no_iio_fwd_ms,pipemoe_fwd_ms,sequential_fwd_ms,"
      "fsmoe_bwd_ms,no_iio_bwd_ms,pipemoe_bwd_ms,sequential_bwd_ms\n";
  for (const auto& row : result.rows) {
    const auto& c = row.cfg;
    out += std::to_string(row.index) + ',' + std::to_string(c.batch) + ',' +
           std::to_string(c.heads) + ',' + std::to_string(c.seq_len) + ',' +
           std::to_string(c.model_dim) + ',' + std::to_string(c.hidden_scale) +
           ',';
    out += c.unlimited_capacity ? "*" : format_double(c.capacity_factor);
    out += ',';
    out += c.ffn == LayerConfig::Ffn::gated3 ? "gated3" : "simple";
    out += ',' + format_double(row.volumes.a2a_elements) + ',' +
           format_double(row.volumes.ag_elements) + ',' +
           format_double(row.volumes.gemm_macs) + ',' +
           format_double(row.volumes.grad_elements);
    out += ',' + std::to_string(row.fwd.r) + ',' +
           std::to_string(row.fwd.case_id) + ',' +
           format_double(row.fwd.t_moe_ms) + ',' + std::to_string(row.bwd.r) +
           ',' + std::to_string(row.bwd.case_id) + ',' +
           format_double(row.bwd.t_moe_ms);
    out += ',' + std::to_string(row.brute_fwd.r) + ',' +
           format_double(row.brute_fwd.makespan_ms) + ',' +
           std::to_string(row.brute_bwd.r) + ',' +
           format_double(row.brute_bwd.makespan_ms);
    for (double ms : row.fwd_ms) out += ',' + format_double(ms);
    for (double ms : row.bwd_ms) out += ',' + format_double(ms);
    out += '\n';
  }
  return out;
}

std::string summary_json_text(const SweepResult& result) {
  const auto& s = result.summary;
  nlohmann::ordered_json j;
  j["cases"] = s.cases;
  j["varied_degree_cases"] = s.varied_degree_cases;
  j["fwd_within_5pct"] = s.fwd_within_5pct;
  j["bwd_within_5pct"] = s.bwd_within_5pct;
  j["speedup_vs_sequential"] = s.speedup_vs_sequential;
  j["speedup_vs_pipemoe"] = s.speedup_vs_pipemoe;
  j["speedup_vs_no_iio"] = s.speedup_vs_no_iio;
  return j.dump(2) + "\n";
}

}  // namespace fsmoe
