#include <charconv>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fsmoe/grad_partition.hpp"
#include "fsmoe/json_io.hpp"
#include "fsmoe/pipeline_optimizer.hpp"
#include "fsmoe/schedule_sim.hpp"
#include "fsmoe/sweep.hpp"
#include "fsmoe/workload.hpp"

namespace {

using fsmoe::json;

bool g_verbose = false;

void note(const std::string& msg) {
  if (g_verbose) std::cerr << msg << "\n";
}

int parse_env_int(const char* name) {
  const char* raw = std::getenv(name);
  if (!raw) return -1;
  int v = 0;
  auto res = std::from_chars(raw, raw + std::string(raw).size(), v);
  if (res.ec != std::errc() || *res.ptr != '\0' || v < 1)
    throw fsmoe::ConfigError(std::string(name) + ": invalid value '" + raw +
                             "'");
  return v;
}

std::optional<std::uint64_t> parse_env_seed() {
  const char* raw = std::getenv("FSMOE_SEED");
  if (!raw) return std::nullopt;
  std::uint64_t v = 0;
  auto res = std::from_chars(raw, raw + std::string(raw).size(), v);
  if (res.ec != std::errc() || *res.ptr != '\0')
    throw fsmoe::ConfigError(std::string("FSMOE_SEED: invalid value '") + raw +
                             "'");
  return v;
}

// Flags win over the environment; the environment wins over the config file.
int resolve_r_max(int flag_value, int file_value) {
  if (flag_value > 0) return flag_value;
  int env = parse_env_int("FSMOE_R_MAX");
  if (env > 0) return env;
  return file_value;
}

json volumes_to_json(const fsmoe::TaskVolumes& v) {
  json j;
  j["a2a_elements"] = v.a2a_elements;
  j["ag_elements"] = v.ag_elements;
  j["rs_elements"] = v.rs_elements;
  j["gemm_macs"] = v.gemm_macs;
  j["gemm_count"] = v.gemm_count;
  j["grad_elements"] = v.grad_elements;
  j["capacity"] = v.capacity;
  return j;
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty())
    std::cout << text;
  else
    fsmoe::write_text_file(out_path, text);
}

// --- fit --------------------------------------------------------------------

int cmd_fit(const std::string& bench_path, const std::string& out_path,
            double min_r2) {
  note("fitting " + bench_path);
  auto samples = fsmoe::load_bench_csv(bench_path);
  auto fit = fsmoe::fit_profile(samples, min_r2);

  json report = fsmoe::profile_to_json(fit.profile);
  report["fit"] = json{{"min_r_squared", fit.min_r_squared},
                       {"clamped_kinds", fit.clamped_kinds}};
  emit(out_path, report.dump(2) + "\n");
  std::cerr << "fit: worst r^2 " << fit.min_r_squared << "\n";
  return fsmoe::exit_ok;
}

// --- plan ---------------------------------------------------------------

struct ModelPlan {
  fsmoe::ModelConfig model;
  std::vector<fsmoe::TaskVolumes> volumes;
  fsmoe::PartitionPlan partition;
  std::vector<fsmoe::PipelinePlan> pipelines;
  int r_max = 16;
};

ModelPlan plan_model(const std::string& model_path,
                     const std::string& profile_path, int r_max_flag,
                     std::optional<std::uint64_t> seed_flag) {
  ModelPlan mp;
  mp.model = fsmoe::load_model(model_path);
  auto profile = fsmoe::load_profile(profile_path);
  mp.r_max = resolve_r_max(r_max_flag, mp.model.r_max);
  if (auto env_seed = parse_env_seed()) mp.model.de.seed = *env_seed;
  if (seed_flag) mp.model.de.seed = *seed_flag;

  std::vector<fsmoe::GradLayer> grads;
  for (const auto& layer : mp.model.layers) {
    auto vol = fsmoe::derive_volumes(layer, mp.model.parallel);
    mp.volumes.push_back(vol);
    fsmoe::GradLayer gl;
    gl.volumes = vol;
    gl.t_olp_dense_ms = layer.t_olp_dense_ms;
    gl.n_grad = vol.grad_elements;
    grads.push_back(gl);
  }
  mp.partition =
      fsmoe::build_partition_plan(grads, profile, mp.model.de, mp.r_max);
  for (size_t i = 0; i < mp.model.layers.size(); ++i)
    mp.pipelines.push_back(fsmoe::plan_layer(
        mp.volumes[i], profile, mp.partition.layers[i].t_gar_ms, mp.r_max));
  return mp;
}

int cmd_plan(const std::string& model_path, const std::string& profile_path,
             const std::string& out_path, int r_max_flag,
             std::optional<std::uint64_t> seed_flag) {
  note("planning " + model_path);
  auto mp = plan_model(model_path, profile_path, r_max_flag, seed_flag);

  json doc;
  doc["r_max"] = mp.r_max;
  doc["seed"] = mp.model.de.seed;
  doc["layers"] = json::array();
  for (size_t i = 0; i < mp.pipelines.size(); ++i) {
    json layer;
    layer["index"] = static_cast<int>(i);
    layer["volumes"] = volumes_to_json(mp.volumes[i]);
    layer["pipeline"] = fsmoe::plan_to_json(mp.pipelines[i]);
    doc["layers"].push_back(std::move(layer));
  }
  doc["partition"] = fsmoe::partition_to_json(mp.partition);
  emit(out_path, doc.dump(2) + "\n");
  return fsmoe::exit_ok;
}

// --- simulate ---------------------------------------------------------------

int cmd_simulate(const std::string& model_path,
                 const std::string& profile_path, const std::string& style_str,
                 const std::string& pass, int layer_index,
                 const std::string& out_path, const std::string& trace_path,
                 const std::string& timeline_path, int r_max_flag) {
  auto style = fsmoe::style_from_string(style_str);
  if (pass != "fwd" && pass != "bwd")
    throw fsmoe::ConfigError("simulate: pass must be fwd or bwd");

  auto model = fsmoe::load_model(model_path);
  auto profile = fsmoe::load_profile(profile_path);
  int r_max = resolve_r_max(r_max_flag, model.r_max);
  if (layer_index < 0 || layer_index >= int(model.layers.size()))
    throw fsmoe::ConfigError("simulate: layer index out of range");

  auto vol = fsmoe::derive_volumes(model.layers[layer_index], model.parallel);
  // Backward syncs the layer's full gradient in one launch.
  double t_gar = 0.0;
  if (pass == "bwd" && vol.grad_elements > 0)
    t_gar = fsmoe::predict_ms(profile.ar, vol.grad_elements);
  auto plan = fsmoe::plan_layer(vol, profile, t_gar, r_max);

  int r = pass == "fwd" ? plan.r_fwd : plan.r_bwd;
  int mult = pass == "fwd" ? 1 : 2;
  std::vector<double> sync;
  if (t_gar > 0) sync.push_back(t_gar);
  auto stage = fsmoe::stage_times(vol, profile, mult, r, sync);
  auto dag = fsmoe::build_baseline_dag(style, stage);
  auto tl = fsmoe::simulate(dag);
  note("simulated " + std::string(fsmoe::to_string(style)) + " " + pass +
       " at degree " + std::to_string(r));

  json doc;
  doc["style"] = fsmoe::to_string(style);
  doc["pass"] = pass;
  doc["layer"] = layer_index;
  doc["r"] = r;
  doc["makespan_ms"] = tl.makespan_ms;
  json busy, util;
  for (auto res : {fsmoe::Resource::inter_link, fsmoe::Resource::intra_link,
                   fsmoe::Resource::compute}) {
    double b = tl.busy_ms[static_cast<int>(res)];
    busy[fsmoe::to_string(res)] = b;
    util[fsmoe::to_string(res)] =
        tl.makespan_ms > 0 ? b / tl.makespan_ms : 0.0;
  }
  doc["busy_ms"] = std::move(busy);
  doc["utilization"] = std::move(util);
  emit(out_path, doc.dump(2) + "\n");

  if (!trace_path.empty())
    fsmoe::write_text_file(trace_path, fsmoe::chrome_trace_json(dag, tl));
  if (!timeline_path.empty())
    fsmoe::write_text_file(timeline_path, fsmoe::timeline_text(dag, tl));
  return fsmoe::exit_ok;
}

// --- sweep --------------------------------------------------------------

fsmoe::ParallelConfig sweep_parallel_defaults() {
  fsmoe::ParallelConfig p;
  p.total_gpus = 48;
  p.gpus_per_node = 8;
  p.data_parallel = 6;
  p.tensor_parallel = 8;
  p.expert_parallel = 6;
  p.expert_shard = 8;
  return p;
}

int cmd_sweep(const std::string& profile_path, int limit, int jobs,
              const std::string& out_path, const std::string& summary_path,
              int r_max_flag, bool yes) {
  auto profile = fsmoe::load_profile(profile_path);
  int r_max = resolve_r_max(r_max_flag, 16);

  auto grid = fsmoe::default_grid();
  if (limit > 0 && size_t(limit) < grid.size()) grid.resize(size_t(limit));
  if (grid.size() > 10000 && !yes)
    throw fsmoe::ConfigError("sweep: grids beyond 10000 cases need --yes");

  note("sweeping " + std::to_string(grid.size()) + " cases on " +
       std::to_string(jobs) + " threads");
  auto result =
      fsmoe::run_sweep(grid, sweep_parallel_defaults(), profile, r_max, jobs);

  emit(out_path, fsmoe::sweep_csv(result));
  if (!summary_path.empty())
    fsmoe::write_text_file(summary_path, fsmoe::summary_json_text(result));
  std::cerr << "sweep: " << result.summary.cases << " cases, "
            << result.summary.varied_degree_cases
            << " with differing phase degrees\n";
  return fsmoe::exit_ok;
}

// --- compare ------------------------------------------------------------

bool json_close(const json& a, const json& b, double tol) {
  if (a.is_number() && b.is_number()) {
    double x = a.get<double>();
    double y = b.get<double>();
    return std::abs(x - y) <= tol * std::max({1.0, std::abs(x), std::abs(y)});
  }
  if (a.type() != b.type()) return false;
  if (a.is_object()) {
    if (a.size() != b.size()) return false;
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) return false;
      if (!json_close(it.value(), b.at(it.key()), tol)) return false;
    }
    return true;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
      if (!json_close(a[i], b[i], tol)) return false;
    return true;
  }
  return a == b;
}

int cmd_compare(const std::string& path_a, const std::string& path_b,
                double tol) {
  json a, b;
  try {
    a = json::parse(fsmoe::read_text_file(path_a));
    b = json::parse(fsmoe::read_text_file(path_b));
  } catch (const json::parse_error& e) {
    throw fsmoe::ConfigError(std::string("compare: ") + e.what());
  }
  if (json_close(a, b, tol)) {
    std::cout << "equal within tolerance " << tol << "\n";
    return 0;
  }
  std::cout << "documents differ beyond tolerance " << tol << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoE training schedule planner and simulator"};
  app.require_subcommand(1);
  app.add_flag("--verbose", g_verbose, "log progress to stderr");

  std::string bench_path, profile_path, model_path, out_path, summary_path;
  std::string trace_path, timeline_path, style_str = "fsmoe", pass = "fwd";
  std::string compare_a, compare_b;
  double min_r2 = 0.99, tol = 1e-9;
  int r_max_flag = 0, layer_index = 0, limit = 0, jobs = 1;
  std::uint64_t seed_value = 0;
  bool yes = false;

  auto* fit = app.add_subcommand("fit", "fit a cluster profile from a bench CSV");
  fit->add_option("--bench", bench_path, "benchmark CSV path")->required();
  fit->add_option("--out", out_path, "output profile path");
  fit->add_option("--min-r2", min_r2, "minimum accepted r^2 per kind");

  auto* plan = app.add_subcommand("plan", "plan degrees and gradient sync");
  plan->add_option("--model", model_path, "model JSON path")->required();
  plan->add_option("--profile", profile_path, "profile JSON path")->required();
  plan->add_option("--out", out_path, "output plan path");
  plan->add_option("--r-max", r_max_flag, "degree cap override");
  auto* seed_opt = plan->add_option("--seed", seed_value, "DE seed override");

  auto* sim = app.add_subcommand("simulate", "simulate one layer and phase");
  sim->add_option("--model", model_path, "model JSON path")->required();
  sim->add_option("--profile", profile_path, "profile JSON path")->required();
  sim->add_option("--style", style_str, "fsmoe|fsmoe_no_iio|pipemoe|sequential");
  sim->add_option("--pass", pass, "fwd|bwd");
  sim->add_option("--layer", layer_index, "layer index");
  sim->add_option("--out", out_path, "output report path");
  sim->add_option("--trace", trace_path, "Chrome trace output path");
  sim->add_option("--timeline", timeline_path, "text timeline output path");
  sim->add_option("--r-max", r_max_flag, "degree cap override");

  auto* sweep = app.add_subcommand("sweep", "evaluate the layer-shape grid");
  sweep->add_option("--profile", profile_path, "profile JSON path")->required();
  sweep->add_option("--limit", limit, "case count cap (0 = full grid)");
  sweep->add_option("--jobs", jobs, "worker threads");
  sweep->add_option("--out", out_path, "output CSV path");
  sweep->add_option("--summary", summary_path, "summary JSON path");
  sweep->add_option("--r-max", r_max_flag, "degree cap");
  sweep->add_flag("--yes", yes, "confirm grids beyond 10000 cases");

  auto* compare = app.add_subcommand("compare", "diff two JSON reports");
  compare->add_option("a", compare_a, "first file")->required();
  compare->add_option("b", compare_b, "second file")->required();
  compare->add_option("--tol", tol, "numeric tolerance");

  CLI11_PARSE(app, argc, argv);

  std::optional<std::uint64_t> seed_flag;
  if (seed_opt->count()) seed_flag = seed_value;

  try {
    if (fit->parsed()) return cmd_fit(bench_path, out_path, min_r2);
    if (plan->parsed())
      return cmd_plan(model_path, profile_path, out_path, r_max_flag,
                      seed_flag);
    if (sim->parsed())
      return cmd_simulate(model_path, profile_path, style_str, pass,
                          layer_index, out_path, trace_path, timeline_path,
                          r_max_flag);
    if (sweep->parsed())
      return cmd_sweep(profile_path, limit, jobs, out_path, summary_path,
                       r_max_flag, yes);
    if (compare->parsed()) return cmd_compare(compare_a, compare_b, tol);
  } catch (const fsmoe::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fsmoe::exit_config_error;
  } catch (const fsmoe::FitQualityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fsmoe::exit_fit_quality;
  } catch (const fsmoe::InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return fsmoe::exit_invariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fsmoe::exit_invariant;
  }
  return fsmoe::exit_config_error;
}
