#include "fsmoe/json_io.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fsmoe {

namespace {

const json& require(const json& j, const char* key, const char* where) {
  auto it = j.find(key);
  if (it == j.end())
    throw ConfigError(std::string(where) + ": missing field '" + key + "'");
  return *it;
}

double number(const json& j, const char* key, const char* where) {
  const auto& v = require(j, key, where);
  if (!v.is_number())
    throw ConfigError(std::string(where) + ": field '" + key +
                      "' must be a number");
  return v.get<double>();
}

int integer(const json& j, const char* key, const char* where) {
  const auto& v = require(j, key, where);
  if (!v.is_number_integer())
    throw ConfigError(std::string(where) + ": field '" + key +
                      "' must be an integer");
  return v.get<int>();
}

json linear_to_json(const LinearModel& m) {
  return json{{"alpha_ms", m.alpha_ms},
              {"beta_ms_per_unit", m.beta_ms_per_unit}};
}

LinearModel linear_from_json(const json& j, const char* where) {
  LinearModel m;
  m.alpha_ms = number(j, "alpha_ms", where);
  m.beta_ms_per_unit = number(j, "beta_ms_per_unit", where);
  return m;
}

}  // namespace

json profile_to_json(const ClusterProfile& profile) {
  json j;
  j["a2a"] = linear_to_json(profile.a2a);
  j["ag"] = linear_to_json(profile.ag);
  j["rs"] = linear_to_json(profile.rs);
  j["ar"] = linear_to_json(profile.ar);
  j["gemm"] = linear_to_json(profile.gemm);
  return j;
}

ClusterProfile profile_from_json(const json& j) {
  ClusterProfile p;
  p.a2a = linear_from_json(require(j, "a2a", "profile"), "profile.a2a");
  p.ag = linear_from_json(require(j, "ag", "profile"), "profile.ag");
  p.rs = linear_from_json(require(j, "rs", "profile"), "profile.rs");
  p.ar = linear_from_json(require(j, "ar", "profile"), "profile.ar");
  p.gemm = linear_from_json(require(j, "gemm", "profile"), "profile.gemm");
  return p;
}

ClusterProfile load_profile(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return profile_from_json(j);
}

void save_profile(const ClusterProfile& profile,
                  const std::filesystem::path& path) {
  write_text_file(path, profile_to_json(profile).dump(2) + "\n");
}

json layer_to_json(const LayerConfig& cfg) {
  json j;
  j["batch"] = cfg.batch;
  j["heads"] = cfg.heads;
  j["seq_len"] = cfg.seq_len;
  j["model_dim"] = cfg.model_dim;
  j["hidden_scale"] = cfg.hidden_scale;
  if (cfg.unlimited_capacity)
    j["capacity_factor"] = "*";
  else
    j["capacity_factor"] = cfg.capacity_factor;
  j["ffn"] = cfg.ffn == LayerConfig::Ffn::gated3 ? "gated3" : "simple";
  j["experts"] = cfg.experts;
  j["top_k"] = cfg.top_k;
  j["t_olp_dense_ms"] = cfg.t_olp_dense_ms;
  if (cfg.grad_elements_override)
    j["grad_elements"] = *cfg.grad_elements_override;
  return j;
}

LayerConfig layer_from_json(const json& j) {
  LayerConfig cfg;
  cfg.batch = integer(j, "batch", "layer");
  cfg.heads = integer(j, "heads", "layer");
  cfg.seq_len = integer(j, "seq_len", "layer");
  cfg.model_dim = integer(j, "model_dim", "layer");
  cfg.hidden_scale = integer(j, "hidden_scale", "layer");

  const auto& f = require(j, "capacity_factor", "layer");
  if (f.is_string()) {
    if (f.get<std::string>() != "*")
      throw ConfigError("layer: capacity_factor must be a number or \"*\"");
    cfg.unlimited_capacity = true;
  } else if (f.is_number()) {
    cfg.capacity_factor = f.get<double>();
  } else {
    throw ConfigError("layer: capacity_factor must be a number or \"*\"");
  }

  auto ffn = require(j, "ffn", "layer").get<std::string>();
  if (ffn == "simple")
    cfg.ffn = LayerConfig::Ffn::simple;
  else if (ffn == "gated3")
    cfg.ffn = LayerConfig::Ffn::gated3;
  else
    throw ConfigError("layer: unknown ffn '" + ffn + "'");

  cfg.experts = integer(j, "experts", "layer");
  cfg.top_k = integer(j, "top_k", "layer");
  if (j.contains("t_olp_dense_ms"))
    cfg.t_olp_dense_ms = number(j, "t_olp_dense_ms", "layer");
  if (j.contains("grad_elements"))
    cfg.grad_elements_override = number(j, "grad_elements", "layer");
  return cfg;
}

json parallel_to_json(const ParallelConfig& pcfg) {
  json j;
  j["total_gpus"] = pcfg.total_gpus;
  j["gpus_per_node"] = pcfg.gpus_per_node;
  j["data_parallel"] = pcfg.data_parallel;
  j["tensor_parallel"] = pcfg.tensor_parallel;
  j["expert_parallel"] = pcfg.expert_parallel;
  j["expert_shard"] = pcfg.expert_shard;
  return j;
}

ParallelConfig parallel_from_json(const json& j) {
  ParallelConfig p;
  p.total_gpus = integer(j, "total_gpus", "parallel");
  p.gpus_per_node = integer(j, "gpus_per_node", "parallel");
  p.data_parallel = integer(j, "data_parallel", "parallel");
  p.tensor_parallel = integer(j, "tensor_parallel", "parallel");
  p.expert_parallel = integer(j, "expert_parallel", "parallel");
  p.expert_shard = integer(j, "expert_shard", "parallel");
  return p;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.parallel = parallel_from_json(require(j, "parallel", "model"));
  const auto& layers = require(j, "layers", "model");
  if (!layers.is_array() || layers.empty())
    throw ConfigError("model: 'layers' must be a non-empty array");
  for (const auto& l : layers) m.layers.push_back(layer_from_json(l));
  if (j.contains("r_max")) m.r_max = integer(j, "r_max", "model");
  if (j.contains("de")) {
    const auto& de = j["de"];
    if (de.contains("population"))
      m.de.population = integer(de, "population", "model.de");
    if (de.contains("generations"))
      m.de.generations = integer(de, "generations", "model.de");
    if (de.contains("weight")) m.de.weight = number(de, "weight", "model.de");
    if (de.contains("crossover"))
      m.de.crossover = number(de, "crossover", "model.de");
    if (de.contains("seed"))
      m.de.seed = require(de, "seed", "model.de").get<std::uint64_t>();
  }
  return m;
}

json model_to_json(const ModelConfig& m) {
  json j;
  j["parallel"] = parallel_to_json(m.parallel);
  j["layers"] = json::array();
  for (const auto& l : m.layers) j["layers"].push_back(layer_to_json(l));
  j["r_max"] = m.r_max;
  j["de"] = json{{"population", m.de.population},
                 {"generations", m.de.generations},
                 {"weight", m.de.weight},
                 {"crossover", m.de.crossover},
                 {"seed", m.de.seed}};
  return j;
}

ModelConfig load_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

json plan_to_json(const PipelinePlan& plan) {
  json j;
  j["r_fwd"] = plan.r_fwd;
  j["case_fwd"] = plan.case_fwd;
  j["t_moe_fwd_ms"] = plan.t_moe_fwd_ms;
  j["boundary_fwd"] = plan.boundary_fwd;
  j["r_bwd"] = plan.r_bwd;
  j["case_bwd"] = plan.case_bwd;
  j["t_moe_bwd_ms"] = plan.t_moe_bwd_ms;
  j["boundary_bwd"] = plan.boundary_bwd;
  j["t_gar_bwd_ms"] = plan.t_gar_bwd_ms;
  j["t_olp_moe_bwd_ms"] = plan.t_olp_moe_bwd_ms;
  return j;
}

json partition_to_json(const PartitionPlan& plan) {
  json j;
  j["layers"] = json::array();
  for (const auto& l : plan.layers) {
    json w;
    w["degree"] = l.window.degree;
    w["case_id"] = l.window.case_id;
    w["t_olp_moe_ms"] = l.window.t_olp_moe_ms;
    w["t_olp_dense_ms"] = l.window.t_olp_dense_ms;
    j["layers"].push_back(json{{"n_first", l.n_first},
                               {"n_first_dense", l.n_first_dense},
                               {"n_first_moe", l.n_first_moe},
                               {"x_g", l.x_g},
                               {"t_gar_ms", l.t_gar_ms},
                               {"window", std::move(w)}});
  }
  j["tail_elements"] = plan.tail_elements;
  j["tail_ms"] = plan.tail_ms;
  j["objective_ms"] = plan.objective_ms;
  j["step2_ran"] = plan.step2_ran;
  return j;
}

namespace {

double parse_number(const std::string& cell, int line, const char* what) {
  const char* begin = cell.c_str();
  const char* end = begin + cell.size();
  double v = 0.0;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError("bench csv line " + std::to_string(line) + ": bad " +
                      what + " '" + cell + "'");
  return v;
}

}  // namespace

std::vector<BenchSample> parse_bench_csv(const std::string& text) {
  std::vector<BenchSample> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t pos = 0;
    while (true) {
      size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (line_no == 1) {
      if (cells != std::vector<std::string>{"kind", "n", "t_ms"})
        throw ConfigError("bench csv line 1: expected header kind,n,t_ms");
      continue;
    }
    if (cells.size() != 3)
      throw ConfigError("bench csv line " + std::to_string(line_no) +
                        ": expected 3 fields, got " +
                        std::to_string(cells.size()));
    BenchSample s;
    s.kind = cells[0];
    if (s.kind != "a2a" && s.kind != "ag" && s.kind != "rs" &&
        s.kind != "ar" && s.kind != "gemm")
      throw ConfigError("bench csv line " + std::to_string(line_no) +
                        ": unknown kind '" + s.kind + "'");
    s.n = parse_number(cells[1], line_no, "n");
    s.t_ms = parse_number(cells[2], line_no, "t_ms");
    out.push_back(std::move(s));
  }
  if (line_no == 0) throw ConfigError("bench csv line 1: empty file");
  return out;
}

std::vector<BenchSample> load_bench_csv(const std::filesystem::path& path) {
  return parse_bench_csv(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("cannot write " + path.string());
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace fsmoe
