#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsmoe/cost_models.hpp"
#include "fsmoe/grad_partition.hpp"
#include "fsmoe/pipeline_optimizer.hpp"
#include "fsmoe/workload.hpp"

namespace fsmoe {

using json = nlohmann::ordered_json;

// All loaders throw ConfigError with the offending path/field named.

json profile_to_json(const ClusterProfile& profile);
ClusterProfile profile_from_json(const json& j);
ClusterProfile load_profile(const std::filesystem::path& path);
void save_profile(const ClusterProfile& profile, const std::filesystem::path& path);

json layer_to_json(const LayerConfig& cfg);
LayerConfig layer_from_json(const json& j);

json parallel_to_json(const ParallelConfig& pcfg);
ParallelConfig parallel_from_json(const json& j);

// A model: shared parallel layout plus one or more layers in traversal order,
// with optimizer/DE knobs.
struct ModelConfig {
  ParallelConfig parallel;
  std::vector<LayerConfig> layers;
  int r_max = 16;
  DeParams de;
};
ModelConfig model_from_json(const json& j);
json model_to_json(const ModelConfig& m);
ModelConfig load_model(const std::filesystem::path& path);

json plan_to_json(const PipelinePlan& plan);
json partition_to_json(const PartitionPlan& plan);

// Benchmark CSV: header "kind,n,t_ms", kinds a2a|ag|rs|ar|gemm.
// Malformed rows raise ConfigError naming the 1-based line.
std::vector<BenchSample> parse_bench_csv(const std::string& text);
std::vector<BenchSample> load_bench_csv(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Shortest round-trip decimal rendering for CSV cells.
std::string format_double(double v);

}  // namespace fsmoe
