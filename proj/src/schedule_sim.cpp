#include "fsmoe/schedule_sim.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <utility>

#include <nlohmann/json.hpp>

namespace fsmoe {

Resource resource_of(OpKind kind) {
  switch (kind) {
    case OpKind::a2a_dispatch:
    case OpKind::a2a_combine:
    case OpKind::grad_allreduce:
      return Resource::inter_link;
    case OpKind::allgather:
    case OpKind::reducescatter:
      return Resource::intra_link;
    case OpKind::expert:
    case OpKind::dense_compute:
      return Resource::compute;
  }
  return Resource::compute;
}

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::a2a_dispatch: return "a2a_dispatch";
    case OpKind::allgather: return "allgather";
    case OpKind::expert: return "expert";
    case OpKind::reducescatter: return "reducescatter";
    case OpKind::a2a_combine: return "a2a_combine";
    case OpKind::grad_allreduce: return "grad_allreduce";
    case OpKind::dense_compute: return "dense_compute";
  }
  return "?";
}

const char* to_string(Resource res) {
  switch (res) {
    case Resource::inter_link: return "inter";
    case Resource::intra_link: return "intra";
    case Resource::compute: return "compute";
  }
  return "?";
}

ScheduleStyle style_from_string(const std::string& s) {
  if (s == "fsmoe") return ScheduleStyle::fsmoe;
  if (s == "fsmoe_no_iio") return ScheduleStyle::fsmoe_no_iio;
  if (s == "pipemoe") return ScheduleStyle::pipemoe;
  if (s == "sequential") return ScheduleStyle::sequential;
  throw ConfigError("unknown schedule style '" + s + "'");
}

const char* to_string(ScheduleStyle style) {
  switch (style) {
    case ScheduleStyle::fsmoe: return "fsmoe";
    case ScheduleStyle::fsmoe_no_iio: return "fsmoe_no_iio";
    case ScheduleStyle::pipemoe: return "pipemoe";
    case ScheduleStyle::sequential: return "sequential";
  }
  return "?";
}

Timeline simulate(const Dag& dag) {
  const size_t n = dag.tasks.size();

  // Constraint edges: dependencies, per-resource issue order, order groups.
  std::vector<std::vector<int>> out(n);
  std::vector<int> indeg(n, 0);
  auto add_edge = [&](int from, int to) {
    out[size_t(from)].push_back(to);
    ++indeg[size_t(to)];
  };

  int last_on_resource[3] = {-1, -1, -1};
  std::vector<std::pair<int, int>> last_in_group;  // (group, task)
  for (size_t i = 0; i < n; ++i) {
    const auto& t = dag.tasks[i];
    for (int d : t.deps) {
      if (d < 0 || size_t(d) >= n)
        throw InvariantError("simulate: dependency on unknown task");
      add_edge(d, int(i));
    }
    int res = int(resource_of(t.kind));
    if (last_on_resource[res] >= 0) add_edge(last_on_resource[res], int(i));
    last_on_resource[res] = int(i);
    if (t.order_group >= 0) {
      auto it = std::find_if(last_in_group.begin(), last_in_group.end(),
                             [&](auto& g) { return g.first == t.order_group; });
      if (it != last_in_group.end()) {
        add_edge(it->second, int(i));
        it->second = int(i);
      } else {
        last_in_group.emplace_back(t.order_group, int(i));
      }
    }
  }

  Timeline tl;
  tl.tasks.assign(n, {});
  std::deque<int> ready;
  for (size_t i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push_back(int(i));

  size_t done = 0;
  while (!ready.empty()) {
    int i = ready.front();
    ready.pop_front();
    double end = tl.tasks[size_t(i)].start_ms + dag.tasks[size_t(i)].duration_ms;
    tl.tasks[size_t(i)].end_ms = end;
    ++done;
    for (int next : out[size_t(i)]) {
      auto& st = tl.tasks[size_t(next)];
      st.start_ms = std::max(st.start_ms, end);
      if (--indeg[size_t(next)] == 0) ready.push_back(next);
    }
    tl.makespan_ms = std::max(tl.makespan_ms, end);
    tl.busy_ms[size_t(resource_of(dag.tasks[size_t(i)].kind))] +=
        dag.tasks[size_t(i)].duration_ms;
  }
  if (done != n) throw InvariantError("simulate: ordering cycle");
  return tl;
}

StageTimes stage_times(const TaskVolumes& vol, const ClusterProfile& profile,
                       int exp_multiplier, int r,
                       std::vector<double> grad_sync_ms) {
  if (r < 1) throw ConfigError("stage_times: degree must be >= 1");
  if (exp_multiplier < 1)
    throw ConfigError("stage_times: expert multiplier must be >= 1");

  StageTimes st;
  st.degree = r;
  st.dispatch_ms = chunk_ms(profile.a2a, vol.a2a_elements, r);
  st.combine_ms = st.dispatch_ms;
  st.gather_ms = chunk_ms(profile.ag, vol.ag_elements, r);
  st.scatter_ms = chunk_ms(profile.rs, vol.rs_elements, r);
  LinearModel exp_model{
      vol.gemm_count * exp_multiplier * profile.gemm.alpha_ms,
      vol.gemm_count * exp_multiplier * profile.gemm.beta_ms_per_unit};
  st.expert_ms = chunk_ms(exp_model, vol.gemm_macs, r);
  st.grad_sync_ms = std::move(grad_sync_ms);
  return st;
}

namespace {

std::string indexed(const char* base, int i) {
  return std::string(base) + "[" + std::to_string(i) + "]";
}

struct StageTasks {
  std::vector<int> dispatch, gather, expert, scatter, combine, grad_sync;
};

// Emits one pipelined layer. `group` < 0 leaves communication ungrouped
// (the dual-lane schedule); >= 0 serializes every comm task through it.
// `phase_barriers` makes each comm phase wait for all its chunk inputs.
StageTasks emit_stage(Dag& dag, const StageTimes& stage, int group,
                      bool phase_barriers, int chunk_base = 0) {
  if (stage.degree < 1) throw ConfigError("layer degree must be >= 1");
  const int r = stage.degree;
  StageTasks ids;
  auto push = [&](OpKind kind, double dur, std::vector<int> deps,
                  const std::string& label, int chunk, bool comm) {
    SimTask t;
    t.id = int(dag.tasks.size());
    t.kind = kind;
    t.duration_ms = dur;
    t.deps = std::move(deps);
    t.chunk = chunk;
    t.order_group = comm ? group : -1;
    t.label = label;
    dag.tasks.push_back(std::move(t));
    return t.id;
  };

  for (int i = 0; i < r; ++i)
    ids.dispatch.push_back(push(OpKind::a2a_dispatch, stage.dispatch_ms, {},
                                indexed("dispatch", i), chunk_base + i, true));
  for (size_t j = 0; j < stage.grad_sync_ms.size(); ++j)
    ids.grad_sync.push_back(push(OpKind::grad_allreduce, stage.grad_sync_ms[j],
                                 {ids.dispatch.back()},
                                 indexed("grad_sync", int(j)), -1, true));
  for (int i = 0; i < r; ++i) {
    std::vector<int> deps = {ids.dispatch[size_t(i)]};
    if (phase_barriers && i == 0)
      deps.assign(ids.dispatch.begin(), ids.dispatch.end());
    ids.gather.push_back(push(OpKind::allgather, stage.gather_ms,
                              std::move(deps), indexed("allgather", i),
                              chunk_base + i, true));
  }
  for (int i = 0; i < r; ++i)
    ids.expert.push_back(push(OpKind::expert, stage.expert_ms,
                              {ids.gather[size_t(i)]}, indexed("expert", i),
                              chunk_base + i, false));
  for (int i = 0; i < r; ++i) {
    std::vector<int> deps = {ids.expert[size_t(i)]};
    if (phase_barriers && i == 0)
      deps.assign(ids.expert.begin(), ids.expert.end());
    ids.scatter.push_back(push(OpKind::reducescatter, stage.scatter_ms,
                               std::move(deps), indexed("reducescatter", i),
                               chunk_base + i, true));
  }
  for (int i = 0; i < r; ++i) {
    std::vector<int> deps = {ids.scatter[size_t(i)]};
    if (phase_barriers && i == 0)
      deps.assign(ids.scatter.begin(), ids.scatter.end());
    ids.combine.push_back(push(OpKind::a2a_combine, stage.combine_ms,
                               std::move(deps), indexed("combine", i),
                               chunk_base + i, true));
  }
  return ids;
}

}  // namespace

Dag build_moe_dag(const StageTimes& stage) {
  Dag dag;
  emit_stage(dag, stage, -1, false);
  return dag;
}

Dag build_baseline_dag(ScheduleStyle style, const StageTimes& stage) {
  if (stage.degree < 1) throw ConfigError("layer degree must be >= 1");
  const int r = stage.degree;

  switch (style) {
    case ScheduleStyle::fsmoe:
      return build_moe_dag(stage);

    case ScheduleStyle::fsmoe_no_iio: {
      // One merged comm stream issuing whole phases back to back.
      Dag dag;
      emit_stage(dag, stage, 0, true);
      return dag;
    }

    case ScheduleStyle::pipemoe: {
      // Comm interleaved dispatch/gather then scatter/combine per chunk;
      // gradient sync only after all combines.
      Dag dag;
      auto push = [&](OpKind kind, double dur, std::vector<int> deps,
                      const std::string& label, int chunk, bool comm) {
        SimTask t;
        t.id = int(dag.tasks.size());
        t.kind = kind;
        t.duration_ms = dur;
        t.deps = std::move(deps);
        t.chunk = chunk;
        t.order_group = comm ? 0 : -1;
        t.label = label;
        dag.tasks.push_back(std::move(t));
        return t.id;
      };

      std::vector<int> gathers;
      int last_dispatch = -1;
      for (int i = 0; i < r; ++i) {
        int d = push(OpKind::a2a_dispatch, stage.dispatch_ms, {},
                     indexed("dispatch", i), i, true);
        gathers.push_back(push(OpKind::allgather, stage.gather_ms, {d},
                               indexed("allgather", i), i, true));
        last_dispatch = d;
      }
      std::vector<int> experts;
      for (int i = 0; i < r; ++i)
        experts.push_back(push(OpKind::expert, stage.expert_ms,
                               {gathers[size_t(i)]}, indexed("expert", i), i,
                               false));
      for (int i = 0; i < r; ++i) {
        int s = push(OpKind::reducescatter, stage.scatter_ms,
                     {experts[size_t(i)]}, indexed("reducescatter", i), i, true);
        push(OpKind::a2a_combine, stage.combine_ms, {s}, indexed("combine", i),
             i, true);
      }
      for (size_t j = 0; j < stage.grad_sync_ms.size(); ++j)
        push(OpKind::grad_allreduce, stage.grad_sync_ms[j], {last_dispatch},
             indexed("grad_sync", int(j)), -1, true);
      return dag;
    }

    case ScheduleStyle::sequential: {
      Dag dag;
      int prev = -1;
      auto chain = [&](OpKind kind, double dur, const std::string& label,
                       int chunk) {
        SimTask t;
        t.id = int(dag.tasks.size());
        t.kind = kind;
        t.duration_ms = dur;
        if (prev >= 0) t.deps.push_back(prev);
        t.chunk = chunk;
        t.label = label;
        dag.tasks.push_back(std::move(t));
        prev = t.id;
      };
      for (int i = 0; i < r; ++i) {
        chain(OpKind::a2a_dispatch, stage.dispatch_ms, indexed("dispatch", i), i);
        chain(OpKind::allgather, stage.gather_ms, indexed("allgather", i), i);
        chain(OpKind::expert, stage.expert_ms, indexed("expert", i), i);
        chain(OpKind::reducescatter, stage.scatter_ms,
              indexed("reducescatter", i), i);
        chain(OpKind::a2a_combine, stage.combine_ms, indexed("combine", i), i);
      }
      for (size_t j = 0; j < stage.grad_sync_ms.size(); ++j)
        chain(OpKind::grad_allreduce, stage.grad_sync_ms[j],
              indexed("grad_sync", int(j)), -1);
      return dag;
    }
  }
  throw ConfigError("unknown schedule style");
}

BruteForceResult brute_force_best_degree(const TaskVolumes& vol,
                                         const ClusterProfile& profile,
                                         double t_gar_ms, int exp_multiplier,
                                         int r_max) {
  if (r_max < 1) throw ConfigError("brute force: r_max must be >= 1");
  BruteForceResult best;
  best.makespan_ms = -1.0;
  for (int r = 1; r <= r_max; ++r) {
    std::vector<double> g;
    if (t_gar_ms > 0) g.push_back(t_gar_ms);
    auto st = stage_times(vol, profile, exp_multiplier, r, std::move(g));
    double m = simulate(build_moe_dag(st)).makespan_ms;
    if (best.makespan_ms < 0 || m < best.makespan_ms - 1e-15) {
      best.r = r;
      best.makespan_ms = m;
    }
  }
  return best;
}

double idle_within_span(const Dag& dag, const Timeline& tl, Resource res) {
  double first = -1.0, last = 0.0, busy = 0.0;
  for (size_t i = 0; i < dag.tasks.size(); ++i) {
    if (resource_of(dag.tasks[i].kind) != res) continue;
    if (first < 0 || tl.tasks[i].start_ms < first) first = tl.tasks[i].start_ms;
    last = std::max(last, tl.tasks[i].end_ms);
    busy += dag.tasks[i].duration_ms;
  }
  if (first < 0) return 0.0;
  return std::max(0.0, (last - first) - busy);
}

std::string chrome_trace_json(const Dag& dag, const Timeline& tl) {
  nlohmann::ordered_json root;
  root["displayTimeUnit"] = "ms";
  auto& events = root["traceEvents"] = nlohmann::ordered_json::array();
  for (size_t i = 0; i < dag.tasks.size(); ++i) {
    const auto& t = dag.tasks[i];
    nlohmann::ordered_json e;
    e["name"] = t.label.empty() ? to_string(t.kind) : t.label;
    e["ph"] = "X";
    e["ts"] = tl.tasks[i].start_ms * 1000.0;
    e["dur"] = t.duration_ms * 1000.0;
    e["pid"] = 0;
    e["tid"] = int(resource_of(t.kind));
    events.push_back(std::move(e));
  }
  return root.dump(2) + "\n";
}

std::string timeline_text(const Dag& dag, const Timeline& tl) {
  std::string out;
  char line[160];
  for (size_t i = 0; i < dag.tasks.size(); ++i) {
    const auto& t = dag.tasks[i];
    std::snprintf(line, sizeof line, "%-7s %12.6f %12.6f  %s\n",
                  to_string(resource_of(t.kind)), tl.tasks[i].start_ms,
                  tl.tasks[i].end_ms,
                  t.label.empty() ? to_string(t.kind) : t.label.c_str());
    out += line;
  }
  return out;
}

Dag build_backward_model_dag(const std::vector<BackwardLayerSim>& layers,
                             double tail_sync_ms) {
  Dag dag;
  int prev_combine = -1;
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    std::vector<int> entry;
    if (prev_combine >= 0) entry.push_back(prev_combine);

    for (size_t j = 0; j < layer.pre_sync_ms.size(); ++j) {
      SimTask t;
      t.id = int(dag.tasks.size());
      t.kind = OpKind::grad_allreduce;
      t.duration_ms = layer.pre_sync_ms[j];
      t.deps = entry;
      t.label = "pre_sync[" + std::to_string(l) + "." + std::to_string(j) + "]";
      dag.tasks.push_back(std::move(t));
    }

    SimTask dense;
    dense.id = int(dag.tasks.size());
    dense.kind = OpKind::dense_compute;
    dense.duration_ms = layer.dense_ms;
    dense.deps = entry;
    dense.label = "dense[" + std::to_string(l) + "]";
    int dense_id = dense.id;
    dag.tasks.push_back(std::move(dense));

    Dag stage_dag;
    auto ids = emit_stage(stage_dag, layer.stage, -1, false, 0);
    int base = int(dag.tasks.size());
    for (auto& t : stage_dag.tasks) {
      t.id += base;
      for (int& d : t.deps) d += base;
      t.label = "L" + std::to_string(l) + "." + t.label;
      dag.tasks.push_back(std::move(t));
    }
    dag.tasks[size_t(base + ids.dispatch.front())].deps.push_back(dense_id);
    prev_combine = base + ids.combine.back();
  }

  if (tail_sync_ms > 0) {
    SimTask t;
    t.id = int(dag.tasks.size());
    t.kind = OpKind::grad_allreduce;
    t.duration_ms = tail_sync_ms;
    if (prev_combine >= 0) t.deps.push_back(prev_combine);
    t.label = "tail_sync";
    dag.tasks.push_back(std::move(t));
  }
  return dag;
}

}  // namespace fsmoe
