#include "fsmoe/grad_partition.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fsmoe {

namespace {

bool has_moe_traffic(const TaskVolumes& v) {
  return v.a2a_elements > 0 || v.ag_elements > 0 || v.rs_elements > 0 ||
         v.gemm_macs > 0;
}

PhaseInputs backward_inputs(const GradLayer& layer,
                            const ClusterProfile& profile, double t_gar) {
  PhaseInputs in;
  in.volumes = layer.volumes;
  in.profile = profile;
  in.t_gar_ms = t_gar;
  in.exp_multiplier = 2;
  return in;
}

// Backward span of one layer with a sync launch of t_gar attached; layers
// without expert traffic expose the launch bare.
double layer_span(const GradLayer& layer, const ClusterProfile& profile,
                  double t_gar, int r_max) {
  if (!has_moe_traffic(layer.volumes)) return t_gar;
  return find_optimal_pipeline_degree(backward_inputs(layer, profile, t_gar),
                                      r_max)
      .t_moe_ms;
}

double sync_ms(const ClusterProfile& profile, double elements) {
  return elements > 0 ? predict_ms(profile.ar, elements) : 0.0;
}

}  // namespace

SyncWindow sync_window(const GradLayer& layer, const ClusterProfile& profile,
                       int r_max) {
  SyncWindow w;
  w.t_olp_dense_ms = layer.t_olp_dense_ms;
  if (!has_moe_traffic(layer.volumes)) return w;  // dense window only

  auto in = backward_inputs(layer, profile, 0.0);
  auto d = find_optimal_pipeline_degree(in, r_max);
  w.degree = d.r;
  w.case_id = d.case_id;
  w.t_olp_moe_ms =
      d.case_id >= 2 ? overlappable_moe_time(d.case_id, in, d.r) : 0.0;
  return w;
}

Step1Result step1_assign(const std::vector<GradLayer>& layers,
                         const ClusterProfile& profile,
                         const std::vector<SyncWindow>& windows) {
  if (windows.size() != layers.size())
    throw ConfigError("step1: one window per layer required");

  const size_t n = layers.size();
  Step1Result out;
  out.n_first.assign(n, 0.0);
  out.n_first_dense.assign(n, 0.0);
  out.n_first_moe.assign(n, 0.0);
  out.remainder.assign(n, 0.0);

  // pending[j] = gradient produced at layer j not yet absorbed; layer i's
  // windows see only origins j < i, oldest first.
  std::vector<double> pending(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double cap_dense = invert_elements(profile.ar, windows[i].t_olp_dense_ms);
    double cap_moe = invert_elements(profile.ar, windows[i].t_olp_moe_ms);
    for (size_t j = 0; j < i; ++j) {
      if (pending[j] <= 0) continue;
      double d = std::min(cap_dense, pending[j]);
      cap_dense -= d;
      pending[j] -= d;
      out.n_first_dense[i] += d;
      double m = std::min(cap_moe, pending[j]);
      cap_moe -= m;
      pending[j] -= m;
      out.n_first_moe[i] += m;
      if (cap_dense <= 0 && cap_moe <= 0) break;
    }
    out.n_first[i] = out.n_first_dense[i] + out.n_first_moe[i];
    pending[i] = layers[i].n_grad;
  }
  out.remainder = pending;
  return out;
}

namespace {

// Clamp a candidate into the cumulative-availability polytope: a slot may
// carry only gradient already produced and still unassigned.
void repair(std::vector<double>& x, const std::vector<double>& remainder) {
  double avail = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    avail += remainder[i];
    x[i] = std::clamp(x[i], 0.0, avail);
    avail -= x[i];
  }
}

}  // namespace

std::vector<double> step2_optimize(const std::vector<GradLayer>& layers,
                                   const std::vector<double>& remainder,
                                   const ClusterProfile& profile,
                                   const DeParams& de, int r_max,
                                   const std::vector<double>& slot_base) {
  const size_t dims = layers.size();
  if (remainder.size() != dims)
    throw ConfigError("step2: one remainder entry per layer required");
  if (!slot_base.empty() && slot_base.size() != dims)
    throw ConfigError("step2: one slot base entry per layer required");
  if (dims == 0) return {};

  double rem_total = 0.0;
  for (double r : remainder) rem_total += r;

  auto objective = [&](const std::vector<double>& x) {
    double total = 0.0, assigned = 0.0;
    for (size_t i = 0; i < dims; ++i) {
      double base = slot_base.empty() ? 0.0 : slot_base[i];
      total += layer_span(layers[i], profile,
                          sync_ms(profile, base + x[i]), r_max);
      assigned += x[i];
    }
    return total + sync_ms(profile, rem_total - assigned);
  };

  int pop_size = de.population > 0 ? de.population
                                   : std::max<int>(8, 15 * int(dims));
  if (pop_size < 4)
    throw ConfigError("step2: population must be at least 4");
  if (de.generations < 0) throw ConfigError("step2: negative generations");

  std::mt19937_64 rng(de.seed);
  auto uniform = [&] { return (rng() >> 11) * 0x1.0p-53; };

  std::vector<std::vector<double>> pop(size_t(pop_size),
                                       std::vector<double>(dims, 0.0));
  // Member 0 defers everything to the tail; member 1 syncs every remainder
  // in its own slot; the rest start random.
  pop[1] = remainder;
  for (size_t m = 2; m < pop.size(); ++m)
    for (size_t i = 0; i < dims; ++i) pop[m][i] = uniform() * remainder[i];
  for (auto& member : pop) repair(member, remainder);

  std::vector<double> score(pop.size());
  for (size_t m = 0; m < pop.size(); ++m) score[m] = objective(pop[m]);

  std::vector<double> trial(dims);
  for (int g = 0; g < de.generations; ++g) {
    for (size_t m = 0; m < pop.size(); ++m) {
      size_t a, b, c;
      do a = rng() % pop.size(); while (a == m);
      do b = rng() % pop.size(); while (b == m || b == a);
      do c = rng() % pop.size(); while (c == m || c == a || c == b);
      size_t forced = rng() % dims;
      for (size_t i = 0; i < dims; ++i) {
        bool cross = uniform() < de.crossover || i == forced;
        trial[i] = cross ? pop[a][i] + de.weight * (pop[b][i] - pop[c][i])
                         : pop[m][i];
      }
      repair(trial, remainder);
      double t = objective(trial);
      if (t <= score[m]) {
        pop[m] = trial;
        score[m] = t;
      }
    }
  }

  size_t best = 0;
  for (size_t m = 1; m < pop.size(); ++m)
    if (score[m] < score[best]) best = m;
  return pop[best];
}

PartitionPlan build_partition_plan(const std::vector<GradLayer>& layers,
                                   const ClusterProfile& profile,
                                   const DeParams& de, int r_max) {
  const size_t n = layers.size();
  std::vector<SyncWindow> windows;
  windows.reserve(n);
  for (const auto& layer : layers)
    windows.push_back(sync_window(layer, profile, r_max));

  auto s1 = step1_assign(layers, profile, windows);
  double rem_total = 0.0;
  for (double r : s1.remainder) rem_total += r;

  PartitionPlan plan;
  std::vector<double> x(n, 0.0);
  if (rem_total > 0) {
    x = step2_optimize(layers, s1.remainder, profile, de, r_max,
                       s1.n_first_moe);
    plan.step2_ran = true;
  }

  // Replaying the repair recurrence keeps the tail nonnegative bit-exactly.
  double tail = 0.0, objective = 0.0;
  plan.layers.resize(n);
  for (size_t i = 0; i < n; ++i) {
    auto& out = plan.layers[i];
    out.n_first = s1.n_first[i];
    out.n_first_dense = s1.n_first_dense[i];
    out.n_first_moe = s1.n_first_moe[i];
    out.x_g = x[i];
    out.window = windows[i];
    double load = out.n_first + out.x_g;
    out.t_gar_ms = load > 0 ? predict_ms(profile.ar, load) : 0.0;
    tail += s1.remainder[i];
    tail -= x[i];
    objective += layer_span(
        layers[i], profile, sync_ms(profile, s1.n_first_moe[i] + x[i]), r_max);
  }

  plan.tail_elements = tail;
  plan.tail_ms = sync_ms(profile, plan.tail_elements);
  plan.objective_ms = objective + plan.tail_ms;
  return plan;
}

}  // namespace fsmoe
