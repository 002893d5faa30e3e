#include "fsmoe/cost_models.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace fsmoe {

double predict_ms(const LinearModel& m, double n) {
  return m.alpha_ms + n * m.beta_ms_per_unit;
}

double chunk_ms(const LinearModel& m, double n, int r) {
  if (r < 1) throw ConfigError("chunk_ms: degree must be >= 1");
  return m.alpha_ms + (n / r) * m.beta_ms_per_unit;
}

double invert_elements(const LinearModel& m, double t_ms) {
  if (m.beta_ms_per_unit <= 0.0)
    throw ConfigError("invert_elements: beta must be positive");
  return std::max(0.0, (t_ms - m.alpha_ms) / m.beta_ms_per_unit);
}

namespace {

struct OlsSums {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
};

OlsSums accumulate(std::span<const std::pair<double, double>> samples) {
  OlsSums s;
  s.n = static_cast<double>(samples.size());
  for (const auto& [x, y] : samples) {
    s.sx += x;
    s.sy += y;
    s.sxx += x * x;
    s.sxy += x * y;
  }
  return s;
}

double r_squared_of(std::span<const std::pair<double, double>> samples,
                    const LinearModel& m) {
  double mean_y = 0;
  for (const auto& [x, y] : samples) mean_y += y;
  mean_y /= static_cast<double>(samples.size());

  double ss_res = 0, ss_tot = 0;
  for (const auto& [x, y] : samples) {
    double e = y - predict_ms(m, x);
    ss_res += e * e;
    double d = y - mean_y;
    ss_tot += d * d;
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

FitResult fit_linear(std::span<const std::pair<double, double>> samples) {
  if (samples.size() < 2)
    throw ConfigError("fit_linear: need at least 2 samples");

  auto s = accumulate(samples);
  double denom = s.n * s.sxx - s.sx * s.sx;

  FitResult out;
  if (denom == 0.0) {
    // All x identical: slope is unidentifiable, fit the mean as the offset.
    out.model.alpha_ms = s.sy / s.n;
    out.model.beta_ms_per_unit = 0.0;
  } else {
    out.model.beta_ms_per_unit = (s.n * s.sxy - s.sx * s.sy) / denom;
    out.model.alpha_ms = (s.sy - out.model.beta_ms_per_unit * s.sx) / s.n;
  }

  if (out.model.alpha_ms < 0.0) {
    // Refit through the origin: beta = sum(xy) / sum(x^2).
    out.model.alpha_ms = 0.0;
    out.model.beta_ms_per_unit = s.sxx > 0.0 ? s.sxy / s.sxx : 0.0;
    out.clamped = true;
  }
  if (out.model.beta_ms_per_unit < 0.0) {
    out.model.beta_ms_per_unit = 0.0;
    out.model.alpha_ms = s.sy / s.n;
    out.clamped = true;
  }

  out.r_squared = r_squared_of(samples, out.model);
  return out;
}

ProfileFit fit_profile(const std::vector<BenchSample>& samples, double min_r2) {
  std::map<std::string, std::vector<std::pair<double, double>>> by_kind;
  for (const auto& s : samples) by_kind[s.kind].emplace_back(s.n, s.t_ms);

  for (const char* kind : {"a2a", "ag", "rs", "ar", "gemm"})
    if (!by_kind.count(kind))
      throw ConfigError(std::string("fit_profile: no samples for kind '") +
                        kind + "'");
  for (const auto& [kind, _] : by_kind)
    if (kind != "a2a" && kind != "ag" && kind != "rs" && kind != "ar" &&
        kind != "gemm")
      throw ConfigError("fit_profile: unknown kind '" + kind + "'");

  ProfileFit out;
  out.min_r_squared = 1.0;
  auto fit_kind = [&](const char* kind, LinearModel& dst) {
    auto res = fit_linear(by_kind[kind]);
    dst = res.model;
    out.min_r_squared = std::min(out.min_r_squared, res.r_squared);
    if (res.clamped) out.clamped_kinds.push_back(kind);
    if (res.r_squared < min_r2)
      throw FitQualityError(std::string("fit_profile: kind '") + kind +
                            "' r^2 " + std::to_string(res.r_squared) +
                            " below threshold " + std::to_string(min_r2));
  };
  fit_kind("a2a", out.profile.a2a);
  fit_kind("ag", out.profile.ag);
  fit_kind("rs", out.profile.rs);
  fit_kind("ar", out.profile.ar);
  fit_kind("gemm", out.profile.gemm);
  return out;
}

}  // namespace fsmoe
