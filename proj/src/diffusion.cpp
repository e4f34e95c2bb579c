#include "dualpol/diffusion.hpp"

#include <cmath>

namespace dualpol::diffusion {

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "squared_cosine") return ScheduleKind::SquaredCosine;
  if (s == "linear_beta") return ScheduleKind::LinearBeta;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::SquaredCosine ? "squared_cosine" : "linear_beta";
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.alpha_bar.resize(size_t(T));
  if (kind == ScheduleKind::SquaredCosine) {
    const double off = 0.008;
    auto f = [&](double t) {
      double c = std::cos((t / double(T) + off) / (1.0 + off) * 1.5707963267948966192);
      return c * c;
    };
    double f0 = f(0.0);
    // build through per-step betas clipped at 0.999 so abar_T stays
    // usable in float arithmetic
    double abar = 1.0, prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      double cur = f(double(t)) / f0;
      double beta = 1.0 - cur / prev;
      if (beta > 0.999) beta = 0.999;
      prev = cur;
      abar *= 1.0 - beta;
      s.alpha_bar[size_t(t - 1)] = abar;
    }
  } else {
    // linear betas scaled so beta_T caps at 0.02 for T = 1000-style ranges
    double beta_lo = 1e-4, beta_hi = 0.02;
    double abar = 1.0;
    for (int t = 1; t <= T; ++t) {
      double beta = T == 1 ? beta_hi
                           : beta_lo + (beta_hi - beta_lo) * double(t - 1) / double(T - 1);
      // rescale to a comparable terminal abar for short schedules
      beta *= 1000.0 / double(T) > 1.0 ? 1000.0 / double(T) : 1.0;
      if (beta > 0.999) beta = 0.999;
      abar *= 1.0 - beta;
      s.alpha_bar[size_t(t - 1)] = abar;
    }
  }
  s.sqrt_alpha_bar.resize(size_t(T));
  s.sqrt_one_minus.resize(size_t(T));
  for (int i = 0; i < T; ++i) {
    s.sqrt_alpha_bar[size_t(i)] = std::sqrt(s.alpha_bar[size_t(i)]);
    s.sqrt_one_minus[size_t(i)] = std::sqrt(1.0 - s.alpha_bar[size_t(i)]);
  }
  return s;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("ddim steps must be in [1, T]");
  std::vector<int> ts(static_cast<size_t>(steps), 0);
  for (int i = 0; i < steps; ++i) {
    // descending, includes T; for steps=5, T=100: 100, 80, 60, 40, 20
    ts[size_t(i)] = int(std::llround(double(T) * double(steps - i) / double(steps)));
    if (ts[size_t(i)] < 1) ts[size_t(i)] = 1;
  }
  return ts;
}

codec::ActionChunk ddim_sample(const NoiseSchedule& sched, const DenoiseFn& model, int k_s,
                               int steps, Rng& rng) {
  auto ts = ddim_timesteps(sched.T, steps);
  Tensor<float> a_t(k_s, codec::kActionDims);
  for (auto& x : a_t.v) x = float(rng.normal());
  Tensor<float> x0;
  for (size_t i = 0; i < ts.size(); ++i) {
    int t = ts[i];
    x0 = model(a_t, t);
    for (auto& x : x0.v) x = x < -1.f ? -1.f : (x > 1.f ? 1.f : x);
    if (i + 1 == ts.size()) break;
    int t_prev = ts[i + 1];
    // implied noise, then deterministic jump to t_prev
    float sa = float(sched.sqrt_alpha_bar[size_t(t - 1)]);
    float sm = float(sched.sqrt_one_minus[size_t(t - 1)]);
    float sa_p = float(sched.sqrt_alpha_bar[size_t(t_prev - 1)]);
    float sm_p = float(sched.sqrt_one_minus[size_t(t_prev - 1)]);
    for (int64_t j = 0; j < a_t.size(); ++j) {
      float eps = (a_t.v[j] - sa * x0.v[j]) / sm;
      a_t.v[j] = sa_p * x0.v[j] + sm_p * eps;
    }
  }
  return codec::ActionChunk(std::move(x0));
}

}  // namespace dualpol::diffusion
