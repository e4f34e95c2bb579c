#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualpol/action_codec.hpp"
#include "dualpol/rng.hpp"
#include "dualpol/tensor.hpp"

// Noise schedules, the closed-form forward process, deterministic DDIM
// sampling with a sample-prediction head, and classifier-free guidance.

namespace dualpol::diffusion {

enum class ScheduleKind { SquaredCosine, LinearBeta };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

enum class PredictionHead { Sample, Noise };

struct NoiseSchedule {
  int T = 100;
  ScheduleKind kind = ScheduleKind::SquaredCosine;
  std::vector<double> alpha_bar;            // index t-1 holds alpha_bar_t, t = 1..T
  std::vector<double> sqrt_alpha_bar;
  std::vector<double> sqrt_one_minus;

  double abar(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("timestep out of range");
    return alpha_bar[size_t(t - 1)];
  }
};

NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::SquaredCosine);

struct GuidanceConfig {
  double w_g = 3.0;
  double drop_probability = 0.1;
};

// a_t = sqrt(abar_t) a0 + sqrt(1 - abar_t) eps
template <class T>
Tensor<T> forward_diffuse(const NoiseSchedule& sched, const Tensor<T>& a0, int t,
                          const Tensor<T>& eps) {
  if (!a0.same_shape(eps)) throw std::invalid_argument("forward_diffuse shape mismatch");
  if (t < 1 || t > sched.T) throw std::out_of_range("timestep out of range");
  T sa = T(sched.sqrt_alpha_bar[size_t(t - 1)]);
  T sm = T(sched.sqrt_one_minus[size_t(t - 1)]);
  Tensor<T> out(a0.rows, a0.cols);
  for (int64_t i = 0; i < a0.size(); ++i) out.v[i] = sa * a0.v[i] + sm * eps.v[i];
  return out;
}

// guided = uncond + w_g * (cond - uncond)
template <class T>
Tensor<T> cfg_combine(const Tensor<T>& cond, const Tensor<T>& uncond, double w_g) {
  if (!cond.same_shape(uncond)) throw std::invalid_argument("cfg_combine shape mismatch");
  Tensor<T> out(cond.rows, cond.cols);
  for (int64_t i = 0; i < cond.size(); ++i)
    out.v[i] = T(double(uncond.v[i]) + w_g * (double(cond.v[i]) - double(uncond.v[i])));
  return out;
}

// Evenly spaced descending DDIM timestep subsequence of {1..T}.
std::vector<int> ddim_timesteps(int T, int steps);

// Denoiser interface: predicts the clean sample x0 for (a_t, t). Guidance,
// if any, is the caller's responsibility inside the closure.
using DenoiseFn = std::function<Tensor<float>(const Tensor<float>& a_t, int t)>;

// Deterministic (eta = 0) DDIM under sample parameterization. The predicted
// x0 is clamped to [-1, 1] at every step.
codec::ActionChunk ddim_sample(const NoiseSchedule& sched, const DenoiseFn& model, int k_s,
                               int steps, Rng& rng);

// x0 <-> eps identity at timestep t, used to run a noise-prediction head
// through the same sampler.
template <class T>
Tensor<T> x0_from_eps(const NoiseSchedule& sched, const Tensor<T>& a_t, int t,
                      const Tensor<T>& eps) {
  T sa = T(sched.sqrt_alpha_bar[size_t(t - 1)]);
  T sm = T(sched.sqrt_one_minus[size_t(t - 1)]);
  Tensor<T> out(a_t.rows, a_t.cols);
  for (int64_t i = 0; i < a_t.size(); ++i) out.v[i] = (a_t.v[i] - sm * eps.v[i]) / sa;
  return out;
}

}  // namespace dualpol::diffusion
