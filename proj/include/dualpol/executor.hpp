#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "dualpol/action_codec.hpp"
#include "dualpol/env.hpp"
#include "dualpol/rng.hpp"

// Dual-rate runtime on a shared tick clock. Policy latency is charged in
// integer ticks (deterministic simulated asynchrony); a slow policy snapshots
// an observation, its result lands generalist_cost ticks later and describes
// actions starting `lead` ticks after that observation. Staleness of a chunk
// at tick t is t minus the tick its first action was meant for.

namespace dualpol::exec {

enum class Mode { Dual, GeneralistOnly, SpecialistOnly };

struct ExecutorConfig {
  int k_g = 8, k_s = 8;
  int generalist_cost = 8, specialist_cost = 1;
  int lead = 8;  // chunk targets start this many ticks after the snapshot
  double m = 0.3;  // aggregation decay; 0.1 matches the full-scale setting
  Mode mode = Mode::Dual;

  void validate() const {
    if (k_g < 1 || k_s < 1) throw std::invalid_argument("chunk lengths must be >= 1");
    if (specialist_cost < 1 || specialist_cost > generalist_cost)
      throw std::invalid_argument("need 1 <= specialist_cost <= generalist_cost");
    if (m < 0) throw std::invalid_argument("aggregation m must be >= 0");
    if (lead < 0) throw std::invalid_argument("lead must be >= 0");
  }

  // Full-scale protocol mirror: the slow policy contributes one action per
  // result, with eight fast rollouts per slow inference.
  static ExecutorConfig paper_real() {
    ExecutorConfig c;
    c.k_g = 1;
    c.k_s = 8;
    c.generalist_cost = 8;
    c.specialist_cost = 1;
    c.lead = 8;
    c.m = 0.1;
    return c;
  }
};

// Suffix of length k_g - tau_s: the portion of a chunk still in the future.
codec::ActionChunk shifted_window(const codec::ActionChunk& chunk, int tau_s);

// tau uniform over {0, ..., k_g}; training-time latency augmentation.
int sample_latency_offset(int k_g, Rng& rng);

// Exponential weights w_i = exp(-m * i), i = 0 for the OLDEST entry,
// normalized to sum 1.
std::array<float, 7> temporal_aggregate(const std::vector<std::array<float, 7>>& oldest_first,
                                        double m);

// Predictions for future ticks, insertion order = prediction age (oldest first).
class AggregationBuffer {
 public:
  void push(int64_t first_tick, const codec::ActionChunk& actions);
  // entries predicting `tick`, oldest first
  const std::vector<std::array<float, 7>>& at(int64_t tick) const;
  bool has(int64_t tick) const;
  void drop_before(int64_t tick);

 private:
  std::map<int64_t, std::vector<std::array<float, 7>>> entries_;
};

struct GeneralistResult {
  codec::ActionChunk chunk;
  Tensor<float> task_latents, action_latents;
  int grammar_repairs = 0;
  int64_t obs_tick = 0;     // when the snapshot was taken (set by the executor)
  int64_t chunk_start = 0;  // obs_tick + lead
};

using GeneralistFn = std::function<GeneralistResult(const env::Observation&)>;

// May return fewer than k_s actions (e.g. only the retained window); the
// executor schedules whatever is returned for consecutive ticks.
using SpecialistFn = std::function<codec::ActionChunk(
    const env::Observation& obs, const GeneralistResult* gen, int tau_s)>;

struct EpisodeResult {
  bool success = false;
  int64_t ticks = 0;
  int64_t generalist_inferences = 0;
  int64_t specialist_inferences = 0;
  int64_t grammar_repairs = 0;
  int64_t max_staleness = 0;
  std::vector<int64_t> staleness_histogram;  // index = tau_s at specialist calls
};

// Deterministic tick-loop rollout. The environment must be freshly reset.
EpisodeResult run_episode(env::ToyEnv& e, const ExecutorConfig& cfg,
                          const GeneralistFn& generalist, const SpecialistFn& specialist);

// Wall-clock variant: the slow policy runs on a background thread exchanging
// immutable snapshots; tick accounting (and thus which result is current) can
// differ run to run, so this mode is for demonstration, not tests of record.
EpisodeResult run_episode_threaded(env::ToyEnv& e, const ExecutorConfig& cfg,
                                   const GeneralistFn& generalist,
                                   const SpecialistFn& specialist);

}  // namespace dualpol::exec
