#include "dualpol/executor.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <thread>

namespace dualpol::exec {

codec::ActionChunk shifted_window(const codec::ActionChunk& chunk, int tau_s) {
  int k = chunk.length();
  if (tau_s < 0 || tau_s > k)
    throw std::invalid_argument("shifted_window: tau_s " + std::to_string(tau_s) +
                                " outside [0, " + std::to_string(k) + "]");
  codec::ActionChunk out(k - tau_s);
  for (int i = tau_s; i < k; ++i)
    for (int d = 0; d < codec::kActionDims; ++d)
      out.values.at(i - tau_s, d) = chunk.values.at(i, d);
  return out;
}

int sample_latency_offset(int k_g, Rng& rng) {
  if (k_g < 0) throw std::invalid_argument("k_g must be >= 0");
  return int(rng.randint(0, uint64_t(k_g)));
}

std::array<float, 7> temporal_aggregate(const std::vector<std::array<float, 7>>& oldest_first,
                                        double m) {
  if (oldest_first.empty()) throw std::invalid_argument("temporal_aggregate: empty buffer");
  double total = 0;
  std::array<double, 7> acc{};
  for (size_t i = 0; i < oldest_first.size(); ++i) {
    double w = std::exp(-m * double(i));
    total += w;
    for (int d = 0; d < 7; ++d) acc[size_t(d)] += w * double(oldest_first[i][size_t(d)]);
  }
  std::array<float, 7> out{};
  for (int d = 0; d < 7; ++d) out[size_t(d)] = float(acc[size_t(d)] / total);
  return out;
}

void AggregationBuffer::push(int64_t first_tick, const codec::ActionChunk& actions) {
  for (int i = 0; i < actions.length(); ++i) {
    std::array<float, 7> a{};
    for (int d = 0; d < 7; ++d) a[size_t(d)] = actions.values.at(i, d);
    entries_[first_tick + i].push_back(a);
  }
}

const std::vector<std::array<float, 7>>& AggregationBuffer::at(int64_t tick) const {
  auto it = entries_.find(tick);
  if (it == entries_.end()) throw std::invalid_argument("no predictions for requested tick");
  return it->second;
}

bool AggregationBuffer::has(int64_t tick) const { return entries_.count(tick) != 0; }

void AggregationBuffer::drop_before(int64_t tick) {
  entries_.erase(entries_.begin(), entries_.lower_bound(tick));
}

namespace {

int64_t clamp64(int64_t v, int64_t lo, int64_t hi) { return std::min(std::max(v, lo), hi); }

struct TickLoop {
  const ExecutorConfig& cfg;
  env::ToyEnv& e;
  const SpecialistFn& specialist;
  EpisodeResult res;
  AggregationBuffer buf;
  GeneralistResult current;
  bool has_current = false;

  explicit TickLoop(const ExecutorConfig& c, env::ToyEnv& env_, const SpecialistFn& s)
      : cfg(c), e(env_), specialist(s) {}

  std::array<float, 7> choose_action(int64_t t, const env::Observation& obs) {
    if (cfg.mode == Mode::GeneralistOnly) {
      if (has_current) {
        int64_t idx = t - current.chunk_start;
        if (idx >= 0 && idx < current.chunk.length()) {
          std::array<float, 7> a{};
          for (int d = 0; d < 7; ++d) a[size_t(d)] = current.chunk.values.at(int(idx), d);
          return a;
        }
      }
      return {};
    }
    // dual / specialist-only
    // In dual mode the fast policy is defined by its conditioning on the slow
    // policy's output; until the first slow result lands there is nothing to
    // condition on, so the executor holds. Running the specialist
    // unconditioned here would seed the aggregation buffer with ungrounded
    // predictions that dominate (oldest-first weighting) for another chunk
    // length after conditions arrive.
    if (cfg.mode == Mode::Dual && !has_current) return {};
    if (t % cfg.specialist_cost == 0) {
      const GeneralistResult* gp =
          (cfg.mode == Mode::Dual && has_current) ? &current : nullptr;
      int tau = 0;
      if (gp) {
        tau = int(clamp64(t - gp->chunk_start, 0, cfg.k_g));
        if (size_t(tau) >= res.staleness_histogram.size())
          res.staleness_histogram.resize(size_t(tau) + 1, 0);
        ++res.staleness_histogram[size_t(tau)];
        res.max_staleness = std::max(res.max_staleness, int64_t(tau));
      }
      auto chunk = specialist(obs, gp, tau);
      ++res.specialist_inferences;
      if (chunk.length() > 0) buf.push(t, chunk);
    }
    std::array<float, 7> a{};
    if (buf.has(t)) a = temporal_aggregate(buf.at(t), cfg.m);
    buf.drop_before(t + 1);
    return a;
  }
};

}  // namespace

EpisodeResult run_episode(env::ToyEnv& e, const ExecutorConfig& cfg,
                          const GeneralistFn& generalist, const SpecialistFn& specialist) {
  cfg.validate();
  bool use_gen = cfg.mode != Mode::SpecialistOnly;
  bool use_spec = cfg.mode != Mode::GeneralistOnly;
  if (use_gen && !generalist) throw std::invalid_argument("mode requires a generalist");
  if (use_spec && !specialist) throw std::invalid_argument("mode requires a specialist");

  TickLoop loop(cfg, e, specialist);
  auto obs = e.observe();

  // slow worker state: the result is computed at launch but lands later
  bool busy = false;
  int64_t done_tick = 0;
  GeneralistResult staged;

  int64_t t = 0;
  while (!e.done()) {
    if (use_gen) {
      if (busy && t >= done_tick) {
        loop.current = staged;
        loop.has_current = true;
        busy = false;
      }
      if (!busy) {
        staged = generalist(obs);
        staged.obs_tick = t;
        staged.chunk_start = t + cfg.lead;
        busy = true;
        done_tick = t + cfg.generalist_cost;
        ++loop.res.generalist_inferences;
        loop.res.grammar_repairs += staged.grammar_repairs;
      }
    }
    auto action = loop.choose_action(t, obs);
    auto step = e.step(action);
    obs = std::move(step.obs);
    ++t;
    loop.res.ticks = t;
    loop.res.success = step.success;
  }
  return loop.res;
}

EpisodeResult run_episode_threaded(env::ToyEnv& e, const ExecutorConfig& cfg,
                                   const GeneralistFn& generalist,
                                   const SpecialistFn& specialist) {
  cfg.validate();
  bool use_gen = cfg.mode != Mode::SpecialistOnly;
  bool use_spec = cfg.mode != Mode::GeneralistOnly;
  if (use_gen && !generalist) throw std::invalid_argument("mode requires a generalist");
  if (use_spec && !specialist) throw std::invalid_argument("mode requires a specialist");

  struct Shared {
    std::mutex mu;
    std::condition_variable cv;
    std::optional<std::pair<env::Observation, int64_t>> job;  // snapshot + tick
    std::optional<GeneralistResult> ready;
    bool stop = false;
  } sh;

  std::thread worker;
  if (use_gen)
    worker = std::thread([&] {
      for (;;) {
        std::pair<env::Observation, int64_t> job;
        {
          std::unique_lock<std::mutex> lk(sh.mu);
          sh.cv.wait(lk, [&] { return sh.stop || sh.job.has_value(); });
          if (sh.stop) return;
          job = std::move(*sh.job);
          sh.job.reset();
        }
        GeneralistResult r = generalist(job.first);
        r.obs_tick = job.second;
        r.chunk_start = job.second + cfg.lead;
        {
          std::lock_guard<std::mutex> lk(sh.mu);
          sh.ready = std::move(r);
        }
      }
    });

  TickLoop loop(cfg, e, specialist);
  auto obs = e.observe();
  bool busy = false;
  int64_t t = 0;
  while (!e.done()) {
    if (use_gen) {
      {
        std::lock_guard<std::mutex> lk(sh.mu);
        if (sh.ready) {
          loop.current = std::move(*sh.ready);
          sh.ready.reset();
          loop.has_current = true;
          loop.res.grammar_repairs += loop.current.grammar_repairs;
          busy = false;
        }
      }
      if (!busy) {
        {
          std::lock_guard<std::mutex> lk(sh.mu);
          sh.job = {obs, t};
          ++loop.res.generalist_inferences;
        }
        sh.cv.notify_one();
        busy = true;
      }
    }
    auto action = loop.choose_action(t, obs);
    auto step = e.step(action);
    obs = std::move(step.obs);
    ++t;
    loop.res.ticks = t;
    loop.res.success = step.success;
  }
  if (worker.joinable()) {
    {
      std::lock_guard<std::mutex> lk(sh.mu);
      sh.stop = true;
    }
    sh.cv.notify_one();
    worker.join();
  }
  return loop.res;
}

}  // namespace dualpol::exec
