#pragma once

#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "dualpol/checkpoint.hpp"
#include "dualpol/config.hpp"
#include "dualpol/dataset.hpp"

// Two-stage training (slow autoregressive policy first, then the fast
// denoiser conditioned on its frozen outputs), success/chain evaluation, and
// ablation orchestration.

namespace dualpol::te {

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using GeneralistModelF = gen::GeneralistModel<float>;
using SpecialistModelF = spec::SpecialistModel<float>;

struct TrainLog {
  std::vector<double> losses;  // one entry per optimizer step
  double initial_loss = 0, final_loss = 0;
  int steps = 0;
};

// Slow-policy outputs for training, keyed by (episode, snapshot tick). The
// snapshot grid has runtime spacing: one decode every generalist_cost ticks.
class ConditionCache {
 public:
  ConditionCache(const GeneralistModelF& m, const data::Dataset& ds, int lead);
  const exec::GeneralistResult& get(int episode, int snapshot_tick);
  void prefill(int stride, int k_s, std::ostream* log = nullptr);
  size_t size() const { return cache_.size(); }

 private:
  const GeneralistModelF& model_;
  const data::Dataset& ds_;
  int lead_;
  std::map<std::pair<int, int>, exec::GeneralistResult> cache_;
};

TrainLog train_generalist(GeneralistModelF& m, const data::Dataset& ds,
                          const cfg::RunConfig& rc, std::ostream* log = nullptr);

// frozen may be null only when the executor mode is specialist_only.
TrainLog train_specialist(SpecialistModelF& m, const GeneralistModelF* frozen,
                          const data::Dataset& ds, const cfg::RunConfig& rc,
                          std::ostream* log = nullptr);

struct PipelineResult {
  std::unique_ptr<GeneralistModelF> generalist;
  std::unique_ptr<SpecialistModelF> specialist;
  TrainLog stage1, stage2;
};

// Mode-gated: generalist_only skips stage 2, specialist_only skips stage 1.
PipelineResult train_pipeline(const data::Dataset& ds, const cfg::RunConfig& rc,
                              std::ostream* log = nullptr);

// Checkpoint bundles embed the run configuration, so loading rebuilds the
// model shell from the snapshot.
void save_generalist(const GeneralistModelF& m, const cfg::RunConfig& rc,
                     const std::string& path);
void save_specialist(const SpecialistModelF& m, const cfg::RunConfig& rc,
                     const std::string& path);
std::unique_ptr<GeneralistModelF> load_generalist(const std::string& path,
                                                  cfg::RunConfig* rc_out = nullptr);
std::unique_ptr<SpecialistModelF> load_specialist(const std::string& path,
                                                  cfg::RunConfig* rc_out = nullptr);

struct PolicyRuntime {
  const GeneralistModelF* generalist = nullptr;
  const SpecialistModelF* specialist = nullptr;
  diffusion::NoiseSchedule sched;
  diffusion::GuidanceConfig guidance;
  int sample_steps = 5;
};

PolicyRuntime make_runtime(const cfg::RunConfig& rc, const GeneralistModelF* g,
                           const SpecialistModelF* s);

exec::GeneralistFn make_generalist_fn(const GeneralistModelF& m);
// rng is owned by the returned closure (sampling noise).
exec::SpecialistFn make_specialist_fn(const PolicyRuntime& rt, uint64_t seed);

struct SuccessStats {
  int n = 0, successes = 0;
  double rate() const { return n ? double(successes) / n : 0.0; }
  double stderr_() const;  // binomial standard error
};

struct EvalReport {
  SuccessStats overall;
  std::map<std::string, SuccessStats> per_family;
  int64_t generalist_inferences = 0, specialist_inferences = 0;
  int64_t grammar_repairs = 0, max_staleness = 0, total_ticks = 0;
};

EvalReport evaluate_success(const PolicyRuntime& rt, const exec::ExecutorConfig& xc,
                            const env::EnvConfig& ec,
                            const std::vector<env::TaskFamily>& families,
                            int episodes_per_task, uint64_t seed,
                            std::ostream* log = nullptr);

constexpr int kChainLength = 5;

struct ChainReport {
  int n_chains = 0;
  double avg_len = 0, avg_len_stderr = 0;
  std::vector<double> pos_rates;    // P(position i completed), length kChainLength
  std::vector<double> pos_stderr;
  std::vector<int> completed;       // per chain, in seed order
};

// Rates/AvgLen/stderr from per-chain completed counts. AvgLen is defined as
// the sum of the per-position completion rates, making the identity exact.
ChainReport summarize_chains(const std::vector<int>& completed);

// Tasks roll over in one environment session; a chain stops at its first
// failed task. AvgLen == sum of per-position rates by construction.
ChainReport evaluate_chains(const PolicyRuntime& rt, const exec::ExecutorConfig& xc,
                            const env::EnvConfig& ec, int n_chains, uint64_t seed,
                            std::ostream* log = nullptr);

struct MetricValue {
  double value = 0, stderr_ = 0;
};

struct Metrics {
  std::string run_id, mode, build = "";
  uint64_t config_hash = 0, dataset_hash = 0;
  std::vector<std::pair<std::string, MetricValue>> values;

  void put(const std::string& name, double v, double s = 0) { values.push_back({name, {v, s}}); }
};

std::string metrics_json(const Metrics& m);
std::string build_id();

// Hash of a dataset's manifest file (provenance for metrics rows).
uint64_t dataset_manifest_hash(const std::string& dir);
// In-memory fallback when the dataset never touched disk.
uint64_t dataset_content_hash(const data::Dataset& ds);

struct AblationPlan {
  // inference-time condition-source removals (null/pad embeddings take over)
  bool drop_discrete = false, drop_task_latents = false, drop_action_latents = false;
  std::vector<std::string> modalities;  // empty = model default set
  std::string method;                   // non-empty and different => retrain stage 2
  double data_fraction = 1.0;           // < 1 => retrain both stages on the nested subset

  std::string name() const;
  std::string serialize() const;
  uint64_t hash() const;
};

struct AblationCell {
  AblationPlan plan;
  ChainReport chains;
  EvalReport eval;
  bool retrained = false;
};

// Identity plan evaluates the base models unchanged; condition-source drops
// re-wrap the base weights with the source disabled; method and data-fraction
// cells retrain from the modified configuration.
AblationCell run_ablation(const cfg::RunConfig& rc, const data::Dataset& ds,
                          const GeneralistModelF* base_gen, const SpecialistModelF* base_spec,
                          const AblationPlan& plan, std::ostream* log = nullptr);

}  // namespace dualpol::te
