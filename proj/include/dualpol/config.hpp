#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dualpol/diffusion.hpp"
#include "dualpol/env.hpp"
#include "dualpol/executor.hpp"
#include "dualpol/generalist.hpp"
#include "dualpol/specialist.hpp"

// One nested run configuration covering the whole pipeline. Serialized as
// JSON; parsing is strict (unknown keys and type mismatches are errors that
// name the offending key). Overrides use `--set section.key=value`.

namespace dualpol::cfg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnvSection {
  int height = 48, width = 48;   // render resolution, pixels
  bool depth = true;             // emit a depth channel
  int max_ticks = 80;            // episode cap, ticks
  double step_scale = 0.05;      // effector travel per unit action per tick
};

struct GeneralistSection {
  int patch = 8;                 // square patch edge, pixels
  int d_model = 64, layers = 2, heads = 4, mlp_ratio = 4;
  int k_g = 8;                   // decoded chunk length, actions
  bool task_latents_include_visual = true;
  uint64_t init_seed = 1;
};

struct SpecialistSection {
  int layers = 3, heads = 4, hidden = 128, mlp_ratio = 4;
  int k_s = 8;                   // denoised chunk length, actions
  int resampler_queries = 8;
  bool use_rgb = true, use_depth = false;
  bool rgb_frozen = true;
  std::string method = "xattn";  // xattn | film | in_context
  std::string head = "sample";   // sample | noise
  bool use_task_latents = true, use_action_latents = true;
  bool use_discrete_chunk = true, use_proprio = true;
  int vit_patch = 8, vit_layers = 2, vit_hidden = 64, vit_heads = 4, vit_mlp_ratio = 4;
  uint64_t init_seed = 2;
};

struct DiffusionSection {
  int timesteps = 100;           // training horizon T
  std::string schedule = "squared_cosine";  // or linear_beta
  int sample_steps = 5;          // DDIM steps at inference
  double w_g = 3.0;              // guidance scale
  double drop_probability = 0.1; // condition drop rate during training
};

struct ExecutorSection {
  int generalist_cost = 8;       // slow-policy latency, ticks
  int specialist_cost = 1;       // fast-policy cadence, ticks
  int lead = 8;                  // chunk targets start this far past the snapshot
  double m = 0.3;                // temporal aggregation decay
  std::string mode = "dual";     // dual | generalist_only | specialist_only
};

struct TrainingSection {
  int generalist_steps = 2000;
  int specialist_steps = 2000;
  int batch_size = 8;
  double generalist_lr = 1e-3;
  double specialist_lr = 1e-3;
  double weight_decay = 1e-3;
  int warmup_steps = 50;
  uint64_t seed = 1;
  bool precompute_conditions = true;  // stage 2: decode slow-policy outputs up front
  int demos_per_task = 50;
  int eval_episodes_per_task = 50;
  int chains = 50;
  double data_fraction = 1.0;
  int log_every = 50;
};

struct RunConfig {
  EnvSection env;
  GeneralistSection generalist;
  SpecialistSection specialist;
  DiffusionSection diffusion;
  ExecutorSection executor;
  TrainingSection training;

  // provenance, not serialized
  std::string source_path;
  uint64_t source_hash = 0;
  std::vector<std::string> overrides;
};

std::string serialize(const RunConfig& rc);

// text = config file body ("" means all defaults); overrides applied after.
RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::string>& overrides = {});
RunConfig parse_config_file(const std::string& path,
                            const std::vector<std::string>& overrides = {});

// Cross-field constraints; throws ConfigError naming the offending key.
void validate(const RunConfig& rc);

// Hash of the canonical serialization (provenance key for metrics rows).
uint64_t config_hash(const RunConfig& rc);

// Section-to-module adapters. The generalist image size follows the env
// render size, its latent width feeds the specialist's d_g, and the shared
// lead comes from the executor section.
env::EnvConfig make_env_config(const RunConfig& rc);
gen::GeneralistConfig make_generalist_config(const RunConfig& rc);
spec::SpecialistConfig make_specialist_config(const RunConfig& rc);
exec::ExecutorConfig make_executor_config(const RunConfig& rc);
diffusion::NoiseSchedule make_noise_schedule(const RunConfig& rc);
diffusion::GuidanceConfig make_guidance_config(const RunConfig& rc);

exec::Mode mode_from_string(const std::string& s);
std::string to_string(exec::Mode m);

}  // namespace dualpol::cfg
