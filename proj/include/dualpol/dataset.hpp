#pragma once

#include <string>
#include <vector>

#include "dualpol/env.hpp"

// Episode persistence: a dataset directory holds manifest.json plus one
// binary record per episode (16-byte "DPOL" header, little-endian arrays).

namespace dualpol::data {

struct EpisodeStep {
  env::Observation obs;
  std::array<float, 7> action{};
};

struct EpisodeRecord {
  env::TaskSpec task;
  uint64_t seed = 0;
  std::vector<EpisodeStep> steps;
  bool success = false;
};

// Rolls out the scripted expert on a fresh episode.
EpisodeRecord run_expert_episode(env::ToyEnv& e, const env::TaskSpec& task, uint64_t seed);

struct Dataset {
  env::EnvConfig env_config;
  std::vector<env::TaskFamily> families;
  uint64_t seed = 0;
  int episodes_per_task = 0;
  std::string env_version;
  std::vector<EpisodeRecord> episodes;

  // First ceil(fraction * n) episodes of each task family, in generation
  // order, so smaller fractions are nested subsets of larger ones.
  Dataset subset(double fraction) const;

  int64_t total_steps() const;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Keeps only successful expert episodes; gives up after 3x the requested
// number of attempts per task and reports the per-task yield.
Dataset generate_dataset(const env::EnvConfig& cfg,
                         const std::vector<env::TaskFamily>& families, int episodes_per_task,
                         uint64_t seed);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

void save_episode(const EpisodeRecord& ep, const env::EnvConfig& cfg, const std::string& path);
EpisodeRecord load_episode(const std::string& path, env::EnvConfig* cfg_out = nullptr);

}  // namespace dualpol::data
