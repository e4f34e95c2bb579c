#include "dualpol/dataset.hpp"

#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "dualpol/fsio.hpp"

namespace dualpol::data {

namespace fs = std::filesystem;
using nlohmann::json;

static constexpr char kMagic[4] = {'D', 'P', 'O', 'L'};
static constexpr uint16_t kVersion = 1;
static constexpr char kEnvVersion[] = "toy_env-1";

EpisodeRecord run_expert_episode(env::ToyEnv& e, const env::TaskSpec& task, uint64_t seed) {
  EpisodeRecord rec;
  rec.task = task;
  rec.seed = seed;
  env::Observation obs = e.reset(task, seed);
  while (true) {
    auto action = env::scripted_expert(e.config(), e.state(), task);
    rec.steps.push_back({obs, action});
    auto res = e.step(action);
    obs = std::move(res.obs);
    if (res.done) {
      rec.success = res.success;
      break;
    }
  }
  return rec;
}

Dataset Dataset::subset(double fraction) const {
  Dataset out = *this;
  out.episodes.clear();
  // group per family preserving generation order
  for (auto fam : families) {
    std::vector<const EpisodeRecord*> fam_eps;
    for (const auto& ep : episodes)
      if (ep.task.family == fam) fam_eps.push_back(&ep);
    size_t keep = size_t(std::ceil(fraction * double(fam_eps.size())));
    for (size_t i = 0; i < keep && i < fam_eps.size(); ++i) out.episodes.push_back(*fam_eps[i]);
  }
  return out;
}

int64_t Dataset::total_steps() const {
  int64_t n = 0;
  for (const auto& ep : episodes) n += int64_t(ep.steps.size());
  return n;
}

Dataset generate_dataset(const env::EnvConfig& cfg,
                         const std::vector<env::TaskFamily>& families, int episodes_per_task,
                         uint64_t seed) {
  Dataset ds;
  ds.env_config = cfg;
  ds.families = families;
  ds.seed = seed;
  ds.episodes_per_task = episodes_per_task;
  ds.env_version = kEnvVersion;

  env::ToyEnv e(cfg);
  std::string yield_report;
  bool failed = false;
  for (auto fam : families) {
    Rng task_rng(seed ^ (uint64_t(fam) << 40));
    int collected = 0, attempts = 0;
    while (collected < episodes_per_task && attempts < 3 * episodes_per_task) {
      auto task = env::TaskSpec::sample(fam, task_rng);
      uint64_t ep_seed = task_rng.next_u64();
      auto rec = run_expert_episode(e, task, ep_seed);
      ++attempts;
      if (rec.success) {
        ds.episodes.push_back(std::move(rec));
        ++collected;
      }
    }
    yield_report += std::string(env::family_name(fam)) + "=" + std::to_string(collected) + "/" +
                    std::to_string(attempts) + " ";
    if (collected < episodes_per_task) failed = true;
  }
  if (failed)
    throw GenerationError("insufficient successful episodes after 3x attempts: " + yield_report);
  return ds;
}

void save_episode(const EpisodeRecord& ep, const env::EnvConfig& cfg, const std::string& path) {
  fsio::Writer w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u16(uint16_t(7));  // action width
  w.u16(uint16_t(cfg.height));
  w.u16(uint16_t(cfg.width));
  w.u16(cfg.depth ? 1 : 0);  // flags
  w.u16(0);                  // reserved, pads header to 16 bytes
  w.u32(uint32_t(ep.task.instruction_id()));
  w.u64(ep.seed);
  w.u32(uint32_t(ep.steps.size()));
  w.u8(ep.success ? 1 : 0);
  for (const auto& st : ep.steps) {
    w.bytes(st.obs.rgb.data(), st.obs.rgb.size());
    if (cfg.depth)
      for (float d : st.obs.depth) w.f32(d);
    for (float p : st.obs.proprio) w.f32(p);
    for (float a : st.action) w.f32(a);
  }
  fsio::atomic_write(path, w.buf);
}

EpisodeRecord load_episode(const std::string& path, env::EnvConfig* cfg_out) {
  std::string bytes = fsio::read_file(path);
  fsio::Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("bad magic in " + path);
  uint16_t version = r.u16();
  if (version != kVersion) throw std::runtime_error("unsupported episode version");
  uint16_t k = r.u16();
  if (k != 7) throw std::runtime_error("unexpected action width");
  int H = r.u16(), W = r.u16();
  bool has_depth = (r.u16() & 1) != 0;
  r.u16();  // reserved

  EpisodeRecord ep;
  ep.task = env::TaskSpec::from_instruction(int(r.u32()));
  ep.seed = r.u64();
  uint32_t n_steps = r.u32();
  ep.success = r.u8() != 0;
  ep.steps.resize(n_steps);
  for (auto& st : ep.steps) {
    st.obs.height = H;
    st.obs.width = W;
    st.obs.rgb.resize(size_t(H) * W * 3);
    r.bytes(st.obs.rgb.data(), st.obs.rgb.size());
    if (has_depth) {
      st.obs.depth.resize(size_t(H) * W);
      for (auto& d : st.obs.depth) d = r.f32();
    }
    for (auto& p : st.obs.proprio) p = r.f32();
    for (auto& a : st.action) a = r.f32();
    st.obs.instruction_id = ep.task.instruction_id();
    st.obs.instruction_text = ep.task.instruction_text();
  }
  if (cfg_out) {
    cfg_out->height = H;
    cfg_out->width = W;
    cfg_out->depth = has_depth;
  }
  return ep;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["env_version"] = ds.env_version;
  manifest["seed"] = ds.seed;
  manifest["episodes_per_task"] = ds.episodes_per_task;
  manifest["env"] = {{"height", ds.env_config.height},
                     {"width", ds.env_config.width},
                     {"depth", ds.env_config.depth},
                     {"max_ticks", ds.env_config.max_ticks},
                     {"step_scale", ds.env_config.step_scale}};
  json fams = json::array();
  for (auto f : ds.families) fams.push_back(env::family_name(f));
  manifest["families"] = fams;
  json index = json::array();
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    const auto& ep = ds.episodes[i];
    char name[32];
    std::snprintf(name, sizeof(name), "ep_%05zu.bin", i);
    save_episode(ep, ds.env_config, (fs::path(dir) / name).string());
    index.push_back({{"file", name},
                     {"family", env::family_name(ep.task.family)},
                     {"instruction_id", ep.task.instruction_id()},
                     {"seed", ep.seed},
                     {"length", ep.steps.size()},
                     {"success", ep.success}});
  }
  manifest["episodes"] = index;
  fsio::atomic_write((fs::path(dir) / "manifest.json").string(), manifest.dump(2));
}

Dataset load_dataset(const std::string& dir) {
  json manifest = json::parse(fsio::read_file((fs::path(dir) / "manifest.json").string()));
  Dataset ds;
  ds.env_version = manifest.at("env_version").get<std::string>();
  if (ds.env_version != kEnvVersion)
    throw std::runtime_error("dataset env version mismatch: " + ds.env_version);
  ds.seed = manifest.at("seed").get<uint64_t>();
  ds.episodes_per_task = manifest.at("episodes_per_task").get<int>();
  ds.env_config.height = manifest.at("env").at("height").get<int>();
  ds.env_config.width = manifest.at("env").at("width").get<int>();
  ds.env_config.depth = manifest.at("env").at("depth").get<bool>();
  ds.env_config.max_ticks = manifest.at("env").at("max_ticks").get<int>();
  ds.env_config.step_scale = manifest.at("env").at("step_scale").get<double>();
  for (const auto& f : manifest.at("families"))
    ds.families.push_back(env::family_from_string(f.get<std::string>()));
  for (const auto& entry : manifest.at("episodes")) {
    auto path = (fs::path(dir) / entry.at("file").get<std::string>()).string();
    ds.episodes.push_back(load_episode(path));
  }
  return ds;
}

}  // namespace dualpol::data
