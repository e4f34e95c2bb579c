#include "dualpol/config.hpp"

#include <json.hpp>

#include "dualpol/fsio.hpp"

namespace dualpol::cfg {

using json = nlohmann::ordered_json;

namespace {

json to_json(const RunConfig& rc) {
  json j;
  j["env"] = {{"height", rc.env.height},
              {"width", rc.env.width},
              {"depth", rc.env.depth},
              {"max_ticks", rc.env.max_ticks},
              {"step_scale", rc.env.step_scale}};
  j["generalist"] = {{"patch", rc.generalist.patch},
                     {"d_model", rc.generalist.d_model},
                     {"layers", rc.generalist.layers},
                     {"heads", rc.generalist.heads},
                     {"mlp_ratio", rc.generalist.mlp_ratio},
                     {"k_g", rc.generalist.k_g},
                     {"task_latents_include_visual", rc.generalist.task_latents_include_visual},
                     {"init_seed", rc.generalist.init_seed}};
  j["specialist"] = {{"layers", rc.specialist.layers},
                     {"heads", rc.specialist.heads},
                     {"hidden", rc.specialist.hidden},
                     {"mlp_ratio", rc.specialist.mlp_ratio},
                     {"k_s", rc.specialist.k_s},
                     {"resampler_queries", rc.specialist.resampler_queries},
                     {"use_rgb", rc.specialist.use_rgb},
                     {"use_depth", rc.specialist.use_depth},
                     {"rgb_frozen", rc.specialist.rgb_frozen},
                     {"method", rc.specialist.method},
                     {"head", rc.specialist.head},
                     {"use_task_latents", rc.specialist.use_task_latents},
                     {"use_action_latents", rc.specialist.use_action_latents},
                     {"use_discrete_chunk", rc.specialist.use_discrete_chunk},
                     {"use_proprio", rc.specialist.use_proprio},
                     {"vit_patch", rc.specialist.vit_patch},
                     {"vit_layers", rc.specialist.vit_layers},
                     {"vit_hidden", rc.specialist.vit_hidden},
                     {"vit_heads", rc.specialist.vit_heads},
                     {"vit_mlp_ratio", rc.specialist.vit_mlp_ratio},
                     {"init_seed", rc.specialist.init_seed}};
  j["diffusion"] = {{"timesteps", rc.diffusion.timesteps},
                    {"schedule", rc.diffusion.schedule},
                    {"sample_steps", rc.diffusion.sample_steps},
                    {"w_g", rc.diffusion.w_g},
                    {"drop_probability", rc.diffusion.drop_probability}};
  j["executor"] = {{"generalist_cost", rc.executor.generalist_cost},
                   {"specialist_cost", rc.executor.specialist_cost},
                   {"lead", rc.executor.lead},
                   {"m", rc.executor.m},
                   {"mode", rc.executor.mode}};
  j["training"] = {{"generalist_steps", rc.training.generalist_steps},
                   {"specialist_steps", rc.training.specialist_steps},
                   {"batch_size", rc.training.batch_size},
                   {"generalist_lr", rc.training.generalist_lr},
                   {"specialist_lr", rc.training.specialist_lr},
                   {"weight_decay", rc.training.weight_decay},
                   {"warmup_steps", rc.training.warmup_steps},
                   {"seed", rc.training.seed},
                   {"precompute_conditions", rc.training.precompute_conditions},
                   {"demos_per_task", rc.training.demos_per_task},
                   {"eval_episodes_per_task", rc.training.eval_episodes_per_task},
                   {"chains", rc.training.chains},
                   {"data_fraction", rc.training.data_fraction},
                   {"log_every", rc.training.log_every}};
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig rc;
  const json& e = j.at("env");
  rc.env.height = e.at("height");
  rc.env.width = e.at("width");
  rc.env.depth = e.at("depth");
  rc.env.max_ticks = e.at("max_ticks");
  rc.env.step_scale = e.at("step_scale");
  const json& g = j.at("generalist");
  rc.generalist.patch = g.at("patch");
  rc.generalist.d_model = g.at("d_model");
  rc.generalist.layers = g.at("layers");
  rc.generalist.heads = g.at("heads");
  rc.generalist.mlp_ratio = g.at("mlp_ratio");
  rc.generalist.k_g = g.at("k_g");
  rc.generalist.task_latents_include_visual = g.at("task_latents_include_visual");
  rc.generalist.init_seed = g.at("init_seed");
  const json& s = j.at("specialist");
  rc.specialist.layers = s.at("layers");
  rc.specialist.heads = s.at("heads");
  rc.specialist.hidden = s.at("hidden");
  rc.specialist.mlp_ratio = s.at("mlp_ratio");
  rc.specialist.k_s = s.at("k_s");
  rc.specialist.resampler_queries = s.at("resampler_queries");
  rc.specialist.use_rgb = s.at("use_rgb");
  rc.specialist.use_depth = s.at("use_depth");
  rc.specialist.rgb_frozen = s.at("rgb_frozen");
  rc.specialist.method = s.at("method");
  rc.specialist.head = s.at("head");
  rc.specialist.use_task_latents = s.at("use_task_latents");
  rc.specialist.use_action_latents = s.at("use_action_latents");
  rc.specialist.use_discrete_chunk = s.at("use_discrete_chunk");
  rc.specialist.use_proprio = s.at("use_proprio");
  rc.specialist.vit_patch = s.at("vit_patch");
  rc.specialist.vit_layers = s.at("vit_layers");
  rc.specialist.vit_hidden = s.at("vit_hidden");
  rc.specialist.vit_heads = s.at("vit_heads");
  rc.specialist.vit_mlp_ratio = s.at("vit_mlp_ratio");
  rc.specialist.init_seed = s.at("init_seed");
  const json& d = j.at("diffusion");
  rc.diffusion.timesteps = d.at("timesteps");
  rc.diffusion.schedule = d.at("schedule");
  rc.diffusion.sample_steps = d.at("sample_steps");
  rc.diffusion.w_g = d.at("w_g");
  rc.diffusion.drop_probability = d.at("drop_probability");
  const json& x = j.at("executor");
  rc.executor.generalist_cost = x.at("generalist_cost");
  rc.executor.specialist_cost = x.at("specialist_cost");
  rc.executor.lead = x.at("lead");
  rc.executor.m = x.at("m");
  rc.executor.mode = x.at("mode");
  const json& t = j.at("training");
  rc.training.generalist_steps = t.at("generalist_steps");
  rc.training.specialist_steps = t.at("specialist_steps");
  rc.training.batch_size = t.at("batch_size");
  rc.training.generalist_lr = t.at("generalist_lr");
  rc.training.specialist_lr = t.at("specialist_lr");
  rc.training.weight_decay = t.at("weight_decay");
  rc.training.warmup_steps = t.at("warmup_steps");
  rc.training.seed = t.at("seed");
  rc.training.precompute_conditions = t.at("precompute_conditions");
  rc.training.demos_per_task = t.at("demos_per_task");
  rc.training.eval_episodes_per_task = t.at("eval_episodes_per_task");
  rc.training.chains = t.at("chains");
  rc.training.data_fraction = t.at("data_fraction");
  rc.training.log_every = t.at("log_every");
  return rc;
}

// int values may widen into float slots; everything else must match exactly
bool type_compatible(const json& slot, const json& value) {
  if (slot.is_boolean()) return value.is_boolean();
  if (slot.is_string()) return value.is_string();
  if (slot.is_number_float()) return value.is_number();
  if (slot.is_number()) return value.is_number_integer() || value.is_number_unsigned();
  return false;
}

void merge_strict(json& base, const json& incoming) {
  if (!incoming.is_object()) throw ConfigError("config root must be a JSON object");
  for (auto& [sec, body] : incoming.items()) {
    if (!base.contains(sec)) throw ConfigError("unknown config section: " + sec);
    if (!body.is_object()) throw ConfigError("config section must be an object: " + sec);
    for (auto& [key, val] : body.items()) {
      json& slot = base[sec];
      if (!slot.contains(key)) throw ConfigError("unknown config key: " + sec + "." + key);
      if (!type_compatible(slot[key], val))
        throw ConfigError("type mismatch for config key: " + sec + "." + key);
      slot[key] = val;
    }
  }
}

void apply_override(json& base, const std::string& kv) {
  auto eq = kv.find('=');
  auto dot = kv.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: " + kv);
  std::string sec = kv.substr(0, dot);
  std::string key = kv.substr(dot + 1, eq - dot - 1);
  std::string val = kv.substr(eq + 1);
  json parsed;
  try {
    parsed = json::parse(val);
  } catch (const json::parse_error&) {
    parsed = val;  // bare words are strings
  }
  json wrap;
  wrap[sec][key] = parsed;
  merge_strict(base, wrap);
}

}  // namespace

std::string serialize(const RunConfig& rc) { return to_json(rc).dump(2) + "\n"; }

RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::string>& overrides) {
  json base = to_json(RunConfig{});
  std::string body = text;
  // an empty (or whitespace-only) file means "all defaults"
  if (body.find_first_not_of(" \t\r\n") != std::string::npos) {
    json incoming;
    try {
      incoming = json::parse(body);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    merge_strict(base, incoming);
  }
  for (const auto& kv : overrides) apply_override(base, kv);
  RunConfig rc = from_json(base);
  rc.overrides = overrides;
  validate(rc);
  return rc;
}

RunConfig parse_config_file(const std::string& path,
                            const std::vector<std::string>& overrides) {
  std::string text = fsio::read_file(path);
  RunConfig rc = parse_config_text(text, overrides);
  rc.source_path = path;
  rc.source_hash = fsio::fnv1a64(text.data(), text.size());
  return rc;
}

void validate(const RunConfig& rc) {
  auto bad = [](const std::string& key, const std::string& why) {
    throw ConfigError("invalid value for " + key + ": " + why);
  };
  if (rc.env.height < 8 || rc.env.width < 8) bad("env.height", "render size must be >= 8");
  if (rc.env.max_ticks < 1) bad("env.max_ticks", "must be >= 1");
  if (!(rc.env.step_scale > 0.0) || rc.env.step_scale > 0.5)
    bad("env.step_scale", "must be in (0, 0.5]");
  if (rc.generalist.patch < 1 || rc.env.height % rc.generalist.patch ||
      rc.env.width % rc.generalist.patch)
    bad("generalist.patch", "must divide the env render size");
  if (rc.generalist.d_model < 1 || rc.generalist.heads < 1 ||
      rc.generalist.d_model % rc.generalist.heads)
    bad("generalist.d_model", "must be a positive multiple of generalist.heads");
  if (rc.generalist.layers < 1) bad("generalist.layers", "must be >= 1");
  if (rc.generalist.k_g < 1) bad("generalist.k_g", "must be >= 1");
  if (rc.specialist.hidden < 1 || rc.specialist.heads < 1 ||
      rc.specialist.hidden % rc.specialist.heads)
    bad("specialist.hidden", "must be a positive multiple of specialist.heads");
  if (rc.specialist.layers < 1) bad("specialist.layers", "must be >= 1");
  if (rc.specialist.k_s < 1) bad("specialist.k_s", "must be >= 1");
  if (rc.specialist.resampler_queries < 1) bad("specialist.resampler_queries", "must be >= 1");
  if (rc.specialist.vit_patch < 1 || rc.env.height % rc.specialist.vit_patch ||
      rc.env.width % rc.specialist.vit_patch)
    bad("specialist.vit_patch", "must divide the env render size");
  if (rc.specialist.vit_hidden < 1 || rc.specialist.vit_heads < 1 ||
      rc.specialist.vit_hidden % rc.specialist.vit_heads)
    bad("specialist.vit_hidden", "must be a positive multiple of specialist.vit_heads");
  if (rc.specialist.use_depth && !rc.env.depth)
    bad("specialist.use_depth", "env.depth is disabled");
  if (!rc.specialist.use_rgb && !rc.specialist.use_depth)
    bad("specialist.use_rgb", "at least one sensory modality is required");
  spec::cond_method_from_string(rc.specialist.method);  // throws on bad value
  if (rc.specialist.head != "sample" && rc.specialist.head != "noise")
    bad("specialist.head", "must be sample or noise");
  if (rc.diffusion.timesteps < 1) bad("diffusion.timesteps", "must be >= 1");
  diffusion::schedule_kind_from_string(rc.diffusion.schedule);
  if (rc.diffusion.sample_steps < 1 || rc.diffusion.sample_steps > rc.diffusion.timesteps)
    bad("diffusion.sample_steps", "must be in [1, diffusion.timesteps]");
  if (rc.diffusion.drop_probability < 0 || rc.diffusion.drop_probability > 1)
    bad("diffusion.drop_probability", "must be in [0, 1]");
  if (rc.executor.generalist_cost < 1) bad("executor.generalist_cost", "must be >= 1");
  if (rc.executor.specialist_cost < 1 ||
      rc.executor.specialist_cost > rc.executor.generalist_cost)
    bad("executor.specialist_cost", "need 1 <= specialist_cost <= generalist_cost");
  if (rc.executor.lead < 0) bad("executor.lead", "must be >= 0");
  if (rc.executor.m < 0) bad("executor.m", "must be >= 0");
  mode_from_string(rc.executor.mode);
  if (rc.training.batch_size < 1) bad("training.batch_size", "must be >= 1");
  if (rc.training.generalist_steps < 0 || rc.training.specialist_steps < 0)
    bad("training.generalist_steps", "step counts must be >= 0");
  if (rc.training.generalist_lr <= 0 || rc.training.specialist_lr <= 0)
    bad("training.generalist_lr", "learning rates must be > 0");
  if (rc.training.weight_decay < 0) bad("training.weight_decay", "must be >= 0");
  if (rc.training.demos_per_task < 1) bad("training.demos_per_task", "must be >= 1");
  if (rc.training.eval_episodes_per_task < 1)
    bad("training.eval_episodes_per_task", "must be >= 1");
  if (rc.training.chains < 1) bad("training.chains", "must be >= 1");
  if (rc.training.data_fraction <= 0 || rc.training.data_fraction > 1)
    bad("training.data_fraction", "must be in (0, 1]");
  if (rc.training.log_every < 1) bad("training.log_every", "must be >= 1");
}

uint64_t config_hash(const RunConfig& rc) {
  std::string s = serialize(rc);
  return fsio::fnv1a64(s.data(), s.size());
}

env::EnvConfig make_env_config(const RunConfig& rc) {
  env::EnvConfig e;
  e.height = rc.env.height;
  e.width = rc.env.width;
  e.depth = rc.env.depth;
  e.max_ticks = rc.env.max_ticks;
  e.step_scale = rc.env.step_scale;
  return e;
}

gen::GeneralistConfig make_generalist_config(const RunConfig& rc) {
  gen::GeneralistConfig g;
  g.image_h = rc.env.height;
  g.image_w = rc.env.width;
  g.patch = rc.generalist.patch;
  g.d_model = rc.generalist.d_model;
  g.layers = rc.generalist.layers;
  g.heads = rc.generalist.heads;
  g.mlp_ratio = rc.generalist.mlp_ratio;
  g.k_g = rc.generalist.k_g;
  g.lead = rc.executor.lead;
  g.task_latents_include_visual = rc.generalist.task_latents_include_visual;
  g.init_seed = rc.generalist.init_seed;
  return g;
}

spec::SpecialistConfig make_specialist_config(const RunConfig& rc) {
  spec::SpecialistConfig s;
  s.layers = rc.specialist.layers;
  s.heads = rc.specialist.heads;
  s.hidden = rc.specialist.hidden;
  s.mlp_ratio = rc.specialist.mlp_ratio;
  s.k_s = rc.specialist.k_s;
  s.resampler_queries = rc.specialist.resampler_queries;
  s.rgb_vit = spec::VitConfig{rc.env.height, rc.env.width, 3, rc.specialist.vit_patch,
                              rc.specialist.vit_layers, rc.specialist.vit_hidden,
                              rc.specialist.vit_heads, rc.specialist.vit_mlp_ratio};
  s.depth_vit = spec::VitConfig{rc.env.height, rc.env.width, 1, rc.specialist.vit_patch,
                                rc.specialist.vit_layers, rc.specialist.vit_hidden,
                                rc.specialist.vit_heads, rc.specialist.vit_mlp_ratio};
  s.use_rgb = rc.specialist.use_rgb;
  s.use_depth = rc.specialist.use_depth;
  s.rgb_frozen = rc.specialist.rgb_frozen;
  s.d_g = rc.generalist.d_model;  // latent width follows the slow policy
  s.method = spec::cond_method_from_string(rc.specialist.method);
  s.head = rc.specialist.head == "noise" ? diffusion::PredictionHead::Noise
                                         : diffusion::PredictionHead::Sample;
  s.use_task_latents = rc.specialist.use_task_latents;
  s.use_action_latents = rc.specialist.use_action_latents;
  s.use_discrete_chunk = rc.specialist.use_discrete_chunk;
  s.use_proprio = rc.specialist.use_proprio;
  s.init_seed = rc.specialist.init_seed;
  return s;
}

exec::ExecutorConfig make_executor_config(const RunConfig& rc) {
  exec::ExecutorConfig x;
  x.k_g = rc.generalist.k_g;
  x.k_s = rc.specialist.k_s;
  x.generalist_cost = rc.executor.generalist_cost;
  x.specialist_cost = rc.executor.specialist_cost;
  x.lead = rc.executor.lead;
  x.m = rc.executor.m;
  x.mode = mode_from_string(rc.executor.mode);
  return x;
}

diffusion::NoiseSchedule make_noise_schedule(const RunConfig& rc) {
  return diffusion::make_schedule(rc.diffusion.timesteps,
                                  diffusion::schedule_kind_from_string(rc.diffusion.schedule));
}

diffusion::GuidanceConfig make_guidance_config(const RunConfig& rc) {
  return {rc.diffusion.w_g, rc.diffusion.drop_probability};
}

exec::Mode mode_from_string(const std::string& s) {
  if (s == "dual") return exec::Mode::Dual;
  if (s == "generalist_only") return exec::Mode::GeneralistOnly;
  if (s == "specialist_only") return exec::Mode::SpecialistOnly;
  throw ConfigError("invalid value for executor.mode: " + s);
}

std::string to_string(exec::Mode m) {
  switch (m) {
    case exec::Mode::Dual: return "dual";
    case exec::Mode::GeneralistOnly: return "generalist_only";
    case exec::Mode::SpecialistOnly: return "specialist_only";
  }
  return "?";
}

}  // namespace dualpol::cfg
