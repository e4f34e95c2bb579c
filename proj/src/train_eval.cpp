#include "dualpol/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "dualpol/fsio.hpp"

#ifndef DUALPOL_BUILD_ID
#define DUALPOL_BUILD_ID "dev"
#endif

namespace dualpol::te {

using json = nlohmann::ordered_json;

namespace {

// Steps past the recorded end are zero actions: the expert is quiescent once
// the goal is reached, so short (quickly solved) episodes still provide full
// lead-shifted windows.
codec::ActionChunk action_window(const data::EpisodeRecord& ep, int t, int k) {
  codec::ActionChunk c(k);
  int len = int(ep.steps.size());
  for (int i = 0; i < k; ++i) {
    if (t + i >= len) break;  // rows default to zero
    for (int d = 0; d < codec::kActionDims; ++d)
      c.values.at(i, d) = ep.steps[size_t(t + i)].action[size_t(d)];
  }
  return c;
}

// the frame at t == len is the settled goal state; clamp rather than step past it
const env::Observation& obs_at(const data::EpisodeRecord& ep, int t) {
  int last = int(ep.steps.size()) - 1;
  return ep.steps[size_t(std::min(t, last))].obs;
}

std::vector<int> chunk_targets(const data::EpisodeRecord& ep, int t, int k_g) {
  auto u = codec::serialize_chunk(action_window(ep, t, k_g));
  return std::vector<int>(u.begin(), u.end());
}

exec::GeneralistResult to_result(gen::GeneralistOutput<float>&& out, int snapshot, int lead) {
  exec::GeneralistResult r;
  r.chunk = std::move(out.continuous_chunk);
  r.task_latents = std::move(out.task_latents);
  r.action_latents = std::move(out.action_latents);
  r.grammar_repairs = out.grammar_repairs;
  r.obs_tick = snapshot;
  r.chunk_start = snapshot + lead;
  return r;
}

}  // namespace

ConditionCache::ConditionCache(const GeneralistModelF& m, const data::Dataset& ds, int lead)
    : model_(m), ds_(ds), lead_(lead) {}

const exec::GeneralistResult& ConditionCache::get(int episode, int snapshot_tick) {
  auto key = std::make_pair(episode, snapshot_tick);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto out = model_.decode_chunk(obs_at(ds_.episodes[size_t(episode)], snapshot_tick));
  return cache_.emplace(key, to_result(std::move(out), snapshot_tick, lead_)).first->second;
}

void ConditionCache::prefill(int stride, int k_s, std::ostream* log) {
  (void)k_s;
  int done = 0;
  for (int e = 0; e < int(ds_.episodes.size()); ++e) {
    int len = int(ds_.episodes[size_t(e)].steps.size());
    for (int s = 0; s + lead_ <= len; s += stride) get(e, s);
    if (log && (++done % 20 == 0))
      *log << "  conditions: " << done << "/" << ds_.episodes.size() << " episodes ("
           << cache_.size() << " decodes)\n";
  }
}

TrainLog train_generalist(GeneralistModelF& m, const data::Dataset& ds,
                          const cfg::RunConfig& rc, std::ostream* log) {
  const auto& gc = m.config();
  std::vector<std::pair<int, int>> samples;  // (episode, tick)
  for (int e = 0; e < int(ds.episodes.size()); ++e) {
    int len = int(ds.episodes[size_t(e)].steps.size());
    for (int t = 0; t < len; ++t) samples.push_back({e, t});
  }
  if (samples.empty()) throw PipelineError("dataset has no recorded steps");

  TrainLog tl;
  int total = rc.training.generalist_steps;
  if (total == 0) return tl;
  nn::AdamW<float> opt(m.params, rc.training.generalist_lr, rc.training.weight_decay);
  Rng rng(rc.training.seed);
  double norm = 1.0 / double(rc.training.batch_size * gc.chunk_tokens());
  for (int step = 0; step < total; ++step) {
    ag::Graph<float> g;
    ag::Ref<float> sum;
    for (int b = 0; b < rc.training.batch_size; ++b) {
      auto [e, t] = samples[size_t(rng.randint(0, int64_t(samples.size()) - 1))];
      const auto& ep = ds.episodes[size_t(e)];
      auto l = m.nll_loss(g, ep.steps[size_t(t)].obs, chunk_targets(ep, t + gc.lead, gc.k_g));
      sum = sum ? ag::add(g, sum, l) : l;
    }
    auto loss = ag::scale(g, sum, float(norm));  // mean per predicted token
    m.params.zero_grad();
    g.backward(loss);
    opt.step(nn::cosine_lr(rc.training.generalist_lr, step, rc.training.warmup_steps, total));
    tl.losses.push_back(double(loss->val.v[0]));
    if (log && (step % rc.training.log_every == 0 || step == total - 1))
      *log << "  stage1 step " << step << " loss " << tl.losses.back() << "\n";
  }
  tl.steps = total;
  tl.initial_loss = tl.losses.front();
  tl.final_loss = tl.losses.back();
  return tl;
}

TrainLog train_specialist(SpecialistModelF& m, const GeneralistModelF* frozen,
                          const data::Dataset& ds, const cfg::RunConfig& rc,
                          std::ostream* log) {
  bool conditioned = rc.executor.mode != "specialist_only";
  if (conditioned && !frozen)
    throw PipelineError("stage 2 in dual mode requires a trained stage-1 model");

  const int k_s = m.config().k_s;
  const int lead = rc.executor.lead;
  const int k_g = rc.generalist.k_g;
  const int stride = rc.executor.generalist_cost;

  TrainLog tl;
  int total = rc.training.specialist_steps;

  std::unique_ptr<ConditionCache> cache;
  // (episode, snapshot, tau): chunk target starts at snapshot + lead + tau
  std::vector<std::array<int, 3>> samples;
  if (conditioned) {
    cache = std::make_unique<ConditionCache>(*frozen, ds, lead);
    for (int e = 0; e < int(ds.episodes.size()); ++e) {
      int len = int(ds.episodes[size_t(e)].steps.size());
      // t = s + lead + tau may land one past the end: the settled-goal frame with
      // an all-zero hold target
      for (int s = 0; s + lead <= len; s += stride)
        for (int tau = 0; tau <= k_g && s + lead + tau <= len; ++tau)
          samples.push_back({e, s, tau});
    }
    if (samples.empty())
      throw PipelineError("no usable training windows: episodes shorter than lead");
    if (total > 0 && rc.training.precompute_conditions) {
      if (log) *log << "  precomputing slow-policy conditions\n";
      cache->prefill(stride, k_s, log);
    }
  } else {
    for (int e = 0; e < int(ds.episodes.size()); ++e) {
      int len = int(ds.episodes[size_t(e)].steps.size());
      for (int t = 0; t < len; ++t) samples.push_back({e, t, 0});
    }
    if (samples.empty()) throw PipelineError("dataset has no recorded steps");
  }

  if (total == 0) return tl;
  auto sched = cfg::make_noise_schedule(rc);
  auto guidance = cfg::make_guidance_config(rc);
  nn::AdamW<float> opt(m.params, rc.training.specialist_lr, rc.training.weight_decay);
  Rng rng(rc.training.seed ^ 0x51ec0ull);
  for (int step = 0; step < total; ++step) {
    std::vector<spec::TrainItem> batch;
    for (int b = 0; b < rc.training.batch_size; ++b) {
      auto [e, s, tau] = samples[size_t(rng.randint(0, int64_t(samples.size()) - 1))];
      const auto& ep = ds.episodes[size_t(e)];
      spec::TrainItem item;
      int t = conditioned ? s + lead + tau : s;
      item.a0 = action_window(ep, t, k_s);
      item.obs = obs_at(ep, t);
      item.tau_s = tau;
      if (conditioned) item.gen = &cache->get(e, s);
      batch.push_back(std::move(item));
    }
    ag::Graph<float> g;
    ag::Ref<float> loss;
    auto stats = m.training_step(g, batch, sched, guidance, rng, &loss);
    m.params.zero_grad();
    g.backward(loss);
    opt.step(nn::cosine_lr(rc.training.specialist_lr, step, rc.training.warmup_steps, total));
    tl.losses.push_back(stats.loss);
    if (log && (step % rc.training.log_every == 0 || step == total - 1))
      *log << "  stage2 step " << step << " loss " << stats.loss << "\n";
  }
  tl.steps = total;
  tl.initial_loss = tl.losses.front();
  tl.final_loss = tl.losses.back();
  return tl;
}

PipelineResult train_pipeline(const data::Dataset& ds, const cfg::RunConfig& rc,
                              std::ostream* log) {
  cfg::validate(rc);
  PipelineResult pr;
  auto mode = cfg::mode_from_string(rc.executor.mode);
  data::Dataset subset;
  const data::Dataset* dptr = &ds;
  if (rc.training.data_fraction < 1.0) {
    subset = ds.subset(rc.training.data_fraction);
    dptr = &subset;
  }
  if (mode != exec::Mode::SpecialistOnly) {
    pr.generalist = std::make_unique<GeneralistModelF>(cfg::make_generalist_config(rc));
    if (log) *log << "stage 1: generalist (" << pr.generalist->params.param_count() << " params)\n";
    pr.stage1 = train_generalist(*pr.generalist, *dptr, rc, log);
  }
  if (mode != exec::Mode::GeneralistOnly) {
    pr.specialist = std::make_unique<SpecialistModelF>(cfg::make_specialist_config(rc));
    if (log) *log << "stage 2: specialist (" << pr.specialist->params.param_count() << " params)\n";
    pr.stage2 = train_specialist(*pr.specialist, pr.generalist.get(), *dptr, rc, log);
  }
  return pr;
}

namespace {

ckpt::Bundle base_bundle(const cfg::RunConfig& rc, const std::string& kind) {
  ckpt::Bundle b;
  b.kind = kind;
  b.config_text = cfg::serialize(rc);
  b.schedule_kind = rc.diffusion.schedule;
  b.schedule_timesteps = uint32_t(rc.diffusion.timesteps);
  b.codec_bins = uint16_t(codec::kNumBins);
  b.codec_dims = uint16_t(codec::kActionDims);
  return b;
}

}  // namespace

void save_generalist(const GeneralistModelF& m, const cfg::RunConfig& rc,
                     const std::string& path) {
  auto b = base_bundle(rc, "generalist");
  ckpt::store_params(b, m.params);
  ckpt::save_bundle(b, path);
}

void save_specialist(const SpecialistModelF& m, const cfg::RunConfig& rc,
                     const std::string& path) {
  auto b = base_bundle(rc, "specialist");
  ckpt::store_params(b, m.params);
  ckpt::save_bundle(b, path);
}

std::unique_ptr<GeneralistModelF> load_generalist(const std::string& path,
                                                  cfg::RunConfig* rc_out) {
  auto b = ckpt::load_bundle(path, "generalist");
  auto rc = cfg::parse_config_text(b.config_text);
  auto m = std::make_unique<GeneralistModelF>(cfg::make_generalist_config(rc));
  ckpt::load_params(b, m->params);
  if (rc_out) *rc_out = rc;
  return m;
}

std::unique_ptr<SpecialistModelF> load_specialist(const std::string& path,
                                                  cfg::RunConfig* rc_out) {
  auto b = ckpt::load_bundle(path, "specialist");
  auto rc = cfg::parse_config_text(b.config_text);
  auto m = std::make_unique<SpecialistModelF>(cfg::make_specialist_config(rc));
  ckpt::load_params(b, m->params);
  if (rc_out) *rc_out = rc;
  return m;
}

PolicyRuntime make_runtime(const cfg::RunConfig& rc, const GeneralistModelF* g,
                           const SpecialistModelF* s) {
  PolicyRuntime rt;
  rt.generalist = g;
  rt.specialist = s;
  rt.sched = cfg::make_noise_schedule(rc);
  rt.guidance = cfg::make_guidance_config(rc);
  rt.sample_steps = rc.diffusion.sample_steps;
  return rt;
}

exec::GeneralistFn make_generalist_fn(const GeneralistModelF& m) {
  const GeneralistModelF* mp = &m;
  int lead = m.config().lead;
  return [mp, lead](const env::Observation& obs) {
    return to_result(mp->predict_ahead(obs, lead), 0, lead);
  };
}

exec::SpecialistFn make_specialist_fn(const PolicyRuntime& rt, uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  const SpecialistModelF* mp = rt.specialist;
  auto sched = rt.sched;
  auto guidance = rt.guidance;
  int steps = rt.sample_steps;
  return [mp, sched, guidance, steps, rng](const env::Observation& obs,
                                           const exec::GeneralistResult* gen, int tau) {
    return mp->sample(obs, gen, tau, sched, steps, guidance, *rng);
  };
}

double SuccessStats::stderr_() const {
  if (n == 0) return 0;
  double p = rate();
  return std::sqrt(p * (1.0 - p) / double(n));
}

namespace {

void require_models(const PolicyRuntime& rt, exec::Mode mode) {
  if (mode != exec::Mode::SpecialistOnly && !rt.generalist)
    throw PipelineError("mode requires a generalist checkpoint");
  if (mode != exec::Mode::GeneralistOnly && !rt.specialist)
    throw PipelineError("mode requires a specialist checkpoint");
}

}  // namespace

EvalReport evaluate_success(const PolicyRuntime& rt, const exec::ExecutorConfig& xc,
                            const env::EnvConfig& ec,
                            const std::vector<env::TaskFamily>& families,
                            int episodes_per_task, uint64_t seed, std::ostream* log) {
  require_models(rt, xc.mode);
  EvalReport rep;
  exec::GeneralistFn gfn;
  if (rt.generalist && xc.mode != exec::Mode::SpecialistOnly)
    gfn = make_generalist_fn(*rt.generalist);
  for (auto fam : families) {
    // offset keeps held-out episodes distinct from the demo-generation stream
    // even when both derive from training.seed
    Rng task_rng(seed ^ (uint64_t(fam) << 40) ^ 0xE7A1BA5Eull);
    auto& fs = rep.per_family[env::family_name(fam)];
    for (int i = 0; i < episodes_per_task; ++i) {
      auto task = env::TaskSpec::sample(fam, task_rng);
      uint64_t ep_seed = task_rng.next_u64();
      env::ToyEnv e(ec);
      e.reset(task, ep_seed);
      exec::SpecialistFn sfn;
      if (rt.specialist && xc.mode != exec::Mode::GeneralistOnly)
        sfn = make_specialist_fn(rt, ep_seed ^ 0x9e3779b97f4a7c15ull);
      auto res = exec::run_episode(e, xc, gfn, sfn);
      ++fs.n;
      ++rep.overall.n;
      if (res.success) {
        ++fs.successes;
        ++rep.overall.successes;
      }
      rep.generalist_inferences += res.generalist_inferences;
      rep.specialist_inferences += res.specialist_inferences;
      rep.grammar_repairs += res.grammar_repairs;
      rep.max_staleness = std::max(rep.max_staleness, res.max_staleness);
      rep.total_ticks += res.ticks;
    }
    if (log)
      *log << "  " << env::family_name(fam) << ": " << fs.successes << "/" << fs.n << "\n";
  }
  return rep;
}

ChainReport summarize_chains(const std::vector<int>& completed) {
  if (completed.empty()) throw std::invalid_argument("need at least one chain");
  ChainReport rep;
  rep.n_chains = int(completed.size());
  rep.completed = completed;
  rep.pos_rates.assign(kChainLength, 0.0);
  rep.pos_stderr.assign(kChainLength, 0.0);
  for (int i = 0; i < kChainLength; ++i) {
    int cnt = 0;
    for (int d : completed)
      if (d > i) ++cnt;
    double p = double(cnt) / double(rep.n_chains);
    rep.pos_rates[size_t(i)] = p;
    rep.pos_stderr[size_t(i)] = std::sqrt(p * (1.0 - p) / double(rep.n_chains));
  }
  // the chain-length metric is defined as this sum, making the identity exact
  for (double p : rep.pos_rates) rep.avg_len += p;
  double mean = rep.avg_len, var = 0;
  for (int d : completed) var += (d - mean) * (d - mean);
  if (rep.n_chains > 1) var /= double(rep.n_chains - 1);
  rep.avg_len_stderr = std::sqrt(var / double(rep.n_chains));
  return rep;
}

ChainReport evaluate_chains(const PolicyRuntime& rt, const exec::ExecutorConfig& xc,
                            const env::EnvConfig& ec, int n_chains, uint64_t seed,
                            std::ostream* log) {
  if (n_chains < 1) throw std::invalid_argument("need at least one chain");
  require_models(rt, xc.mode);
  ChainReport rep;
  rep.n_chains = n_chains;
  exec::GeneralistFn gfn;
  if (rt.generalist && xc.mode != exec::Mode::SpecialistOnly)
    gfn = make_generalist_fn(*rt.generalist);
  for (int c = 0; c < n_chains; ++c) {
    Rng chain_rng(seed);
    chain_rng = chain_rng.fork(uint64_t(c));
    env::ToyEnv e(ec);
    int done = 0;
    for (int pos = 0; pos < kChainLength; ++pos) {
      auto fam = env::TaskFamily(chain_rng.randint(0, 3));
      auto task = env::TaskSpec::sample(fam, chain_rng);
      uint64_t task_seed = chain_rng.next_u64();
      if (pos == 0)
        e.reset(task, task_seed);
      else
        e.switch_task(task, task_seed);  // session rolls over, effector stays put
      exec::SpecialistFn sfn;
      if (rt.specialist && xc.mode != exec::Mode::GeneralistOnly)
        sfn = make_specialist_fn(rt, task_seed ^ 0x9e3779b97f4a7c15ull);
      auto res = exec::run_episode(e, xc, gfn, sfn);
      if (!res.success) break;
      ++done;
    }
    rep.completed.push_back(done);
    if (log) *log << "  chain " << c << ": " << done << "/" << kChainLength << "\n";
  }
  return summarize_chains(rep.completed);
}

std::string metrics_json(const Metrics& m) {
  json j;
  j["run_id"] = m.run_id;
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)m.config_hash);
  j["config_hash"] = hex;
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)m.dataset_hash);
  j["dataset_hash"] = hex;
  j["build_id"] = m.build.empty() ? build_id() : m.build;
  j["mode"] = m.mode;
  json vals = json::object();
  for (const auto& [name, v] : m.values)
    vals[name] = {{"value", v.value}, {"stderr", v.stderr_}};
  j["metrics"] = vals;
  return j.dump(2) + "\n";
}

std::string build_id() { return DUALPOL_BUILD_ID; }

uint64_t dataset_manifest_hash(const std::string& dir) {
  std::string text = fsio::read_file(dir + "/manifest.json");
  return fsio::fnv1a64(text.data(), text.size());
}

uint64_t dataset_content_hash(const data::Dataset& ds) {
  std::ostringstream os;
  os << ds.env_version << ":" << ds.seed << ":" << ds.episodes_per_task << ":"
     << ds.total_steps() << ":" << ds.episodes.size();
  for (auto f : ds.families) os << ":" << env::family_name(f);
  std::string s = os.str();
  return fsio::fnv1a64(s.data(), s.size());
}

std::string AblationPlan::name() const {
  std::string n;
  if (drop_discrete) n += "-discrete";
  if (drop_task_latents) n += "-task_latents";
  if (drop_action_latents) n += "-action_latents";
  if (!modalities.empty()) {
    n += "+mod(";
    for (size_t i = 0; i < modalities.size(); ++i) n += (i ? "," : "") + modalities[i];
    n += ")";
  }
  if (!method.empty()) n += "+" + method;
  if (data_fraction < 1.0) n += "@" + std::to_string(data_fraction);
  return n.empty() ? "base" : n;
}

std::string AblationPlan::serialize() const {
  json j;
  j["drop_discrete"] = drop_discrete;
  j["drop_task_latents"] = drop_task_latents;
  j["drop_action_latents"] = drop_action_latents;
  j["modalities"] = modalities;
  j["method"] = method;
  j["data_fraction"] = data_fraction;
  return j.dump();
}

uint64_t AblationPlan::hash() const {
  std::string s = serialize();
  return fsio::fnv1a64(s.data(), s.size());
}

AblationCell run_ablation(const cfg::RunConfig& rc, const data::Dataset& ds,
                          const GeneralistModelF* base_gen, const SpecialistModelF* base_spec,
                          const AblationPlan& plan, std::ostream* log) {
  cfg::RunConfig eff = rc;
  if (plan.drop_discrete) eff.specialist.use_discrete_chunk = false;
  if (plan.drop_task_latents) eff.specialist.use_task_latents = false;
  if (plan.drop_action_latents) eff.specialist.use_action_latents = false;
  if (!plan.modalities.empty()) {
    eff.specialist.use_rgb = false;
    eff.specialist.use_depth = false;
    for (const auto& m : plan.modalities) {
      if (m == "rgb")
        eff.specialist.use_rgb = true;
      else if (m == "depth")
        eff.specialist.use_depth = true;
      else
        throw std::invalid_argument("unknown sensory modality: " + m);
    }
  }
  if (!plan.method.empty()) eff.specialist.method = plan.method;
  eff.training.data_fraction = plan.data_fraction;
  cfg::validate(eff);

  bool retrain = plan.data_fraction < 1.0 ||
                 (!plan.method.empty() && plan.method != rc.specialist.method) ||
                 (eff.specialist.use_rgb && !rc.specialist.use_rgb) ||
                 (eff.specialist.use_depth && !rc.specialist.use_depth);

  AblationCell cell;
  cell.plan = plan;
  cell.retrained = retrain;
  if (log) *log << "ablation cell " << plan.name() << (retrain ? " (retrain)" : "") << "\n";

  std::unique_ptr<GeneralistModelF> own_gen;
  std::unique_ptr<SpecialistModelF> own_spec;
  const GeneralistModelF* g = base_gen;
  const SpecialistModelF* s = base_spec;
  auto mode = cfg::mode_from_string(eff.executor.mode);

  if (retrain) {
    auto pr = train_pipeline(ds, eff, log);
    own_gen = std::move(pr.generalist);
    own_spec = std::move(pr.specialist);
    g = own_gen.get();
    s = own_spec.get();
  } else {
    if (mode != exec::Mode::SpecialistOnly && !base_gen)
      throw PipelineError("ablation requires a base generalist checkpoint");
    if (mode != exec::Mode::GeneralistOnly && !base_spec)
      throw PipelineError("ablation requires a base specialist checkpoint");
    bool rewrap = plan.drop_discrete || plan.drop_task_latents || plan.drop_action_latents ||
                  !plan.modalities.empty();
    if (rewrap && base_spec) {
      // same weights, source toggles flipped in the wrapper config
      own_spec = std::make_unique<SpecialistModelF>(cfg::make_specialist_config(eff));
      ckpt::Bundle b;
      ckpt::store_params(b, base_spec->params);
      ckpt::load_params(b, own_spec->params);
      s = own_spec.get();
    }
  }

  auto xc = cfg::make_executor_config(eff);
  auto ec = cfg::make_env_config(eff);
  auto rt = make_runtime(eff, g, s);
  cell.chains = evaluate_chains(rt, xc, ec, eff.training.chains, eff.training.seed, log);
  cell.eval = evaluate_success(rt, xc, ec, ds.families, eff.training.eval_episodes_per_task,
                               eff.training.seed, log);
  return cell;
}

}  // namespace dualpol::te
