#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <json.hpp>

#include "dualpol/fsio.hpp"
#include "dualpol/plot.hpp"
#include "dualpol/train_eval.hpp"

using namespace dualpol;

namespace {

constexpr const char* kVersion = "dualpol 1.0";

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed_flag;  // optional explicit seed
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "run configuration file (JSON)");
  app->add_option("--set", c.sets, "override, section.key=value (repeatable)");
  app->add_option("--seed", c.seed_flag, "global seed (beats DUALPOL_SEED)");
}

bool seed_mentioned(const std::string& file_text, const std::vector<std::string>& sets) {
  for (const auto& s : sets)
    if (s.rfind("training.seed=", 0) == 0) return true;
  if (!file_text.empty()) {
    auto j = nlohmann::json::parse(file_text, nullptr, false);
    if (j.is_object() && j.contains("training") && j["training"].is_object() &&
        j["training"].contains("seed"))
      return true;
  }
  return false;
}

cfg::RunConfig load_config(const Common& c) {
  std::string text;
  if (!c.config_path.empty()) text = fsio::read_file(c.config_path);
  cfg::RunConfig rc = c.config_path.empty() ? cfg::parse_config_text("", c.sets)
                                            : cfg::parse_config_file(c.config_path, c.sets);
  if (!c.seed_flag.empty()) {
    rc.training.seed = std::stoull(c.seed_flag);
  } else if (!seed_mentioned(text, c.sets)) {
    if (const char* env = std::getenv("DUALPOL_SEED")) rc.training.seed = std::stoull(env);
  }
  return rc;
}

std::vector<env::TaskFamily> all_families() {
  return {env::TaskFamily::Reach, env::TaskFamily::Push, env::TaskFamily::PickPlace,
          env::TaskFamily::Knock};
}

void write_metrics(const std::string& path, const te::Metrics& m) {
  std::string j = te::metrics_json(m);
  if (path.empty() || path == "-")
    std::cout << j;
  else {
    fsio::atomic_write(path, j);
    std::cout << "wrote " << path << "\n";
  }
}

void fill_eval_metrics(te::Metrics& m, const te::EvalReport& rep, const te::ChainReport* ch) {
  m.put("success_rate", rep.overall.rate(), rep.overall.stderr_());
  for (const auto& [fam, st] : rep.per_family)
    m.put("success_rate/" + fam, st.rate(), st.stderr_());
  m.put("grammar_repairs", double(rep.grammar_repairs));
  m.put("max_staleness", double(rep.max_staleness));
  if (rep.total_ticks > 0) {
    m.put("generalist_inferences_per_tick",
          double(rep.generalist_inferences) / double(rep.total_ticks));
    m.put("specialist_inferences_per_tick",
          double(rep.specialist_inferences) / double(rep.total_ticks));
  }
  if (ch) {
    m.put("avg_len", ch->avg_len, ch->avg_len_stderr);
    for (int i = 0; i < te::kChainLength; ++i)
      m.put("chain_pos_" + std::to_string(i + 1), ch->pos_rates[size_t(i)],
            ch->pos_stderr[size_t(i)]);
  }
}

int cmd_gen_data(const Common& c, const std::string& out, int episodes) {
  auto rc = load_config(c);
  int n = episodes > 0 ? episodes : rc.training.demos_per_task;
  auto ds = data::generate_dataset(cfg::make_env_config(rc), all_families(), n,
                                   rc.training.seed);
  data::save_dataset(ds, out);
  std::cout << "wrote " << ds.episodes.size() << " episodes (" << ds.total_steps()
            << " steps) to " << out << "\n";
  return 0;
}

int cmd_train_generalist(const Common& c, const std::string& data_dir,
                         const std::string& out) {
  auto rc = load_config(c);
  auto ds = data::load_dataset(data_dir);
  if (rc.training.data_fraction < 1.0) ds = ds.subset(rc.training.data_fraction);
  te::GeneralistModelF m(cfg::make_generalist_config(rc));
  std::cout << "generalist: " << m.params.param_count() << " params\n";
  auto log = te::train_generalist(m, ds, rc, &std::cout);
  te::save_generalist(m, rc, out);
  std::cout << "loss " << log.initial_loss << " -> " << log.final_loss << "; wrote " << out
            << "\n";
  return 0;
}

int cmd_train_specialist(const Common& c, const std::string& data_dir,
                         const std::string& gen_path, const std::string& out) {
  auto rc = load_config(c);
  auto ds = data::load_dataset(data_dir);
  if (rc.training.data_fraction < 1.0) ds = ds.subset(rc.training.data_fraction);
  std::unique_ptr<te::GeneralistModelF> g;
  if (!gen_path.empty()) g = te::load_generalist(gen_path);
  te::SpecialistModelF m(cfg::make_specialist_config(rc));
  std::cout << "specialist: " << m.params.param_count() << " params\n";
  auto log = te::train_specialist(m, g.get(), ds, rc, &std::cout);
  te::save_specialist(m, rc, out);
  std::cout << "loss " << log.initial_loss << " -> " << log.final_loss << "; wrote " << out
            << "\n";
  return 0;
}

struct LoadedPolicies {
  cfg::RunConfig rc;
  std::unique_ptr<te::GeneralistModelF> g;
  std::unique_ptr<te::SpecialistModelF> s;
};

LoadedPolicies load_policies(const Common& c, const std::string& gen_path,
                             const std::string& spec_path, const std::string& mode) {
  LoadedPolicies lp;
  lp.rc = load_config(c);
  if (!mode.empty()) {
    lp.rc.executor.mode = mode;
    cfg::validate(lp.rc);
  }
  if (!gen_path.empty()) lp.g = te::load_generalist(gen_path);
  if (!spec_path.empty()) lp.s = te::load_specialist(spec_path);
  return lp;
}

int cmd_rollout(const Common& c, const std::string& gen_path, const std::string& spec_path,
                const std::string& mode, const std::string& family, int color, int direction,
                uint64_t episode_seed) {
  auto lp = load_policies(c, gen_path, spec_path, mode);
  env::TaskSpec task{env::family_from_string(family), color, direction};
  env::ToyEnv e(cfg::make_env_config(lp.rc));
  e.reset(task, episode_seed);
  auto rt = te::make_runtime(lp.rc, lp.g.get(), lp.s.get());
  auto xc = cfg::make_executor_config(lp.rc);
  exec::GeneralistFn gfn;
  exec::SpecialistFn sfn;
  if (xc.mode != exec::Mode::SpecialistOnly) {
    if (!lp.g) throw te::PipelineError("mode requires a generalist checkpoint");
    gfn = te::make_generalist_fn(*lp.g);
  }
  if (xc.mode != exec::Mode::GeneralistOnly) {
    if (!lp.s) throw te::PipelineError("mode requires a specialist checkpoint");
    sfn = te::make_specialist_fn(rt, episode_seed ^ 0x9e3779b97f4a7c15ull);
  }
  auto res = exec::run_episode(e, xc, gfn, sfn);
  std::cout << "task: " << task.instruction_text() << "\n"
            << "success: " << (res.success ? "yes" : "no") << "\n"
            << "ticks: " << res.ticks << "\n"
            << "generalist inferences: " << res.generalist_inferences << "\n"
            << "specialist inferences: " << res.specialist_inferences << "\n"
            << "grammar repairs: " << res.grammar_repairs << "\n"
            << "max staleness: " << res.max_staleness << "\n";
  return res.success ? 0 : 1;
}

int cmd_eval(const Common& c, const std::string& gen_path, const std::string& spec_path,
             const std::string& mode, int chains, int episodes, const std::string& data_dir,
             const std::string& out) {
  auto lp = load_policies(c, gen_path, spec_path, mode);
  auto rt = te::make_runtime(lp.rc, lp.g.get(), lp.s.get());
  auto xc = cfg::make_executor_config(lp.rc);
  auto ec = cfg::make_env_config(lp.rc);
  int n_ep = episodes > 0 ? episodes : lp.rc.training.eval_episodes_per_task;
  int n_ch = chains > 0 ? chains : lp.rc.training.chains;

  std::cout << "per-task success (" << n_ep << " episodes each):\n";
  auto rep = te::evaluate_success(rt, xc, ec, all_families(), n_ep, lp.rc.training.seed,
                                  &std::cout);
  std::cout << "chains (" << n_ch << "):\n";
  auto ch = te::evaluate_chains(rt, xc, ec, n_ch, lp.rc.training.seed);
  std::cout << "  avg len " << ch.avg_len << " +- " << ch.avg_len_stderr << "\n";

  te::Metrics m;
  m.run_id = "eval";
  m.mode = lp.rc.executor.mode;
  m.config_hash = cfg::config_hash(lp.rc);
  if (!data_dir.empty()) m.dataset_hash = te::dataset_manifest_hash(data_dir);
  fill_eval_metrics(m, rep, &ch);
  write_metrics(out, m);
  return 0;
}

te::AblationPlan parse_plan(const std::string& path) {
  auto j = nlohmann::json::parse(fsio::read_file(path));
  te::AblationPlan p;
  for (auto& [k, v] : j.items()) {
    if (k == "drop_discrete")
      p.drop_discrete = v;
    else if (k == "drop_task_latents")
      p.drop_task_latents = v;
    else if (k == "drop_action_latents")
      p.drop_action_latents = v;
    else if (k == "modalities")
      p.modalities = v.template get<std::vector<std::string>>();
    else if (k == "method")
      p.method = v;
    else if (k == "data_fraction")
      p.data_fraction = v;
    else
      throw std::runtime_error("unknown ablation plan key: " + k);
  }
  return p;
}

int cmd_ablate(const Common& c, const std::string& data_dir, const std::string& gen_path,
               const std::string& spec_path, const std::string& plan_path,
               const std::string& out) {
  auto rc = load_config(c);
  auto ds = data::load_dataset(data_dir);
  te::AblationPlan plan;
  if (!plan_path.empty()) plan = parse_plan(plan_path);
  std::unique_ptr<te::GeneralistModelF> g;
  std::unique_ptr<te::SpecialistModelF> s;
  if (!gen_path.empty()) g = te::load_generalist(gen_path);
  if (!spec_path.empty()) s = te::load_specialist(spec_path);
  auto cell = te::run_ablation(rc, ds, g.get(), s.get(), plan, &std::cout);

  te::Metrics m;
  m.run_id = "ablate:" + plan.name();
  m.mode = rc.executor.mode;
  m.config_hash = cfg::config_hash(rc);
  m.dataset_hash = te::dataset_manifest_hash(data_dir);
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)plan.hash());
  m.put("plan_hash_lo32", double(plan.hash() & 0xffffffffull));
  fill_eval_metrics(m, cell.eval, &cell.chains);
  std::cout << "plan " << plan.name() << " (hash " << hex << ")"
            << (cell.retrained ? ", retrained" : "") << "\n";
  write_metrics(out, m);
  return 0;
}

int cmd_plot(const std::vector<std::string>& metrics_files, const std::string& metric,
             const std::string& title, const std::string& out) {
  std::vector<plot::Bar> bars;
  for (const auto& f : metrics_files) {
    auto j = nlohmann::json::parse(fsio::read_file(f));
    const auto& vals = j.at("metrics");
    if (!vals.contains(metric))
      throw std::runtime_error("metric '" + metric + "' not found in " + f);
    plot::Bar b;
    b.label = j.value("run_id", f);
    b.value = vals[metric]["value"];
    b.err = vals[metric]["stderr"];
    bars.push_back(b);
  }
  plot::bar_chart(out, title.empty() ? metric : title, bars);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-system manipulation policy toolkit"};
  app.set_version_flag("--version", std::string(kVersion) + " (build " + te::build_id() + ")");
  app.require_subcommand(1);

  Common c;
  std::string out, data_dir, gen_path, spec_path, mode, plan_path, family = "reach";
  std::string metric = "success_rate", title;
  std::vector<std::string> metrics_files;
  int episodes = 0, chains = 0, color = 0, direction = 0;
  uint64_t episode_seed = 0;

  auto* gen_data = app.add_subcommand("gen-data", "record scripted-expert demonstrations");
  add_common(gen_data, c);
  gen_data->add_option("--out", out, "dataset directory")->required();
  gen_data->add_option("--episodes-per-task", episodes, "default: training.demos_per_task");

  auto* tg = app.add_subcommand("train-generalist", "stage 1: train the slow policy");
  add_common(tg, c);
  tg->add_option("--data", data_dir, "dataset directory")->required();
  tg->add_option("--out", out, "checkpoint path")->required();

  auto* ts = app.add_subcommand("train-specialist", "stage 2: train the fast policy");
  add_common(ts, c);
  ts->add_option("--data", data_dir, "dataset directory")->required();
  ts->add_option("--generalist", gen_path, "stage-1 checkpoint (omit for specialist-only)");
  ts->add_option("--out", out, "checkpoint path")->required();

  auto* ro = app.add_subcommand("rollout", "run a single episode");
  add_common(ro, c);
  ro->add_option("--generalist", gen_path);
  ro->add_option("--specialist", spec_path);
  ro->add_option("--mode", mode, "dual | generalist_only | specialist_only");
  ro->add_option("--task", family, "reach | push | pick_place | knock");
  ro->add_option("--color", color, "0..3");
  ro->add_option("--direction", direction, "push only: 0 left, 1 right");
  ro->add_option("--episode-seed", episode_seed);

  auto* ev = app.add_subcommand("eval", "success rates and task chains");
  add_common(ev, c);
  ev->add_option("--generalist", gen_path);
  ev->add_option("--specialist", spec_path);
  ev->add_option("--mode", mode);
  ev->add_option("--chains", chains, "default: training.chains");
  ev->add_option("--episodes-per-task", episodes, "default: training.eval_episodes_per_task");
  ev->add_option("--data", data_dir, "dataset directory (provenance hash only)");
  ev->add_option("--out", out, "metrics JSON path ('-' for stdout)");

  auto* ab = app.add_subcommand("ablate", "evaluate one ablation plan cell");
  add_common(ab, c);
  ab->add_option("--data", data_dir)->required();
  ab->add_option("--generalist", gen_path);
  ab->add_option("--specialist", spec_path);
  ab->add_option("--plan", plan_path, "plan JSON file (omit for the identity plan)");
  ab->add_option("--out", out, "metrics JSON path ('-' for stdout)");

  auto* pl = app.add_subcommand("plot", "bar chart from metrics files");
  pl->add_option("--metrics", metrics_files, "metrics JSON files")->required();
  pl->add_option("--metric", metric, "metric name (default success_rate)");
  pl->add_option("--title", title);
  pl->add_option("--out", out, "output BMP path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_data->parsed()) return cmd_gen_data(c, out, episodes);
    if (tg->parsed()) return cmd_train_generalist(c, data_dir, out);
    if (ts->parsed()) return cmd_train_specialist(c, data_dir, gen_path, out);
    if (ro->parsed())
      return cmd_rollout(c, gen_path, spec_path, mode, family, color, direction, episode_seed);
    if (ev->parsed())
      return cmd_eval(c, gen_path, spec_path, mode, chains, episodes, data_dir, out);
    if (ab->parsed()) return cmd_ablate(c, data_dir, gen_path, spec_path, plan_path, out);
    if (pl->parsed()) return cmd_plot(metrics_files, metric, title, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
