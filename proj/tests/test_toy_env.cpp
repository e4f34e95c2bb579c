#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "dualpol/dataset.hpp"
#include "dualpol/env.hpp"
#include "dualpol/fsio.hpp"

using namespace dualpol;
using env::TaskFamily;
using env::TaskSpec;
using env::ToyEnv;

namespace {

const std::vector<TaskFamily> kFamilies = {TaskFamily::Reach, TaskFamily::Push,
                                           TaskFamily::PickPlace, TaskFamily::Knock};

}  // namespace

TEST_CASE("reset is deterministic: byte-identical renders") {
  ToyEnv a, b;
  for (auto fam : kFamilies) {
    TaskSpec task{fam, 2, 1};
    auto oa = a.reset(task, 1234);
    auto ob = b.reset(task, 1234);
    CHECK(oa.rgb == ob.rgb);
    CHECK(oa.depth == ob.depth);
    CHECK(oa.proprio == ob.proprio);
  }
}

TEST_CASE("different seeds give different object layouts") {
  ToyEnv e;
  TaskSpec task{TaskFamily::Reach, 0, 0};
  std::set<std::pair<long, long>> positions;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    e.reset(task, seed);
    const auto& o = e.state().objects[0];
    positions.insert({std::lround(o.x * 1e6), std::lround(o.y * 1e6)});
  }
  CHECK(positions.size() == 100);
}

TEST_CASE("initial pose is the workspace center with the gripper open") {
  ToyEnv e;
  auto obs = e.reset(TaskSpec{TaskFamily::Reach, 0, 0}, 0);
  for (int i = 0; i < 6; ++i) CHECK(e.state().pose[size_t(i)] == 0.0);
  CHECK(e.state().gripper >= 0.5);
  for (int i = 0; i < 6; ++i) CHECK(obs.proprio[size_t(i)] == 0.0f);
}

TEST_CASE("zero action changes nothing but the tick counter") {
  ToyEnv e;
  e.reset(TaskSpec{TaskFamily::Push, 1, 0}, 7);
  auto before = e.state();
  auto res = e.step({0, 0, 0, 0, 0, 0, 0});
  const auto& after = e.state();
  CHECK(after.tick == before.tick + 1);
  CHECK(after.pose == before.pose);
  CHECK(after.gripper == before.gripper);
  REQUIRE(after.objects.size() == before.objects.size());
  for (size_t i = 0; i < after.objects.size(); ++i) {
    CHECK(after.objects[i].x == before.objects[i].x);
    CHECK(after.objects[i].y == before.objects[i].y);
    CHECK(after.objects[i].held == before.objects[i].held);
  }
  CHECK_FALSE(res.done);
}

TEST_CASE("saturated actions clamp the effector at the workspace boundary") {
  ToyEnv e;
  e.reset(TaskSpec{TaskFamily::Reach, 3, 0}, 11);
  for (int t = 0; t < 60 && !e.done(); ++t) e.step({1, 1, 1, 1, 1, 1, 1});
  for (int i = 0; i < 6; ++i) {
    CHECK(e.state().pose[size_t(i)] <= 1.0);
    CHECK(e.state().pose[size_t(i)] >= -1.0);
  }
  // 60 ticks at step 0.05 overshoots the half-width 1.0 several times over
  if (!e.done()) CHECK(e.state().pose[0] == 1.0);
}

TEST_CASE("proprio stays in [-1, 1] along a rollout") {
  ToyEnv e;
  auto obs = e.reset(TaskSpec{TaskFamily::Knock, 2, 0}, 5);
  for (int t = 0; t < 30 && !e.done(); ++t) {
    for (float p : obs.proprio) {
      CHECK(p >= -1.0f);
      CHECK(p <= 1.0f);
    }
    obs = e.step(env::scripted_expert(e.config(), e.state(), e.task())).obs;
  }
}

TEST_CASE("step after episode end is a usage error") {
  env::EnvConfig cfg;
  cfg.max_ticks = 3;
  ToyEnv e(cfg);
  e.reset(TaskSpec{TaskFamily::Reach, 0, 0}, 1);
  while (!e.done()) e.step({0, 0, 0, 0, 0, 0, 0});
  CHECK_THROWS_AS(e.step({0, 0, 0, 0, 0, 0, 0}), env::EnvError);
  ToyEnv fresh;
  CHECK_THROWS_AS(fresh.step({0, 0, 0, 0, 0, 0, 0}), env::EnvError);
}

TEST_CASE("expert is quiescent once the goal is met") {
  ToyEnv e;
  e.reset(TaskSpec{TaskFamily::Reach, 0, 0}, 42);
  env::WorldState s = e.state();
  // park the effector on the target so the success predicate already holds
  s.pose[0] = s.objects[0].x;
  s.pose[1] = s.objects[0].y;
  auto a = env::scripted_expert(e.config(), s, e.task());
  double norm = 0;
  for (float v : a) norm += double(v) * double(v);
  CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("expert drives toward an object to its right") {
  ToyEnv e;
  e.reset(TaskSpec{TaskFamily::Reach, 0, 0}, 42);
  env::WorldState s = e.state();
  s.pose = {0, 0, 0, 0, 0, 0};
  s.objects[0].x = 0.5;
  s.objects[0].y = 0.0;
  s.objects[1].x = -0.5;  // keep the distractor out of the way
  s.objects[1].y = -0.5;
  auto a = env::scripted_expert(e.config(), s, e.task());
  CHECK(a[0] > 0.0f);
}

TEST_CASE("expert solves reach within 40 ticks") {
  ToyEnv e;
  Rng rng(99);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    TaskSpec task = TaskSpec::sample(TaskFamily::Reach, rng);
    e.reset(task, seed);
    bool success = false;
    for (int t = 0; t < 40 && !e.done(); ++t) {
      auto res = e.step(env::scripted_expert(e.config(), e.state(), task));
      success = res.success;
    }
    CHECK(success);
  }
}

TEST_CASE("expert success rate per family over 500 seeded episodes >= 95%") {
  ToyEnv e;
  Rng rng(2024);
  for (auto fam : kFamilies) {
    int ok = 0;
    const int n = 500;
    for (int i = 0; i < n; ++i) {
      auto task = TaskSpec::sample(fam, rng);
      auto rec = data::run_expert_episode(e, task, rng.next_u64());
      ok += rec.success ? 1 : 0;
    }
    INFO("family ", env::family_name(fam), " success ", ok, "/", n);
    CHECK(double(ok) / n >= 0.95);
  }
}

TEST_CASE("success predicates are pure functions of the world state") {
  ToyEnv e;
  TaskSpec task{TaskFamily::Push, 1, 1};
  e.reset(task, 17);
  auto s = e.state();
  bool first = env::success_predicate(e.config(), s, task);
  for (int i = 0; i < 5; ++i) CHECK(env::success_predicate(e.config(), s, task) == first);
  s.objects[0].x = s.objects[0].init_x + 0.3;  // beyond the push distance
  CHECK(env::success_predicate(e.config(), s, task));
}

TEST_CASE("at most one object is held at any time") {
  ToyEnv e;
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    auto task = TaskSpec::sample(TaskFamily::PickPlace, rng);
    e.reset(task, rng.next_u64());
    while (!e.done()) {
      e.step(env::scripted_expert(e.config(), e.state(), task));
      int held = 0;
      for (auto& o : e.state().objects) held += o.held ? 1 : 0;
      CHECK(held <= 1);
    }
  }
}

TEST_CASE("stored episodes replay to their recorded success flag") {
  ToyEnv e;
  Rng rng(55);
  for (auto fam : kFamilies) {
    auto task = TaskSpec::sample(fam, rng);
    auto rec = data::run_expert_episode(e, task, 777 + uint64_t(fam));
    ToyEnv replay;
    replay.reset(rec.task, rec.seed);
    bool success = false;
    for (const auto& st : rec.steps) {
      auto res = replay.step(st.action);
      success = res.success;
      if (res.done) break;
    }
    CHECK(success == rec.success);
  }
}

TEST_CASE("dataset generation, manifest counts and byte-identical regeneration") {
  namespace fs = std::filesystem;
  env::EnvConfig cfg;
  auto ds = data::generate_dataset(cfg, kFamilies, 10, 9001);
  CHECK(ds.episodes.size() == 40);
  for (const auto& ep : ds.episodes) CHECK(ep.success);

  fs::path dir_a = fs::temp_directory_path() / "dp_ds_a";
  fs::path dir_b = fs::temp_directory_path() / "dp_ds_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  data::save_dataset(ds, dir_a.string());

  auto ds2 = data::generate_dataset(cfg, kFamilies, 10, 9001);
  data::save_dataset(ds2, dir_b.string());
  size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    auto other = dir_b / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(fsio::read_file(entry.path().string()) == fsio::read_file(other.string()));
    ++files;
  }
  CHECK(files == 41);  // 40 episodes + manifest

  auto loaded = data::load_dataset(dir_a.string());
  REQUIRE(loaded.episodes.size() == ds.episodes.size());
  for (size_t i = 0; i < loaded.episodes.size(); ++i) {
    const auto& x = loaded.episodes[i];
    const auto& y = ds.episodes[i];
    CHECK(x.task.instruction_id() == y.task.instruction_id());
    CHECK(x.seed == y.seed);
    CHECK(x.success == y.success);
    REQUIRE(x.steps.size() == y.steps.size());
    CHECK(x.steps[0].obs.rgb == y.steps[0].obs.rgb);
    CHECK(x.steps.back().action == y.steps.back().action);
    CHECK(x.steps.back().obs.depth == y.steps.back().obs.depth);
    CHECK(x.steps.back().obs.proprio == y.steps.back().obs.proprio);
  }

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("data fractions produce nested subsets") {
  env::EnvConfig cfg;
  cfg.depth = false;
  auto ds = data::generate_dataset(cfg, kFamilies, 20, 4242);
  auto s100 = ds.subset(1.0);
  auto s10 = ds.subset(0.10);
  auto s05 = ds.subset(0.05);
  CHECK(s100.episodes.size() == 80);
  CHECK(s10.episodes.size() == 8);
  CHECK(s05.episodes.size() == 4);

  auto keys = [](const data::Dataset& d) {
    std::set<std::pair<int, uint64_t>> k;
    for (const auto& ep : d.episodes) k.insert({ep.task.instruction_id(), ep.seed});
    return k;
  };
  auto k100 = keys(s100), k10 = keys(s10), k05 = keys(s05);
  CHECK(std::includes(k10.begin(), k10.end(), k05.begin(), k05.end()));
  CHECK(std::includes(k100.begin(), k100.end(), k10.begin(), k10.end()));
  // balanced across families
  for (auto fam : kFamilies) {
    int n = 0;
    for (const auto& ep : s05.episodes) n += ep.task.family == fam ? 1 : 0;
    CHECK(n == 1);
  }
}

TEST_CASE("truncated episode file is rejected") {
  namespace fs = std::filesystem;
  ToyEnv e;
  auto rec = data::run_expert_episode(e, TaskSpec{TaskFamily::Reach, 1, 0}, 3);
  auto path = (fs::temp_directory_path() / "dp_trunc.bin").string();
  data::save_episode(rec, e.config(), path);
  auto bytes = fsio::read_file(path);
  fsio::atomic_write(path, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS(data::load_episode(path));
  fs::remove(path);
}

TEST_CASE("instruction ids round-trip through TaskSpec") {
  for (int id = 0; id < env::kNumInstructions; ++id) {
    auto task = TaskSpec::from_instruction(id);
    CHECK(task.instruction_id() == id);
    CHECK_FALSE(task.instruction_text().empty());
  }
  CHECK_THROWS(TaskSpec::from_instruction(env::kNumInstructions));
  CHECK_THROWS(TaskSpec::from_instruction(-1));
}

TEST_CASE("task switching keeps the effector in place") {
  ToyEnv e;
  e.reset(TaskSpec{TaskFamily::Reach, 0, 0}, 8);
  for (int t = 0; t < 10; ++t) e.step({1, -1, 0, 0, 0, 0, 0});
  auto pose = e.state().pose;
  e.switch_task(TaskSpec{TaskFamily::Knock, 2, 0}, 9);
  CHECK(e.state().pose == pose);
  CHECK(e.state().tick == 0);
  CHECK_FALSE(e.done());
}
