#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dualpol/specialist.hpp"

using namespace dualpol;

namespace {

spec::SpecialistConfig tiny_cfg() {
  spec::SpecialistConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.hidden = 16;
  cfg.mlp_ratio = 2;
  cfg.k_s = 4;
  cfg.resampler_queries = 4;
  cfg.rgb_vit = spec::VitConfig{16, 16, 3, 8, 1, 16, 2, 2};
  cfg.d_g = 8;
  cfg.init_seed = 5;
  return cfg;
}

env::Observation observe(int hw, uint64_t seed = 3, bool depth = false) {
  env::EnvConfig ec;
  ec.height = ec.width = hw;
  ec.depth = depth;
  env::ToyEnv e(ec);
  return e.reset(env::TaskSpec{env::TaskFamily::Reach, 0, 0}, seed);
}

exec::GeneralistResult fake_gen(int k_g, int d_g, uint64_t seed) {
  exec::GeneralistResult r;
  Rng rng(seed);
  r.chunk = codec::ActionChunk(k_g);
  for (auto& v : r.chunk.values.v) v = float(rng.uniform(-0.9, 0.9));
  r.task_latents = Tensor<float>::randn(3, d_g, rng);
  r.action_latents = Tensor<float>::randn(5, d_g, rng);
  return r;
}

}  // namespace

TEST_CASE("sensory encoding always yields the fixed query count") {
  auto cfg = tiny_cfg();
  cfg.use_depth = true;
  cfg.depth_vit = spec::VitConfig{16, 16, 1, 8, 1, 16, 2, 2};
  spec::SpecialistModel<float> m(cfg);
  auto obs = observe(16, 3, /*depth=*/true);

  ag::Graph<float> g;
  auto groups = m.encode_sensory(g, obs, {"rgb", "depth"});
  REQUIRE(groups.size() == 2);
  for (auto& t : groups) {
    CHECK(t->val.rows == cfg.resampler_queries);
    CHECK(t->val.cols == cfg.hidden);
  }
  CHECK_THROWS(m.encode_sensory(g, obs, {"tactile"}));
}

TEST_CASE("default-size sensory path: 64 patches to 8 tokens") {
  spec::SpecialistConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 64;
  cfg.heads = 2;
  cfg.rgb_vit = spec::VitConfig{64, 64, 3, 8, 1, 64, 2, 2};
  cfg.d_g = 8;
  spec::SpecialistModel<float> m(cfg);
  CHECK(cfg.rgb_vit.n_patches() == 64);
  auto obs = observe(64);
  ag::Graph<float> g;
  auto groups = m.encode_sensory(g, obs, {"rgb"});
  CHECK(groups[0]->val.rows == 8);
}

TEST_CASE("build_conditions handles absence, windows and widths") {
  auto cfg = tiny_cfg();
  spec::SpecialistModel<float> m(cfg);
  auto obs = observe(16);

  SUBCASE("all slow-policy sources absent") {
    ag::Graph<float> g;
    auto c = m.build_conditions(g, obs, nullptr, 0);
    CHECK_FALSE(c.has_task);
    CHECK_FALSE(c.has_action);
    CHECK_FALSE(c.has_chunk);
    CHECK(c.has_proprio);
    CHECK(c.retained_steps == 0);
    // sensory queries + one null row per latent source
    CHECK(c.ctx->val.rows == cfg.resampler_queries + 2);
    CHECK(c.ctx->val.cols == cfg.hidden);
    CHECK(c.aligned_chunk->val.rows == cfg.k_s);
  }
  SUBCASE("tau_s = 0 keeps the whole chunk") {
    auto gen = fake_gen(cfg.k_s, cfg.d_g, 1);
    ag::Graph<float> g;
    auto c = m.build_conditions(g, obs, &gen, 0);
    CHECK(c.has_task);
    CHECK(c.has_action);
    CHECK(c.has_chunk);
    CHECK(c.retained_steps == cfg.k_s);
    for (int i = 0; i < cfg.k_s; ++i)
      for (int d = 0; d < 7; ++d)
        CHECK(c.aligned_chunk->val.at(i, d) == gen.chunk.values.at(i, d));
    CHECK(c.ctx->val.rows == cfg.resampler_queries + 3 + 5);
    CHECK(c.ctx->val.cols == cfg.hidden);
  }
  SUBCASE("stale chunk: suffix then learned pad") {
    auto gen = fake_gen(cfg.k_s, cfg.d_g, 2);
    ag::Graph<float> ga, gb;
    auto c = m.build_conditions(ga, obs, &gen, 3);
    CHECK(c.retained_steps == 1);
    CHECK(c.aligned_chunk->val.at(0, 0) == gen.chunk.values.at(3, 0));
    // pad rows equal the learned pad embedding
    auto pad = m.params.find("pad_action");
    for (int i = 1; i < cfg.k_s; ++i)
      for (int d = 0; d < 7; ++d) CHECK(c.aligned_chunk->val.at(i, d) == pad->val.v[size_t(d)]);
    // fully stale: everything padded
    auto c2 = m.build_conditions(gb, obs, &gen, cfg.k_s);
    CHECK(c2.retained_steps == 0);
    CHECK_FALSE(c2.has_chunk);
  }
  SUBCASE("dropping latents and proprio switches to nulls") {
    auto gen = fake_gen(cfg.k_s, cfg.d_g, 3);
    ag::Graph<float> g;
    auto c = m.build_conditions(g, obs, &gen, 0, /*drop_latents=*/true, /*drop_proprio=*/true);
    CHECK_FALSE(c.has_task);
    CHECK_FALSE(c.has_action);
    CHECK_FALSE(c.has_proprio);
    CHECK(c.has_chunk);  // the discrete chunk is not part of the dropped set
    auto np = m.params.find("null_proprio");
    CHECK(c.proprio_feat->val.v == np->val.v);
  }
}

TEST_CASE("adaLN-zero start: conditions cannot reach the output") {
  for (auto method : {spec::CondMethod::XAttn, spec::CondMethod::FiLM,
                      spec::CondMethod::InContext}) {
    auto cfg = tiny_cfg();
    cfg.method = method;
    spec::SpecialistModel<double> m(cfg);

    auto obs_a = observe(16, 3);
    auto obs_b = obs_a;
    for (auto& px : obs_b.rgb) px = uint8_t(255 - px);  // same proprio, different image
    auto gen_a = fake_gen(cfg.k_s, cfg.d_g, 10);
    auto gen_b = fake_gen(cfg.k_s, cfg.d_g, 20);
    gen_b.chunk = gen_a.chunk;  // chunk enters via input concat, keep it fixed

    Rng ar(4);
    Tensor<double> a_t = Tensor<double>::randn(cfg.k_s, 7, ar);
    ag::Graph<double> ga, gb;
    auto ca = m.build_conditions(ga, obs_a, &gen_a, 0);
    auto cb = m.build_conditions(gb, obs_b, &gen_b, 0);
    auto ya = m.denoise(ga, a_t, 17, ca);
    auto yb = m.denoise(gb, a_t, 17, cb);
    double max_diff = 0;
    for (int64_t i = 0; i < ya->val.size(); ++i)
      max_diff = std::max(max_diff, std::abs(ya->val.v[i] - yb->val.v[i]));
    INFO("method ", to_string(method));
    CHECK(max_diff < 1e-12);
  }
}

TEST_CASE("adaLN-zero start: blocks act as identity around the head") {
  auto cfg = tiny_cfg();
  spec::SpecialistModel<double> m(cfg);
  auto obs = observe(16, 7);
  auto gen = fake_gen(cfg.k_s, cfg.d_g, 9);

  Rng rng(6);
  Tensor<double> a_t = Tensor<double>::randn(cfg.k_s, 7, rng);
  ag::Graph<double> g;
  auto cond = m.build_conditions(g, obs, &gen, 0);
  auto out = m.denoise(g, a_t, 5, cond);

  // recompute by hand: embed -> layernorm -> head, nothing else
  auto Wi = m.params.find("input_embed.W"), bi = m.params.find("input_embed.b");
  auto Wh = m.params.find("head.W"), bh = m.params.find("head.b");
  const int h = cfg.hidden;
  for (int r = 0; r < cfg.k_s; ++r) {
    std::vector<double> in(14);
    for (int d = 0; d < 7; ++d) {
      in[size_t(d)] = a_t.at(r, d);
      in[size_t(7 + d)] = cond.aligned_chunk->val.at(r, d);
    }
    std::vector<double> e(size_t(h), 0.0);
    for (int c = 0; c < h; ++c) {
      double s = bi->val.v[size_t(c)];
      for (int k = 0; k < 14; ++k) s += in[size_t(k)] * Wi->val.at(k, c);
      e[size_t(c)] = s;
    }
    double mean = 0, var = 0;
    for (double x : e) mean += x;
    mean /= h;
    for (double x : e) var += (x - mean) * (x - mean);
    var /= h;
    double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int d = 0; d < 7; ++d) {
      double s = bh->val.v[size_t(d)];
      for (int c = 0; c < h; ++c) s += (e[size_t(c)] - mean) * inv * Wh->val.at(c, d);
      CHECK(std::abs(out->val.at(r, d) - s) < 1e-9);
    }
  }
}

TEST_CASE("causal self-attention: future actions cannot affect earlier steps") {
  auto cfg = tiny_cfg();
  spec::SpecialistModel<double> m(cfg);
  // break the adaLN-zero identity so attention actually runs
  Rng noise(99);
  for (auto& [name, p] : m.params.items)
    if (name.find(".mod") != std::string::npos)
      for (auto& v : p->val.v) v += noise.normal() * 0.05;

  auto obs = observe(16, 11);
  auto gen = fake_gen(cfg.k_s, cfg.d_g, 12);
  Rng rng(8);
  Tensor<double> a = Tensor<double>::randn(cfg.k_s, 7, rng);
  Tensor<double> b = a;
  b.at(cfg.k_s - 1, 2) += 0.5;  // perturb only the last step

  ag::Graph<double> ga, gb;
  auto ca = m.build_conditions(ga, obs, &gen, 0);
  auto cb = m.build_conditions(gb, obs, &gen, 0);
  auto ya = m.denoise(ga, a, 30, ca);
  auto yb = m.denoise(gb, b, 30, cb);
  for (int r = 0; r < cfg.k_s - 1; ++r)
    for (int d = 0; d < 7; ++d) CHECK(ya->val.at(r, d) == yb->val.at(r, d));
  double last_diff = 0;
  for (int d = 0; d < 7; ++d)
    last_diff = std::max(last_diff, std::abs(ya->val.at(cfg.k_s - 1, d) -
                                             yb->val.at(cfg.k_s - 1, d)));
  CHECK(last_diff > 1e-9);
}

TEST_CASE("denoise rejects wrong shapes") {
  auto cfg = tiny_cfg();
  spec::SpecialistModel<float> m(cfg);
  auto obs = observe(16);
  ag::Graph<float> g;
  auto c = m.build_conditions(g, obs, nullptr, 0);
  Tensor<float> bad(cfg.k_s + 1, 7);
  CHECK_THROWS(m.denoise(g, bad, 1, c));
}

TEST_CASE("analytic gradients match finite differences on a 2-block miniature") {
  auto cfg = tiny_cfg();
  spec::SpecialistModel<double> m(cfg);
  auto obs = observe(16, 13);
  auto gen = fake_gen(cfg.k_s, cfg.d_g, 14);
  auto sched = diffusion::make_schedule(100);
  diffusion::GuidanceConfig guide;
  guide.drop_probability = 0.0;

  std::vector<spec::TrainItem> batch(1);
  batch[0].a0 = codec::ActionChunk(cfg.k_s);
  Rng rr(15);
  for (auto& v : batch[0].a0.values.v) v = float(rr.uniform(-0.8, 0.8));
  batch[0].obs = obs;
  batch[0].gen = &gen;
  batch[0].tau_s = 1;

  auto loss_value = [&]() {
    ag::Graph<double> g;
    Rng rng(42);
    auto st = m.training_step(g, batch, sched, guide, rng);
    return st.loss;
  };
  {
    ag::Graph<double> g;
    Rng rng(42);
    ag::Ref<double> loss;
    m.training_step(g, batch, sched, guide, rng, &loss);
    m.params.zero_grad();
    g.backward(loss);
  }
  Rng pick(21);
  for (auto& [name, p] : m.params.items) {
    if (!p->requires_grad) continue;
    for (int rep = 0; rep < 2; ++rep) {
      int64_t i = int64_t(pick.randint(0, p->val.size() - 1));
      // parameters outside the active conditioning path get no gradient
      double analytic = p->grad.rows != 0 ? p->grad.v[i] : 0.0;
      double save = p->val.v[i], h = 1e-5;
      p->val.v[i] = save + h;
      double lp = loss_value();
      p->val.v[i] = save - h;
      double lm = loss_value();
      p->val.v[i] = save;
      double fd = (lp - lm) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(analytic), 1e-4});
      INFO(name, " idx ", i, " fd ", fd, " an ", analytic);
      CHECK(std::abs(fd - analytic) / denom < 1e-4);
    }
  }
}

TEST_CASE("table configuration lands near the reported parameter total") {
  auto cfg = spec::SpecialistConfig::table_defaults();
  spec::SpecialistModel<float> m(cfg);
  double count = double(m.param_count());
  INFO("parameter count: ", m.param_count());
  CHECK(count > 16.2e6 * 0.9);
  CHECK(count < 16.2e6 * 1.1);
}

TEST_CASE("condition drop rate matches the configured probability") {
  Rng rng(31337);
  int dropped = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) dropped += spec::should_drop(rng, 0.1) ? 1 : 0;
  double frac = double(dropped) / n;
  CHECK(frac > 0.09);
  CHECK(frac < 0.11);
}

TEST_CASE("mean-squared-error reduction definition") {
  // prediction == target -> 0
  ag::Graph<double> g;
  Tensor<double> t(4, 7);
  Rng rng(2);
  for (auto& v : t.v) v = rng.uniform(-1, 1);
  auto zero = ag::mse_mean(g, g.constant(t), t);
  CHECK(zero->val.v[0] == 0.0);
  // prediction 0 against unit-magnitude entries -> exactly 1 under element mean
  Tensor<double> sign(4, 7);
  for (int64_t i = 0; i < sign.size(); ++i) sign.v[i] = (i % 2 == 0) ? 1.0 : -1.0;
  auto one = ag::mse_mean(g, g.constant(Tensor<double>(4, 7)), sign);
  CHECK(one->val.v[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("training loss is deterministic given seed and weights") {
  auto cfg = tiny_cfg();
  spec::SpecialistModel<float> m(cfg);
  auto obs = observe(16, 17);
  auto gen = fake_gen(cfg.k_s, cfg.d_g, 18);
  auto sched = diffusion::make_schedule(100);
  diffusion::GuidanceConfig guide;

  std::vector<spec::TrainItem> batch(2);
  for (auto& it : batch) {
    it.a0 = codec::ActionChunk(cfg.k_s);
    it.obs = obs;
    it.gen = &gen;
  }
  auto run = [&]() {
    ag::Graph<float> g;
    Rng rng(777);
    return m.training_step(g, batch, sched, guide, rng).loss;
  };
  CHECK(run() == run());
  CHECK_THROWS(([&] {
    ag::Graph<float> g;
    Rng rng(1);
    m.training_step(g, {}, sched, guide, rng);
  }()));
}

TEST_CASE("guided sampling returns clamped deterministic chunks") {
  auto cfg = tiny_cfg();
  spec::SpecialistModel<float> m(cfg);
  auto obs = observe(16, 19);
  auto gen = fake_gen(cfg.k_s, cfg.d_g, 20);
  auto sched = diffusion::make_schedule(100);
  diffusion::GuidanceConfig guide;

  Rng r1(5), r2(5);
  auto a = m.sample(obs, &gen, 2, sched, 5, guide, r1);
  auto b = m.sample(obs, &gen, 2, sched, 5, guide, r2);
  CHECK(a.values.v == b.values.v);
  CHECK(a.length() == cfg.k_s);
  for (float v : a.values.v) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }

  // the noise head runs through the same sampler
  auto cfg2 = tiny_cfg();
  cfg2.head = diffusion::PredictionHead::Noise;
  spec::SpecialistModel<float> m2(cfg2);
  Rng r3(5);
  auto c = m2.sample(obs, &gen, 0, sched, 5, guide, r3);
  CHECK(c.length() == cfg.k_s);
}

TEST_CASE("all conditioning methods can fit a small set") {
  env::EnvConfig ec;
  ec.height = ec.width = 16;
  ec.depth = false;
  env::ToyEnv e(ec);

  // small synthetic set: chunks correlated with the scene via proprio
  const int n_items = 12;
  std::vector<spec::TrainItem> items(n_items);
  std::vector<exec::GeneralistResult> gens(n_items);
  Rng data_rng(404);
  for (int i = 0; i < n_items; ++i) {
    auto obs = e.reset(env::TaskSpec{env::TaskFamily::Reach, i % 4, 0}, uint64_t(100 + i));
    gens[size_t(i)] = fake_gen(4, 8, uint64_t(i));
    items[size_t(i)].a0 = codec::ActionChunk(4);
    for (auto& v : items[size_t(i)].a0.values.v) v = float(data_rng.uniform(-0.7, 0.7));
    items[size_t(i)].obs = obs;
    items[size_t(i)].gen = &gens[size_t(i)];
    items[size_t(i)].tau_s = i % 3;
  }

  auto sched = diffusion::make_schedule(100);
  diffusion::GuidanceConfig guide;
  for (auto method : {spec::CondMethod::XAttn, spec::CondMethod::FiLM,
                      spec::CondMethod::InContext}) {
    auto cfg = tiny_cfg();
    cfg.method = method;
    spec::SpecialistModel<float> m(cfg);
    nn::AdamW<float> opt(m.params, 1e-3, 1e-3);
    Rng rng(55);
    double initial = -1, final = -1;
    for (int step = 0; step < 300; ++step) {
      ag::Graph<float> g;
      ag::Ref<float> loss;
      auto st = m.training_step(g, items, sched, guide, rng, &loss);
      if (step == 0) initial = st.loss;
      final = st.loss;
      m.params.zero_grad();
      g.backward(loss);
      opt.step();
    }
    INFO("method ", to_string(method), " initial ", initial, " final ", final);
    CHECK(final < 0.1 * initial);
  }
}
