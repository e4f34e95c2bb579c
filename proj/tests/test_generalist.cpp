#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dualpol/generalist.hpp"

using namespace dualpol;

namespace {

gen::GeneralistConfig tiny_cfg() {
  gen::GeneralistConfig cfg;
  cfg.image_h = cfg.image_w = 16;  // 4 patches
  cfg.d_model = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.k_g = 1;
  cfg.init_seed = 3;
  return cfg;
}

env::Observation observe(int hw, uint64_t seed = 5,
                         env::TaskFamily fam = env::TaskFamily::Reach) {
  env::EnvConfig ec;
  ec.height = ec.width = hw;
  ec.depth = false;
  env::ToyEnv e(ec);
  return e.reset(env::TaskSpec{fam, 1, 0}, seed);
}

std::vector<int> constant_chunk_tokens(int k, double value) {
  codec::ActionChunk c(k);
  c.values.fill(float(value));
  auto u = codec::serialize_chunk(c);
  return std::vector<int>(u.begin(), u.end());
}

}  // namespace

TEST_CASE("uniform logits give loss N_a * ln V") {
  auto cfg = tiny_cfg();
  cfg.k_g = 2;  // N_a = 15
  gen::GeneralistModel<double> m(cfg);
  // zero the output head: every position then scores the vocabulary uniformly
  m.params.find("head.W")->val.fill(0.0);
  m.params.find("head.b")->val.fill(0.0);

  auto obs = observe(16);
  auto targets = constant_chunk_tokens(2, 0.3);
  REQUIRE(targets.size() == 15);
  ag::Graph<double> g;
  double loss = m.nll_loss(g, obs, targets)->val.v[0];
  double expect = 15.0 * std::log(259.0);
  CHECK(std::abs(loss - expect) < 1e-3);

  // same value from a hand-built uniform logit array
  ag::Graph<double> g2;
  Tensor<double> flat(15, codec::kVocabSize);
  auto ref = ag::cross_entropy_sum(g2, g2.constant(flat), targets)->val.v[0];
  CHECK(std::abs(loss - ref) < 1e-9);
}

TEST_CASE("probability one on every target gives zero loss") {
  auto targets = constant_chunk_tokens(2, -0.5);
  Tensor<double> logits(int(targets.size()), codec::kVocabSize);
  for (size_t i = 0; i < targets.size(); ++i) logits.at(int(i), targets[i]) = 60.0;
  ag::Graph<double> g;
  double loss = ag::cross_entropy_sum(g, g.constant(logits), targets)->val.v[0];
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-9);
}

TEST_CASE("nll_loss rejects mismatched target length") {
  gen::GeneralistModel<double> m(tiny_cfg());
  auto obs = observe(16);
  ag::Graph<double> g;
  CHECK_THROWS(m.nll_loss(g, obs, std::vector<int>(5, 0)));
}

TEST_CASE("analytic gradients match finite differences on a 2-layer miniature") {
  gen::GeneralistModel<double> m(tiny_cfg());
  auto obs = observe(16, 9);
  auto targets = constant_chunk_tokens(1, 0.1);

  auto loss_fn = [&]() {
    ag::Graph<double> g;
    return m.nll_loss(g, obs, targets)->val.v[0];
  };
  {
    ag::Graph<double> g;
    auto loss = m.nll_loss(g, obs, targets);
    m.params.zero_grad();
    g.backward(loss);
  }
  Rng pick(77);
  int checked = 0;
  for (auto& [name, p] : m.params.items) {
    for (int rep = 0; rep < 3; ++rep) {
      int64_t i = int64_t(pick.randint(0, uint64_t(p->val.size() - 1)));
      double analytic = p->grad.v[i];
      double save = p->val.v[i];
      double h = 1e-5;
      p->val.v[i] = save + h;
      double lp = loss_fn();
      p->val.v[i] = save - h;
      double lm = loss_fn();
      p->val.v[i] = save;
      double fd = (lp - lm) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(analytic), 1e-4});
      INFO(name, " idx ", i, " fd ", fd, " an ", analytic);
      CHECK(std::abs(fd - analytic) / denom < 1e-4);
      ++checked;
    }
  }
  CHECK(checked >= 30);
}

TEST_CASE("decoding is causally consistent") {
  gen::GeneralistModel<double> m(tiny_cfg());
  auto obs = observe(16, 21);
  std::vector<int> prefix_a = {10, 20, 30};
  std::vector<int> prefix_b = {10, 20, 250};  // differs only in the last token
  ag::Graph<double> ga, gb;
  auto fa = m.forward(ga, obs, prefix_a);
  auto fb = m.forward(gb, obs, prefix_b);
  // rows before the perturbed position must be unaffected
  int rows = fa.bos_index + 3;  // prompt, BOS, first two prefix tokens
  double max_diff = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < codec::kVocabSize; ++c)
      max_diff = std::max(max_diff, std::abs(fa.logits->val.at(r, c) - fb.logits->val.at(r, c)));
  CHECK(max_diff < 1e-9);
  // and the row at the perturbed position must see it
  double diff_at = 0;
  for (int c = 0; c < codec::kVocabSize; ++c)
    diff_at = std::max(diff_at, std::abs(fa.logits->val.at(rows, c) - fb.logits->val.at(rows, c)));
  CHECK(diff_at > 1e-9);
}

TEST_CASE("greedy decoding is deterministic and grammar-shaped") {
  auto cfg = tiny_cfg();
  cfg.k_g = 3;
  gen::GeneralistModel<float> m(cfg);
  auto obs = observe(16, 2, env::TaskFamily::Push);
  auto a = m.decode_chunk(obs);
  auto b = m.decode_chunk(obs);
  CHECK(a.discrete_chunk == b.discrete_chunk);
  CHECK(a.task_latents.v == b.task_latents.v);
  CHECK(a.action_latents.v == b.action_latents.v);

  CHECK(a.continuous_chunk.length() == 3);
  for (float v : a.continuous_chunk.values.v) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  // serialized grammar: SEP exactly at separator positions
  REQUIRE(int(a.discrete_chunk.size()) == codec::serialized_length(3));
  for (size_t i = 0; i < a.discrete_chunk.size(); ++i) {
    if (codec::is_bin_position(int(i)))
      CHECK(a.discrete_chunk[i] < codec::kNumBins);
    else
      CHECK(a.discrete_chunk[i] == codec::kSep);
  }
  // continuous chunk is exactly the deserialized tokens
  std::vector<uint16_t> u(a.discrete_chunk.begin(), a.discrete_chunk.end());
  auto rt = codec::deserialize_chunk(u);
  CHECK(rt.values.v == a.continuous_chunk.values.v);
}

TEST_CASE("latent shapes follow the config toggle") {
  auto cfg = tiny_cfg();
  gen::GeneralistModel<float> m(cfg);
  auto obs = observe(16);
  auto out = m.decode_chunk(obs);
  CHECK(out.task_latents.rows == cfg.prompt_len());
  CHECK(out.task_latents.cols == cfg.d_model);
  CHECK(out.action_latents.rows == cfg.chunk_tokens());

  cfg.task_latents_include_visual = false;
  gen::GeneralistModel<float> m2(cfg);
  CHECK(m2.decode_chunk(obs).task_latents.rows == 1);
}

TEST_CASE("predict_ahead validates lead and matches decode_chunk") {
  gen::GeneralistModel<float> m(tiny_cfg());
  auto obs = observe(16);
  CHECK_THROWS(m.predict_ahead(obs, -1));
  auto a = m.predict_ahead(obs, 0);
  auto b = m.decode_chunk(obs);
  CHECK(a.discrete_chunk == b.discrete_chunk);
}

TEST_CASE("lead-shifted target indexing") {
  CHECK(gen::last_usable_tick(40, 8, 8) == 24);  // 40 - 8 - 8
  CHECK(gen::last_usable_tick(40, 4, 8) == 28);
  CHECK(gen::last_usable_tick(16, 8, 8) == 0);
}

TEST_CASE("overfitting one constant-action episode") {
  gen::GeneralistConfig cfg;
  cfg.image_h = cfg.image_w = 32;
  cfg.patch = 8;
  cfg.d_model = 32;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.k_g = 2;
  cfg.init_seed = 11;
  gen::GeneralistModel<float> m(cfg);

  auto obs = observe(32, 4);
  const double target_value = 0.3;
  auto targets = constant_chunk_tokens(cfg.k_g, target_value);

  nn::AdamW<float> opt(m.params, 1e-3, 0.01);
  std::vector<double> losses;
  for (int step = 0; step < 600; ++step) {
    ag::Graph<float> g;
    auto loss = m.nll_loss(g, obs, targets);
    losses.push_back(double(loss->val.v[0]));
    m.params.zero_grad();
    g.backward(loss);
    opt.step();
  }
  // strict decrease across the first 100 steps
  for (int step = 1; step <= 100; ++step) {
    INFO("step ", step, ": ", losses[size_t(step) - 1], " -> ", losses[size_t(step)]);
    CHECK(losses[size_t(step)] < losses[size_t(step) - 1]);
  }
  CHECK(losses.back() < 0.1);

  auto out = m.decode_chunk(obs);
  const double bin_width = 2.0 / 256.0;
  for (float v : out.continuous_chunk.values.v)
    CHECK(std::abs(double(v) - target_value) <= bin_width);
  CHECK(out.grammar_repairs == 0);
}
