#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "dualpol/checkpoint.hpp"
#include "dualpol/config.hpp"
#include "dualpol/fsio.hpp"

using namespace dualpol;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path p;
  TempDir() : p(fs::temp_directory_path() / ("dualpol_test_" + std::to_string(::getpid()))) {
    fs::create_directories(p);
  }
  ~TempDir() { fs::remove_all(p); }
  std::string file(const std::string& name) const { return (p / name).string(); }
};

}  // namespace

TEST_CASE("empty config text yields all defaults") {
  auto rc = cfg::parse_config_text("");
  cfg::RunConfig d;
  CHECK(cfg::serialize(rc) == cfg::serialize(d));
  CHECK(rc.executor.generalist_cost == 8);
  CHECK(rc.executor.specialist_cost == 1);
  CHECK(rc.diffusion.w_g == 3.0);
  auto rc2 = cfg::parse_config_text("  \n\t ");
  CHECK(cfg::serialize(rc2) == cfg::serialize(d));
}

TEST_CASE("round-trip through serialize and parse is lossless") {
  cfg::RunConfig rc;
  rc.env.height = rc.env.width = 32;
  rc.specialist.method = "film";
  rc.executor.m = 0.17;
  rc.training.seed = 99;
  auto back = cfg::parse_config_text(cfg::serialize(rc));
  CHECK(cfg::serialize(back) == cfg::serialize(rc));
  CHECK(cfg::config_hash(back) == cfg::config_hash(rc));
}

TEST_CASE("single override changes exactly one field") {
  auto rc = cfg::parse_config_text("", {"executor.m=0.1"});
  CHECK(rc.executor.m == 0.1);
  rc.executor.m = cfg::RunConfig{}.executor.m;  // undo; the rest must be default
  CHECK(cfg::serialize(rc) == cfg::serialize(cfg::RunConfig{}));

  auto rc2 = cfg::parse_config_text("", {"specialist.method=film", "training.chains=10"});
  CHECK(rc2.specialist.method == "film");
  CHECK(rc2.training.chains == 10);
  CHECK(rc2.overrides.size() == 2);
}

TEST_CASE("unknown keys and sections are errors naming the key") {
  CHECK_THROWS_WITH_AS(cfg::parse_config_text(R"({"executor": {"mm": 0.1}})"),
                       doctest::Contains("executor.mm"), cfg::ConfigError);
  CHECK_THROWS_WITH_AS(cfg::parse_config_text(R"({"exec": {}})"),
                       doctest::Contains("exec"), cfg::ConfigError);
  CHECK_THROWS_AS(cfg::parse_config_text("", {"executor.bogus=1"}), cfg::ConfigError);
  CHECK_THROWS_AS(cfg::parse_config_text("", {"no_equals_sign"}), cfg::ConfigError);
}

TEST_CASE("type mismatches are errors naming the key") {
  CHECK_THROWS_WITH_AS(cfg::parse_config_text(R"({"executor": {"lead": "eight"}})"),
                       doctest::Contains("executor.lead"), cfg::ConfigError);
  CHECK_THROWS_WITH_AS(cfg::parse_config_text(R"({"env": {"depth": 1}})"),
                       doctest::Contains("env.depth"), cfg::ConfigError);
  // ints widen into float slots
  auto rc = cfg::parse_config_text(R"({"executor": {"m": 1}})");
  CHECK(rc.executor.m == 1.0);
  // but floats do not narrow into int slots
  CHECK_THROWS_WITH_AS(cfg::parse_config_text(R"({"executor": {"lead": 2.5}})"),
                       doctest::Contains("executor.lead"), cfg::ConfigError);
}

TEST_CASE("constraint violations name the offending key") {
  CHECK_THROWS_WITH_AS(cfg::parse_config_text("", {"executor.specialist_cost=9"}),
                       doctest::Contains("executor.specialist_cost"), cfg::ConfigError);
  CHECK_THROWS_WITH_AS(cfg::parse_config_text("", {"generalist.patch=7"}),
                       doctest::Contains("generalist.patch"), cfg::ConfigError);
  CHECK_THROWS_WITH_AS(
      cfg::parse_config_text(R"({"env": {"depth": false}, "specialist": {"use_depth": true}})"),
      doctest::Contains("specialist.use_depth"), cfg::ConfigError);
  CHECK_THROWS_WITH_AS(cfg::parse_config_text("", {"executor.mode=turbo"}),
                       doctest::Contains("executor.mode"), cfg::ConfigError);
  CHECK_THROWS_WITH_AS(cfg::parse_config_text("", {"training.data_fraction=0.0"}),
                       doctest::Contains("training.data_fraction"), cfg::ConfigError);
}

TEST_CASE("file parsing records provenance") {
  TempDir td;
  std::string path = td.file("run.json");
  fsio::atomic_write(path, R"({"training": {"chains": 7}})");
  auto rc = cfg::parse_config_file(path, {"executor.m=0.2"});
  CHECK(rc.training.chains == 7);
  CHECK(rc.executor.m == 0.2);
  CHECK(rc.source_path == path);
  CHECK(rc.source_hash != 0);
  CHECK(rc.overrides == std::vector<std::string>{"executor.m=0.2"});
}

TEST_CASE("config hash is sensitive to every section") {
  cfg::RunConfig a;
  uint64_t h = cfg::config_hash(a);
  for (auto kv : {"env.height=16", "generalist.k_g=4", "specialist.hidden=32",
                  "diffusion.w_g=2.0", "executor.lead=4", "training.seed=5"}) {
    auto b = cfg::parse_config_text("", {kv});
    CHECK(cfg::config_hash(b) != h);
  }
}

TEST_CASE("section adapters agree with the module configs") {
  auto rc = cfg::parse_config_text("", {"env.height=32", "env.width=32"});
  auto g = cfg::make_generalist_config(rc);
  CHECK(g.image_h == 32);
  CHECK(g.lead == rc.executor.lead);
  g.validate();
  auto s = cfg::make_specialist_config(rc);
  CHECK(s.d_g == rc.generalist.d_model);
  CHECK(s.rgb_vit.image_h == 32);
  s.validate();
  auto x = cfg::make_executor_config(rc);
  CHECK(x.k_g == rc.generalist.k_g);
  x.validate();
  auto sched = cfg::make_noise_schedule(rc);
  CHECK(sched.T == rc.diffusion.timesteps);
}

TEST_CASE("bundle serialization round-trips byte for byte") {
  TempDir td;
  ckpt::Bundle b;
  b.kind = "generalist";
  b.config_text = cfg::serialize(cfg::RunConfig{});
  Rng rng(7);
  b.arrays.emplace_back("w1", Tensor<float>::randn(3, 4, rng));
  b.arrays.emplace_back("b1", Tensor<float>::randn(1, 4, rng));

  std::string path = td.file("model.ckpt");
  ckpt::save_bundle(b, path);
  std::string bytes1 = fsio::read_file(path);
  auto loaded = ckpt::load_bundle(path, "generalist");
  CHECK(loaded.kind == "generalist");
  CHECK(loaded.config_text == b.config_text);
  REQUIRE(loaded.arrays.size() == 2);
  CHECK(loaded.arrays[0].first == "w1");
  CHECK(loaded.arrays[0].second.v == b.arrays[0].second.v);
  ckpt::save_bundle(loaded, path);
  CHECK(fsio::read_file(path) == bytes1);
}

TEST_CASE("kind, version and corruption errors are typed") {
  TempDir td;
  ckpt::Bundle b;
  b.kind = "specialist";
  b.arrays.emplace_back("x", Tensor<float>(2, 2));
  std::string path = td.file("s.ckpt");
  ckpt::save_bundle(b, path);

  CHECK_THROWS_AS(ckpt::load_bundle(path, "generalist"), ckpt::KindError);
  CHECK_NOTHROW(ckpt::load_bundle(path));  // no expectation, no check

  std::string bytes = fsio::read_file(path);

  SUBCASE("truncation fails the checksum") {
    for (size_t cut : {bytes.size() - 1, bytes.size() / 2, size_t(6)}) {
      std::string trunc = bytes.substr(0, cut);
      CHECK_THROWS_AS(ckpt::parse_bundle(trunc), ckpt::CorruptionError);
    }
  }
  SUBCASE("a flipped payload byte fails the checksum") {
    std::string bad = bytes;
    bad[bytes.size() / 2] = char(bad[bytes.size() / 2] ^ 0x40);
    CHECK_THROWS_AS(ckpt::parse_bundle(bad), ckpt::CorruptionError);
  }
  SUBCASE("wrong magic is corruption") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(ckpt::parse_bundle(bad), ckpt::CorruptionError);
  }
  SUBCASE("future versions raise a migration error") {
    std::string bad = bytes;
    bad[4] = 2;  // version lives right after the magic
    // refresh the checksum so only the version differs
    uint32_t crc = fsio::crc32(bad.data(), bad.size() - 4);
    for (int i = 0; i < 4; ++i) bad[bad.size() - 4 + size_t(i)] = char((crc >> (8 * i)) & 0xff);
    CHECK_THROWS_AS(ckpt::parse_bundle(bad), ckpt::VersionError);
  }
}

TEST_CASE("param stores round-trip through bundles") {
  nn::ParamStore<float> ps;
  Rng rng(11);
  ps.add("layer.W", Tensor<float>::randn(4, 6, rng));
  ps.add("layer.b", Tensor<float>::randn(1, 6, rng));

  ckpt::Bundle b;
  b.kind = "generalist";
  ckpt::store_params(b, ps);

  nn::ParamStore<float> ps2;
  ps2.add("layer.W", Tensor<float>(4, 6));
  ps2.add("layer.b", Tensor<float>(1, 6));
  ckpt::load_params(b, ps2);
  CHECK(ps2.find("layer.W")->val.v == ps.find("layer.W")->val.v);
  CHECK(ps2.find("layer.b")->val.v == ps.find("layer.b")->val.v);

  SUBCASE("missing arrays are errors") {
    nn::ParamStore<float> ps3;
    ps3.add("other.W", Tensor<float>(4, 6));
    CHECK_THROWS_AS(ckpt::load_params(b, ps3), ckpt::CheckpointError);
  }
  SUBCASE("shape mismatches are errors") {
    nn::ParamStore<float> ps3;
    ps3.add("layer.W", Tensor<float>(6, 4));
    CHECK_THROWS_AS(ckpt::load_params(b, ps3), ckpt::CheckpointError);
  }
}
