#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "corella/config.hpp"

using namespace corella;
namespace fs = std::filesystem;

TEST_CASE("defaults load and validate") {
  const RunConfig cfg = RunConfig::load(std::nullopt, {});
  CHECK(cfg.dataset == "synthetic");
  CHECK(cfg.seed == 42);
  CHECK(cfg.synthetic_n == 20000);
  CHECK(cfg.router_rho == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("unknown keys are rejected") {
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"no.such.key=1"}), ConfigError);
}

TEST_CASE("bad values name the key") {
  try {
    RunConfig::load(std::nullopt, {"synthetic.n=abc"});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("synthetic.n") != std::string::npos);
  }
}

TEST_CASE("file plus overrides, later wins") {
  const fs::path p = fs::temp_directory_path() / "corella_cfg_test.cfg";
  std::ofstream(p) << "# comment\nseed = 7\nsynthetic.n = 500\n";
  const RunConfig cfg = RunConfig::load(p, {"seed=11"});
  CHECK(cfg.seed == 11);
  CHECK(cfg.synthetic_n == 500);
}

TEST_CASE("serialize round-trips through a file") {
  RunConfig cfg = RunConfig::load(std::nullopt, {"router.rho=0.25", "crm.deep=64,32,16"});
  const fs::path p = fs::temp_directory_path() / "corella_cfg_roundtrip.cfg";
  std::ofstream(p) << cfg.serialize();
  const RunConfig back = RunConfig::load(p, {});
  CHECK(back.serialize() == cfg.serialize());
  CHECK(back.crm_deep == std::vector<int>({64, 32, 16}));
}

TEST_CASE("validation catches bad settings") {
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"dataset=bogus"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"dataset=movielens"}), ConfigError);  // no dir
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"router.rho=1.5"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"router.tau=0.8"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"align.llm_taps=1,2,3"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"llm.d_model=30"}), ConfigError);  // not / heads
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"synthetic.cue_fraction=2"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(std::nullopt, {"loss.gamma=-1"}), ConfigError);
}

TEST_CASE("threads come from the environment by default") {
  setenv("CORELLA_THREADS", "3", 1);
  const RunConfig cfg = RunConfig::load(std::nullopt, {});
  CHECK(cfg.threads == 3);
  const RunConfig overridden = RunConfig::load(std::nullopt, {"threads=1"});
  CHECK(overridden.threads == 1);
  unsetenv("CORELLA_THREADS");
}

TEST_CASE("typed views carry the configured values") {
  const RunConfig cfg = RunConfig::load(
      std::nullopt, {"align.exponent=1.0", "loss.gamma=0.2", "train.stage2.subset_count=100"});
  CHECK(cfg.alignment_config().exponent == 1.0);
  CHECK(cfg.training_plan().stage2.weights.gamma == 0.2);
  CHECK(cfg.training_plan().stage2.subset_count == 100);
  CHECK(cfg.llm_config(123).vocab_size == 123);
  CHECK(cfg.synthetic_config().seed == cfg.seed);
}
