#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>
#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* bin = std::getenv("CORELLA_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "CORELLA_BIN must point at the corella binary");
  return bin;
}

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = cli() + " " + args + " >" + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

const std::string kTinyArgs =
    "--set synthetic.n=1200 --set synthetic.users=60 --set synthetic.items=50"
    " --set train.stage1.epochs=2 --set train.stage2.epochs=1 --set train.stage3.epochs=1"
    " --set crm.d_emb=8 --set crm.deep=16,8 --set llm.d_model=16 --set llm.heads=2"
    " --set llm.ff=32 --set align.projection_dim=8";

fs::path work_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("corella_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("train twice with the same seed gives identical checkpoints") {
  const fs::path dir = work_dir("det");
  const fs::path log = dir / "log.txt";
  REQUIRE(run("train " + kTinyArgs + " --seed 42 --quiet --out " + (dir / "a").string(), log) == 0);
  REQUIRE(run("train " + kTinyArgs + " --seed 42 --quiet --out " + (dir / "b").string(), log) == 0);
  CHECK(slurp(dir / "a" / "model.ckpt") == slurp(dir / "b" / "model.ckpt"));
  CHECK(slurp(dir / "a" / "train_state.ckpt") == slurp(dir / "b" / "train_state.ckpt"));
  CHECK(slurp(dir / "a" / "runlog.jsonl") == slurp(dir / "b" / "runlog.jsonl"));
  CHECK(slurp(dir / "a" / "resolved.cfg") == slurp(dir / "b" / "resolved.cfg"));
}

TEST_CASE("evaluate with rho zero reduces to the crm-only row") {
  const fs::path dir = work_dir("rho0");
  const fs::path log = dir / "log.txt";
  const std::string out = (dir / "run").string();
  REQUIRE(run("train " + kTinyArgs + " --seed 42 --quiet --out " + out, log) == 0);
  REQUIRE(run("evaluate " + kTinyArgs + " --seed 42 --quiet --set router.rho=0 --out " + out,
              log) == 0);
  const json report = json::parse(slurp(dir / "run" / "evaluation.json"));
  CHECK(report["routed"] == 0);
  CHECK(report["corella"]["acc"] == report["crm_only"]["acc"]);
  CHECK(report["corella"]["logloss"] == report["crm_only"]["logloss"]);
  CHECK(report["corella"]["auc"] == report["crm_only"]["auc"]);
}

TEST_CASE("prepare-data writes the canonical artifacts") {
  const fs::path dir = work_dir("prep");
  const fs::path log = dir / "log.txt";
  REQUIRE(run("prepare-data " + kTinyArgs + " --quiet --out " + dir.string(), log) == 0);
  CHECK(fs::exists(dir / "data" / "train.jsonl"));
  CHECK(fs::exists(dir / "data" / "valid.jsonl"));
  CHECK(fs::exists(dir / "data" / "test.jsonl"));
  CHECK(fs::exists(dir / "data" / "vocab.json"));
  CHECK(fs::exists(dir / "data" / "tokenizer.json"));
  CHECK(fs::exists(dir / "resolved.cfg"));
  // first line of each split is the hash-carrying header
  std::ifstream in(dir / "data" / "train.jsonl");
  std::string first;
  std::getline(in, first);
  const json header = json::parse(first);
  CHECK(header["kind"] == "corella-processed");
  CHECK(header.contains("vocab_hash"));
  CHECK(header.contains("tokenizer_hash"));
}

TEST_CASE("a prepared directory round-trips through the dataset=prepared path") {
  const fs::path dir = work_dir("prep2");
  const fs::path log = dir / "log.txt";
  REQUIRE(run("prepare-data " + kTinyArgs + " --quiet --out " + dir.string(), log) == 0);
  const std::string out = (dir / "run").string();
  REQUIRE(run("train " + kTinyArgs + " --quiet --set dataset=prepared --set data.dir=" +
                  (dir / "data").string() + " --out " + out,
              log) == 0);
  CHECK(fs::exists(dir / "run" / "model.ckpt"));
}

TEST_CASE("bad config exits 2 with a machine-readable error") {
  const fs::path dir = work_dir("bad");
  const fs::path log = dir / "log.txt";
  CHECK(run("train --set no.such.key=1 --out " + dir.string(), log) == 2);
  const std::string text = slurp(log);
  const json err = json::parse(text);
  CHECK(err["error"]["code"] == 2);
  CHECK(err["error"]["kind"] == "config");
}

TEST_CASE("missing data exits 3") {
  const fs::path dir = work_dir("nodata");
  const fs::path log = dir / "log.txt";
  CHECK(run("train --set dataset=movielens --set data.dir=/nonexistent-xyz --out " + dir.string(),
            log) == 3);
}

TEST_CASE("ablate emits the five-variant csv") {
  const fs::path dir = work_dir("ablate");
  const fs::path log = dir / "log.txt";
  REQUIRE(run("ablate " + kTinyArgs + " --seed 42 --quiet --out " + dir.string(), log) == 0);
  const std::string csv = slurp(dir / "ablation.csv");
  CHECK(csv.find("variant,auc,logloss,acc") == 0);
  for (const char* v : {"\nfull,", "\nno_s1,", "\nno_s2,", "\nno_s3,", "\nno_mix,"}) {
    CHECK(csv.find(v) != std::string::npos);
  }
}
