#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "corella/checkpoint.hpp"
#include "corella/crm.hpp"
#include "corella/llm.hpp"

using namespace corella;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "corella_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::pair<std::string, ad::Tensor>> demo_arrays(std::uint64_t seed) {
  CrmConfig ccfg;
  ccfg.d_emb = 4;
  ccfg.cross_layers = 2;
  ccfg.deep_widths = {8};
  static std::vector<CrmModel> keep_crm;
  static std::vector<LlmSurrogate> keep_llm;
  keep_crm.emplace_back(std::vector<int>{5, 7}, std::vector<std::string>{"user_id", "item_id"},
                        ccfg, seed);
  LlmConfig lcfg;
  lcfg.d_model = 8;
  lcfg.num_blocks = 1;
  lcfg.num_heads = 2;
  lcfg.ff_dim = 16;
  lcfg.max_seq_len = 12;
  lcfg.vocab_size = 20;
  keep_llm.emplace_back(lcfg, seed + 1);
  auto arrays = keep_crm.back().named_params();
  const auto lp = keep_llm.back().named_params();
  arrays.insert(arrays.end(), lp.begin(), lp.end());
  return arrays;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise") {
  const auto arrays = demo_arrays(17);
  CheckpointInfo info;
  info.created = "seed-17/test";
  info.seed = 17;
  info.stage = "stage3";
  info.step = 42;
  info.metrics["val_auc"] = 0.93;
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(path, arrays, info);

  const LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.info.seed == 17);
  CHECK(loaded.info.stage == "stage3");
  CHECK(loaded.info.step == 42);
  CHECK(loaded.info.metrics.at("val_auc") == 0.93);
  REQUIRE(loaded.arrays.size() == arrays.size());
  for (const auto& [name, tensor] : arrays) {
    const auto& arr = loaded.arrays.at(name);
    CHECK(arr.shape == tensor.shape());
    CHECK(arr.values == tensor.value());
  }

  // applying back into freshly seeded models restores every bit
  auto other = demo_arrays(99);
  REQUIRE(other.size() == arrays.size());
  apply_arrays(other, loaded);
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    CHECK(other[i].second.value() == arrays[i].second.value());
  }
}

TEST_CASE("saving the same state twice gives identical bytes") {
  const auto arrays = demo_arrays(5);
  CheckpointInfo info;
  info.created = "seed-5/test";
  info.seed = 5;
  const auto p1 = temp_file("det1.ckpt");
  const auto p2 = temp_file("det2.ckpt");
  save_checkpoint(p1, arrays, info);
  save_checkpoint(p2, arrays, info);
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("truncated payload is rejected with no partial state") {
  const auto arrays = demo_arrays(7);
  CheckpointInfo info;
  const auto path = temp_file("trunc.ckpt");
  save_checkpoint(path, arrays, info);
  const std::string bytes = read_bytes(path);
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      << bytes.substr(0, bytes.size() - 256);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("unsupported format version is rejected") {
  const auto arrays = demo_arrays(8);
  CheckpointInfo info;
  const auto path = temp_file("version.ckpt");
  save_checkpoint(path, arrays, info);
  std::string bytes = read_bytes(path);
  const std::string needle = "\"format_version\":1";
  const auto pos = bytes.find(needle);
  REQUIRE(pos != std::string::npos);
  bytes[pos + needle.size() - 1] = '2';
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("prefix load pulls out one model only") {
  const auto arrays = demo_arrays(9);
  CheckpointInfo info;
  const auto path = temp_file("prefix.ckpt");
  save_checkpoint(path, arrays, info);
  const LoadedCheckpoint crm_only = load_checkpoint(path, "crm.");
  CHECK(!crm_only.arrays.empty());
  for (const auto& [name, arr] : crm_only.arrays) {
    CHECK(name.rfind("crm.", 0) == 0);
  }
  // the CRM restores fine from the filtered container while LLM arrays are absent
  CrmConfig ccfg;
  ccfg.d_emb = 4;
  ccfg.cross_layers = 2;
  ccfg.deep_widths = {8};
  CrmModel crm({5, 7}, {"user_id", "item_id"}, ccfg, 1234);
  apply_arrays(crm.named_params(), crm_only);
  CHECK(crm_only.arrays.count("llm.tok_emb") == 0);
}

TEST_CASE("missing array or shape mismatch fails atomically") {
  const auto arrays = demo_arrays(11);
  CheckpointInfo info;
  const auto path = temp_file("apply.ckpt");
  save_checkpoint(path, arrays, info);
  const LoadedCheckpoint loaded = load_checkpoint(path, "crm.");
  LlmConfig lcfg;
  lcfg.d_model = 8;
  lcfg.num_blocks = 1;
  lcfg.num_heads = 2;
  lcfg.ff_dim = 16;
  lcfg.max_seq_len = 12;
  lcfg.vocab_size = 20;
  LlmSurrogate llm(lcfg, 5);
  const auto before = llm.snapshot();
  CHECK_THROWS_AS(apply_arrays(llm.named_params(), loaded), CheckpointError);
  CHECK(llm.snapshot() == before);  // nothing was applied
}
