#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "corella/autodiff.hpp"

namespace corella {

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Run identity recorded in the manifest. `created` is a deterministic run tag
// (derived from seed and stage, never wall-clock time) so that identical runs
// produce byte-identical containers.
struct CheckpointInfo {
  int format_version = 1;
  std::string created;
  std::uint64_t seed = 0;
  std::string stage;
  int step = 0;
  std::map<std::string, double> metrics;
};

// Single-file container: magic, little-endian manifest length, JSON manifest
// (array index with dtype/shape/offset/length), then the concatenated
// little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, ad::Tensor>>& arrays,
                     const CheckpointInfo& info);

struct LoadedArray {
  std::vector<int> shape;
  std::vector<double> values;
};

struct LoadedCheckpoint {
  CheckpointInfo info;
  std::map<std::string, LoadedArray> arrays;
};

// Loads the container; when `prefix` is non-empty only arrays whose name
// starts with it are materialized. Corrupt offsets/lengths are rejected
// before any state is exposed.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::string& prefix = "");

// Writes loaded arrays into the given parameters, matching by name; every
// parameter must be present with the exact shape. Bitwise restore.
void apply_arrays(const std::vector<std::pair<std::string, ad::Tensor>>& params,
                  const LoadedCheckpoint& ckpt);

}  // namespace corella
