#include "corella/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace corella {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float64");

namespace {
using nlohmann::json;
constexpr char kMagic[8] = {'C', 'R', 'L', 'A', 'C', 'K', 'P', 'T'};
}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, ad::Tensor>>& arrays,
                     const CheckpointInfo& info) {
  json manifest;
  manifest["format_version"] = info.format_version;
  manifest["created"] = info.created;
  manifest["seed"] = info.seed;
  manifest["stage"] = info.stage;
  manifest["step"] = info.step;
  manifest["metrics"] = info.metrics;

  json index = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : arrays) {
    json entry;
    entry["dtype"] = "f64";
    entry["shape"] = tensor.shape();
    entry["offset"] = offset;
    entry["length"] = tensor.numel() * sizeof(double);
    index[name] = entry;
    offset += tensor.numel() * sizeof(double);
  }
  manifest["arrays"] = index;
  const std::string header = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, tensor] : arrays) {
    out.write(reinterpret_cast<const char*>(tensor.value().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
  if (!out) throw CheckpointError("short write on checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::string& prefix) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint container: " + path.string());
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1u << 30)) {
    throw CheckpointError("corrupt manifest length in " + path.string());
  }
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw CheckpointError("truncated manifest in " + path.string());

  json manifest;
  try {
    manifest = json::parse(header);
  } catch (const json::exception& e) {
    throw CheckpointError("bad manifest in " + path.string() + ": " + e.what());
  }
  LoadedCheckpoint ckpt;
  ckpt.info.format_version = manifest.at("format_version").get<int>();
  if (ckpt.info.format_version != 1) {
    throw CheckpointError("unsupported checkpoint format_version " +
                          std::to_string(ckpt.info.format_version));
  }
  ckpt.info.created = manifest.value("created", "");
  ckpt.info.seed = manifest.value("seed", std::uint64_t{0});
  ckpt.info.stage = manifest.value("stage", "");
  ckpt.info.step = manifest.value("step", 0);
  if (manifest.contains("metrics")) {
    ckpt.info.metrics = manifest.at("metrics").get<std::map<std::string, double>>();
  }

  std::vector<char> payload{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

  for (const auto& [name, entry] : manifest.at("arrays").items()) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    LoadedArray arr;
    arr.shape = entry.at("shape").get<std::vector<int>>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t length = entry.at("length").get<std::uint64_t>();
    std::size_t numel = 1;
    for (int d : arr.shape) numel *= static_cast<std::size_t>(d);
    if (length != numel * sizeof(double) || offset + length > payload.size()) {
      throw CheckpointError("corrupt payload for array '" + name + "' in " + path.string());
    }
    arr.values.resize(numel);
    std::memcpy(arr.values.data(), payload.data() + offset, length);
    ckpt.arrays.emplace(name, std::move(arr));
  }
  return ckpt;
}

void apply_arrays(const std::vector<std::pair<std::string, ad::Tensor>>& params,
                  const LoadedCheckpoint& ckpt) {
  // validate everything first so a bad container never leaves partial state
  for (const auto& [name, tensor] : params) {
    const auto it = ckpt.arrays.find(name);
    if (it == ckpt.arrays.end()) {
      throw CheckpointError("checkpoint is missing array '" + name + "'");
    }
    if (it->second.shape != tensor.shape()) {
      throw CheckpointError("shape mismatch for array '" + name + "'");
    }
  }
  for (const auto& [name, tensor] : params) {
    const LoadedArray& arr = ckpt.arrays.at(name);
    ad::Tensor t = tensor;
    t.apply_update([&](std::vector<double>& w) { w = arr.values; });
  }
}

}  // namespace corella
