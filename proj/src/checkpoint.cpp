#include "kexp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "kexp/config_json.hpp"

namespace kexp {

using nlohmann::json;

namespace {

std::string u64_hex(uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t hex_u64(const std::string& s) {
  return std::strtoull(s.c_str(), nullptr, 16);
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

struct ManifestEntry {
  std::string name;
  std::array<int64_t, 4> shape;
  uint64_t offset;
  const Tensor4* tensor;
};

}  // namespace

void save_checkpoint(const std::string& path, ExpressionNet& net,
                     const OptimizerState* opt, const RunConfig& cfg, int epoch) {
  std::vector<ManifestEntry> manifest;
  uint64_t offset = 0;
  auto add = [&](const std::string& name, const Tensor4* t) {
    manifest.push_back({name, t->shape, offset, t});
    offset += static_cast<uint64_t>(t->numel()) * sizeof(float);
  };
  const auto params = net.params();
  for (const auto& p : params) add(p.name, p.value);
  for (const auto& b : net.buffers()) add(b.name, b.value);
  if (opt) {
    if (opt->velocity.size() != params.size())
      throw ContractError("checkpoint: optimizer state does not match params");
    for (size_t i = 0; i < params.size(); ++i)
      add("opt." + params[i].name, &opt->velocity[i]);
  }

  json header;
  header["epoch"] = epoch;
  header["config"] = to_json(cfg);
  json rng_states = json::object();
  for (auto& [name, rng] : net.rngs()) {
    json words = json::array();
    for (uint64_t w : rng->state()) words.push_back(u64_hex(w));
    rng_states[name] = words;
  }
  header["rng"] = rng_states;
  json tensors = json::array();
  for (const auto& e : manifest)
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
  header["tensors"] = tensors;

  const std::string header_str = header.dump();
  std::vector<uint8_t> bytes;
  bytes.insert(bytes.end(), {'K', 'E', 'X', 'P'});
  put_u32(bytes, kCheckpointVersion);
  put_u32(bytes, static_cast<uint32_t>(header_str.size()));
  bytes.insert(bytes.end(), header_str.begin(), header_str.end());
  for (const auto& e : manifest) {
    const size_t at = bytes.size();
    bytes.resize(at + static_cast<size_t>(e.tensor->numel()) * sizeof(float));
    std::memcpy(bytes.data() + at, e.tensor->data.data(),
                static_cast<size_t>(e.tensor->numel()) * sizeof(float));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<long>(bytes.size()));
  if (!f) throw IoError("short write to checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "KEXP", 4) != 0)
    throw FormatError("checkpoint: bad magic");
  const uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t header_len = get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<size_t>(header_len))
    throw FormatError("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  LoadedCheckpoint out;
  try {
    out.epoch = header.at("epoch").get<int>();
    out.config = run_config_from_json(header.at("config"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  out.model = build_model<float>(out.config.model);

  const size_t blob_base = 12 + static_cast<size_t>(header_len);
  auto read_into = [&](Tensor4* dst, const json& entry) {
    const auto shape = entry.at("shape").get<std::array<int64_t, 4>>();
    if (shape != dst->shape)
      throw FormatError("checkpoint: tensor '" +
                        entry.at("name").get<std::string>() +
                        "' shape mismatch against rebuilt model");
    const uint64_t off = entry.at("offset").get<uint64_t>();
    const size_t len = static_cast<size_t>(dst->numel()) * sizeof(float);
    if (blob_base + off + len > bytes.size())
      throw FormatError("checkpoint: truncated tensor data");
    std::memcpy(dst->data.data(), bytes.data() + blob_base + off, len);
  };

  // Index the manifest by name, then restore params, buffers, velocities.
  std::map<std::string, const json*> by_name;
  for (const auto& entry : header.at("tensors"))
    by_name[entry.at("name").get<std::string>()] = &entry;
  auto find = [&](const std::string& name) -> const json& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("checkpoint: missing tensor '" + name + "'");
    return *it->second;
  };

  auto params = out.model.params();
  try {
    for (auto& p : params) read_into(p.value, find(p.name));
    for (auto& b : out.model.buffers()) read_into(b.value, find(b.name));
    out.has_opt = !params.empty() && by_name.count("opt." + params[0].name) > 0;
    if (out.has_opt) {
      out.opt = OptimizerState::for_params(params);
      for (size_t i = 0; i < params.size(); ++i)
        read_into(&out.opt.velocity[i], find("opt." + params[i].name));
    }
    for (auto& [name, rng] : out.model.rngs()) {
      const auto& words = header.at("rng").at(name);
      std::array<uint64_t, 4> st{};
      for (size_t i = 0; i < 4; ++i)
        st[i] = hex_u64(words.at(i).get<std::string>());
      rng->set_state(st);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  return out;
}

}  // namespace kexp
