#include "graspstn/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "graspstn/error.hpp"
#include "json.hpp"

namespace graspstn {

namespace {

constexpr char kMagic[8] = {'G', 'S', 'T', 'N', 'C', 'K', 'P', '1'};

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32_le(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

float get_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

std::string fnv1a_hex(const void* data, std::size_t size) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fnv1a_hex(const std::string& text) {
  return fnv1a_hex(text.data(), text.size());
}

const CheckpointEntry* LoadedCheckpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path,
                     const ParameterSet<T>& params,
                     const CheckpointManifest& manifest) {
  std::vector<const Parameter<T>*> sorted;
  for (const auto& p : params) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->name < b->name; });

  nlohmann::json j;
  j["format_version"] = manifest.format_version;
  j["model_config_hash"] = manifest.model_config_hash;
  j["model_config"] = manifest.model_config_json;
  j["precision"] = manifest.precision;
  nlohmann::json plist = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto* p : sorted) {
    nlohmann::json e;
    e["name"] = p->name;
    e["shape"] = p->tensor.shape();
    e["offset"] = offset;
    e["count"] = p->tensor.size();
    offset += static_cast<std::uint64_t>(p->tensor.size()) * 4;
    plist.push_back(e);
  }
  j["params"] = plist;
  const std::string json_text = j.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u64_le(out, json_text.size());
  out.insert(out.end(), json_text.begin(), json_text.end());
  for (const auto* p : sorted) {
    for (Index i = 0; i < p->tensor.size(); ++i) {
      put_f32_le(out, static_cast<float>(p->tensor[i]));
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_checkpoint: cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (file.size() < 16 || std::memcmp(file.data(), kMagic, 8) != 0) {
    throw ArtifactMismatchError("load_checkpoint: bad magic in " +
                                path.string());
  }
  const std::uint64_t json_len = get_u64_le(file.data() + 8);
  if (16 + json_len > file.size()) {
    throw ArtifactMismatchError("load_checkpoint: truncated manifest");
  }
  nlohmann::json j = nlohmann::json::parse(
      file.begin() + 16, file.begin() + 16 + static_cast<long>(json_len));

  LoadedCheckpoint ckpt;
  ckpt.manifest.format_version = j.at("format_version").get<int>();
  if (ckpt.manifest.format_version != 1) {
    throw ArtifactMismatchError("load_checkpoint: unsupported format version");
  }
  ckpt.manifest.model_config_hash = j.at("model_config_hash").get<std::string>();
  if (j.contains("model_config")) {
    ckpt.manifest.model_config_json = j.at("model_config").get<std::string>();
  }
  ckpt.manifest.precision = j.at("precision").get<std::string>();

  const std::size_t payload = 16 + json_len;
  for (const auto& e : j.at("params")) {
    CheckpointEntry entry;
    entry.name = e.at("name").get<std::string>();
    for (const auto& d : e.at("shape")) {
      entry.shape.push_back(d.get<Index>());
    }
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    const std::uint64_t count = e.at("count").get<std::uint64_t>();
    if (payload + offset + count * 4 > file.size()) {
      throw ArtifactMismatchError("load_checkpoint: truncated payload");
    }
    if (static_cast<std::uint64_t>(shape_numel(entry.shape)) != count) {
      throw ArtifactMismatchError("load_checkpoint: shape/count mismatch");
    }
    entry.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      entry.values[i] = get_f32_le(file.data() + payload + offset + i * 4);
    }
    ckpt.entries.push_back(std::move(entry));
  }
  return ckpt;
}

template <typename T>
void apply_checkpoint(const LoadedCheckpoint& ckpt, ParameterSet<T>& params) {
  for (auto& p : params) {
    const CheckpointEntry* e = ckpt.find(p.name);
    if (!e) {
      throw ArtifactMismatchError("apply_checkpoint: missing parameter " +
                                  p.name);
    }
    if (e->shape != p.tensor.shape()) {
      throw ArtifactMismatchError("apply_checkpoint: shape mismatch for " +
                                  p.name + ": checkpoint " +
                                  shape_str(e->shape) + " vs model " +
                                  shape_str(p.tensor.shape()));
    }
    auto& v = p.tensor.mutable_array();
    for (Index i = 0; i < p.tensor.size(); ++i) {
      v[i] = static_cast<T>(e->values[static_cast<std::size_t>(i)]);
    }
  }
}

template void save_checkpoint<float>(const std::filesystem::path&,
                                     const ParameterSet<float>&,
                                     const CheckpointManifest&);
template void save_checkpoint<double>(const std::filesystem::path&,
                                      const ParameterSet<double>&,
                                      const CheckpointManifest&);
template void apply_checkpoint<float>(const LoadedCheckpoint&,
                                      ParameterSet<float>&);
template void apply_checkpoint<double>(const LoadedCheckpoint&,
                                       ParameterSet<double>&);

}  // namespace graspstn
