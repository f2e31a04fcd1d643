// SPDX-License-Identifier: Apache-2.0
#include "hindsight/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace hindsight {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError(path.string() + ": truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("HSGT", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    out.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * 4));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "HSGT", 4) != 0) throw IoError(path.string() + ": not a checkpoint");
  const std::uint32_t version = get_u32(in, path);
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in, path);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(get_u32(in, path));
    if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) {
      throw IoError(path.string() + ": truncated checkpoint");
    }
    Shape shape(get_u32(in, path));
    for (auto& e : shape) e = get_u32(in, path);
    t.value = Tensor<float>(shape);
    if (!in.read(reinterpret_cast<char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * 4))) {
      throw IoError(path.string() + ": truncated data for '" + t.name + "'");
    }
    tensors.push_back(std::move(t));
  }
  return tensors;
}

std::vector<NamedTensor> snapshot(const ParameterStore<float>& store) {
  std::vector<NamedTensor> out;
  out.reserve(store.size());
  for (const auto& p : store) out.push_back({p->name, p->value});
  return out;
}

void restore(ParameterStore<float>& store, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const NamedTensor& t : tensors) by_name.emplace(t.name, &t.value);
  for (auto& p : store) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing parameter '" + p->name + "'");
    if (it->second->shape() != p->value.shape()) {
      throw ConfigError("checkpoint parameter '" + p->name + "' has shape " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(p->value.shape()));
    }
  }
  for (auto& p : store) p->value = *by_name.at(p->name);
}

}  // namespace hindsight
