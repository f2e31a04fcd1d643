// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint:
//   "HSGT" | u32 version | u32 count | count x (u32 name_len | name |
//   u32 rank | rank x u32 extent | numel x f32)
// All integers and floats little-endian.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hindsight/image.hpp"
#include "hindsight/parameter.hpp"

namespace hindsight {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
/// Throws IoError on a missing file, bad magic, unknown version or truncation.
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> snapshot(const ParameterStore<float>& store);
/// Copies entries into same-named parameters. Every parameter of `store`
/// must be present with a matching shape; extra entries are ignored.
/// Throws ConfigError naming the first offending parameter.
void restore(ParameterStore<float>& store, const std::vector<NamedTensor>& tensors);

}  // namespace hindsight
