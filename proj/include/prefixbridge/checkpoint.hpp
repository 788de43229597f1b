// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (all integers little-endian):
//
//   8 bytes   magic "PFXBRDG1" (the trailing '1' is the format version)
//   u32       header length H
//   H bytes   UTF-8 JSON {version, configs:{lm, mapper, train}, vocab,
//             manifest:[{name, shape, offset}]}
//   payload   contiguous f32 tensors; manifest offsets are byte offsets
//             from the start of the payload
//
// Tensors are written in name order, so a save of a loaded file reproduces
// it byte for byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prefixbridge/trainer.hpp"

namespace pfx {

inline constexpr char kCheckpointMagic[8] = {'P', 'F', 'X', 'B', 'R', 'D', 'G', '1'};
inline constexpr int kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// FormatError for a bad magic, truncated data or an inconsistent manifest;
/// VersionError for a recognized file of another format version.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pfx
