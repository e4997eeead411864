#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ssmt/optim.hpp"
#include "ssmt/tensor.hpp"

namespace ssmt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, little-endian: "SSMT", u32 version, u32 count, then per
/// tensor u16 name length, name bytes, u8 rank, u32 dims, f32 data; a trailing
/// u64 FNV-1a over every preceding byte.
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);  // throws CorruptCheckpoint

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace ssmt
