#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "paln/nn/tensor.hpp"

namespace paln::nn {

/// Binary tensor container:
///   "PALN" | u32 version | u64 tensor count |
///   per tensor: u32 name bytes, UTF-8 name, u32 rank, u64 dims[rank],
///               f64 data[prod(dims)]
/// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::string encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes);

/// Writes via a temporary file and rename, so readers never see a partial file.
void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> to_named(std::span<const Parameter> params);
/// Copies values into `params` by name; shapes must match and every
/// parameter must be present.
void assign_named(std::span<Parameter> params, std::span<const NamedTensor> tensors);

/// Atomically replaces `path` with `contents`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace paln::nn
