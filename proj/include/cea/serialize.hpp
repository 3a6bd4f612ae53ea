#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "cea/tensor.hpp"

namespace cea {

// Tensor blob: "CEAT", u32 version, u32 rank, rank x u64 dims, f64 payload.
// All integers and floats little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Named-entry container: "CEAK", u32 version, u64 count, then per entry
// u32 name length, name bytes, tensor blob. Entries are written in name order.
using NamedTensors = std::map<std::string, Tensor>;

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace cea
