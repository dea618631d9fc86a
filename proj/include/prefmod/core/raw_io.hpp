#pragma once

// Raw tensor file: "PMTENSOR" magic, u32 format version, u32 rank, u64 dims,
// then little-endian IEEE-754 doubles. Round-trips bit-exactly.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefmod/core/tensor.hpp"

namespace prefmod {

inline constexpr std::uint32_t kRawTensorVersion = 1;

std::string encode_raw_tensor(const Tensor& tensor);
Tensor decode_raw_tensor(std::string_view bytes);

void write_raw_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_raw_tensor(const std::filesystem::path& path);

// Little-endian helpers shared with the checkpoint container.
void append_u32(std::string& out, std::uint32_t v);
void append_u64(std::string& out, std::uint64_t v);
void append_doubles(std::string& out, std::span<const double> values);
std::uint32_t read_u32(std::string_view bytes, std::size_t offset);
std::uint64_t read_u64(std::string_view bytes, std::size_t offset);
std::vector<double> read_doubles(std::string_view bytes, std::size_t offset, std::size_t count);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file, fsync and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace prefmod
