#pragma once

// Binary checkpoint container: "PMCKPT\0\0", u32 version, u32 crc32 of the
// manifest, u64 manifest length, JSON manifest, then little-endian doubles.
// The manifest lists every tensor with its offset, count and crc32.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefmod/core/adam.hpp"

namespace prefmod::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct MetricRecord {
    std::uint64_t step = 0;
    double loss = 0.0;
    double flow = 0.0;
    double disp_shared = 0.0;
    double disp_distinct = 0.0;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string fingerprint;  // of the pipeline config that produced it
    nlohmann::json config = nlohmann::json::object();
    std::string stage;  // "stage0", "stage1", "stage2"
    std::uint64_t seed = 0;
    std::uint64_t step = 0;  // completed optimizer steps; with seed, the whole RNG state
    std::vector<std::uint64_t> bank_users;  // user id of each bank row block
    ParamStore params;
    AdamState optimizer;
    std::vector<MetricRecord> history;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, version mismatch, truncation or checksum failure.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);  // atomic
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::string_view bytes);

}  // namespace prefmod::train
