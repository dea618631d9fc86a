#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "prefmod/core/tensor.hpp"
#include "prefmod/synth/prompt.hpp"
#include "prefmod/synth/style.hpp"

namespace prefmod::synth {

enum class Split { Train, HeldOut };

struct UserProfile {
    std::uint64_t user_id = 0;
    StyleParams style;
    std::uint64_t seed = 0;
    Split split = Split::Train;
};

struct Sample {
    Prompt prompt;
    Tensor image;  // 3 x S x S in [-1, 1]
    std::uint64_t user_id = 0;
    std::uint64_t seed = 0;
};

struct DatasetConfig {
    std::size_t n_train = 8;
    std::size_t n_heldout = 4;
    std::size_t per_user = 64;
    std::size_t image_size = 16;
    double min_style_distance = 0.15;
    std::size_t max_attempts = 10000;  // per user, for rejection sampling
    std::uint64_t master_seed = 0;
    // Prompts are drawn uniformly from this list; empty means all 36.
    std::vector<Prompt> prompts;
};

struct Dataset {
    DatasetConfig config;
    std::vector<UserProfile> users;
    std::vector<Sample> samples;

    const UserProfile& user(std::uint64_t user_id) const;
    std::vector<std::uint64_t> user_ids(Split split) const;
    // Sample indices of one user in generation order.
    std::vector<std::size_t> samples_of(std::uint64_t user_id) const;
};

// Samples user styles uniformly with rejection until every pair is at least
// min_style_distance apart, then renders per_user samples per user cycling
// through shuffled copies of the prompt list. Deterministic in master_seed.
Dataset make_dataset(const DatasetConfig& config);

StyleParams sample_style(std::uint64_t seed);

// Directory layout: manifest.json plus images/<name>.raw per sample.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace prefmod::synth
