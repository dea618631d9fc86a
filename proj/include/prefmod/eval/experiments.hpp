#pragma once

#include <string>
#include <vector>

#include "prefmod/eval/evaluate.hpp"
#include "prefmod/train/checkpoint.hpp"

namespace prefmod::eval {

enum class Variant { Full, NoShared, NoDistinct, NoDispersion, NoPpm };

const std::vector<Variant>& all_variants();
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);  // throws ConfigError

// The base config with exactly one mechanism switched off.
train::PipelineConfig apply_variant(const train::PipelineConfig& base, Variant v);

// Training users with their bank embeddings and true styles.
std::vector<EvalUser> bank_users(const train::Checkpoint& stage1, const synth::Dataset& data,
                                 const model::AdapterConfig& cfg);

struct SweepRow {
    std::size_t length = 0;
    train::FitMode mode = train::FitMode::LinearCombination;
    std::uint64_t user_id = 0;
    std::size_t seed = 0;
    double style_error = 0.0;
    double perceptual = 0.0;
};

// History of a held-out user for one sweep cell: a seeded draw of `length`
// of their samples.
std::vector<synth::Sample> sweep_history(const synth::Dataset& data, std::uint64_t user_id, std::size_t length,
                                         std::uint64_t seed);

// Fits every (length, mode, held-out user, seed) cell and scores the fitted
// user's generations over the eval prompts with one seed per cell.
// Throws DataError when a held-out user has fewer samples than the longest history.
std::vector<SweepRow> history_sweep(const synth::Dataset& data, const train::Checkpoint& stage1,
                                    const train::PipelineConfig& cfg, std::function<void(const SweepRow&)> on_row = {});

std::string sweep_csv(const std::vector<SweepRow>& rows);

// Mean style error per (length, mode).
double sweep_mean(const std::vector<SweepRow>& rows, std::size_t length, train::FitMode mode);

}  // namespace prefmod::eval
