#pragma once

// Every hyperparameter of the pipeline in one document. Files are JSON; any
// key may be overridden on the command line as dotted.key=value.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefmod/model/premier.hpp"
#include "prefmod/synth/dataset.hpp"

namespace prefmod::train {

enum class FitMode { LinearCombination, Direct };

std::string fit_mode_name(FitMode mode);
FitMode parse_fit_mode(const std::string& name);  // throws ConfigError

struct Stage0Config {
    std::size_t steps = 3000;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    // Fraction of each batch replaced by renders of freshly drawn random styles.
    double random_style_fraction = 0.5;
};

struct Stage1Config {
    std::size_t steps = 2000;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    model::LossWeights loss_weights;
    double dropout = 0.1;  // probability of dropping a sample's user conditioning
    model::DeltaFlatten flatten = model::DeltaFlatten::Concat;
    // Each user's flattened delta is projected onto the sphere of this radius
    // before the dispersion distance. 0 uses the raw delta.
    double dispersion_radius = 1.0;
};

struct Stage2Config {
    std::size_t steps = 500;
    std::size_t batch_size = 2;
    double learning_rate = 1e-2;
    FitMode mode = FitMode::LinearCombination;
    std::size_t bank_subset = 0;  // 0 spans the whole bank
};

struct SamplerConfig {
    std::size_t steps = 50;
};

struct EvalConfig {
    std::size_t n_prompts = 9;
    std::size_t n_seeds = 3;
    std::size_t max_batch = 72;
};

struct SweepConfig {
    std::vector<std::size_t> lengths = {2, 4, 32};
    std::vector<FitMode> modes = {FitMode::LinearCombination, FitMode::Direct};
    std::size_t n_users = 4;
    std::size_t n_seeds = 3;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    synth::DatasetConfig data;
    model::ModelSpec model;
    Stage0Config stage0;
    Stage1Config stage1;
    Stage2Config stage2;
    SamplerConfig sampler;
    EvalConfig eval;
    SweepConfig sweep;

    void validate() const;  // throws ConfigError
    nlohmann::json to_json() const;
    // Unknown keys and type mismatches throw ConfigError. Missing keys keep defaults.
    static PipelineConfig from_json(const nlohmann::json& j);
    // Hex SHA-256 of the canonical JSON form.
    std::string fingerprint() const;
};

// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
// possible, else taken as a string. The key must already exist.
void apply_override(nlohmann::json& doc, const std::string& assignment);

PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Dotted "section.field" keys whose values differ between two configs.
std::vector<std::string> config_diff(const PipelineConfig& a, const PipelineConfig& b);

std::string sha256_hex(std::string_view bytes);

}  // namespace prefmod::train
