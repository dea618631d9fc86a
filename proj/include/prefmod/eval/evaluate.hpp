#pragma once

// Oracle evaluation of generated images. Desk metrics stand in for the
// learned ones: oracle style error for the preference score, conditioned vs
// unconditional oracle wins for the preference rate, content_check for text
// alignment, and the multi-scale pixel distance for perceptual distance.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefmod/sample/sampler.hpp"
#include "prefmod/synth/dataset.hpp"
#include "prefmod/train/config.hpp"

namespace prefmod::eval {

struct EvalUser {
    std::uint64_t user_id = 0;
    synth::StyleParams style;
    Tensor embedding;  // M x D_u
};

struct UserMetrics {
    std::uint64_t user_id = 0;
    double style_error = 0.0;         // conditioned
    double style_error_uncond = 0.0;  // same prompts and seeds, no conditioning
    double prior_style_error = 0.0;   // expectation for a style drawn from the prior
    double win_rate = 0.0;
    double content = 0.0;
    double content_uncond = 0.0;
    double perceptual = 0.0;  // to the user's own sample of the same prompt
    double assignment_accuracy = 0.0;
};

struct EvalReport {
    std::vector<UserMetrics> users;
    double style_error = 0.0;
    double style_error_uncond = 0.0;
    double prior_style_error = 0.0;
    double win_rate = 0.0;
    double content = 0.0;
    double content_uncond = 0.0;
    double perceptual = 0.0;
    double separation = 0.0;
    double assignment_accuracy = 0.0;
    std::size_t n_prompts = 0;
    std::size_t n_seeds = 0;
    std::uint64_t seed = 0;
    std::string fingerprint;
    std::string revision;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    std::string metrics_csv() const;  // one row per (user, metric)
};

// Evenly spaced content prompts, n in 1..36.
std::vector<synth::Prompt> eval_prompts(std::size_t n);

// Seed of one (prompt, seed index) cell; shared by every user and the
// unconditional baseline so comparisons are matched.
std::uint64_t eval_cell_seed(std::uint64_t seed, std::size_t prompt_index, std::size_t seed_index);

// Expected oracle style error against `truth` of an image rendered with a
// style drawn from the generator's prior, for the fields observable under `prompt`.
double prior_style_error(const synth::StyleParams& truth, const synth::Prompt& prompt);

struct EvalImages {
    std::vector<Tensor> conditioned;    // user major, then prompt, then seed
    std::vector<Tensor> unconditional;  // prompt major, then seed
};

// Generates the user x prompt x seed grid plus the unconditional baseline and
// scores it. Throws DataError for an empty user list or a missing embedding.
EvalReport evaluate(const ParamStore& params, const model::ModelSpec& spec, const synth::Dataset& data,
                    std::span<const EvalUser> users, const train::EvalConfig& cfg,
                    const train::SamplerConfig& sampler, std::uint64_t seed, EvalImages* images = nullptr);

const char* revision();

}  // namespace prefmod::eval
