#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "prefmod/model/premier.hpp"
#include "prefmod/train/config.hpp"

namespace prefmod::sample {

using VelocityFn = std::function<Tensor(const Tensor& z, double t)>;

// Explicit Euler from t = 1 to t = 0 on a uniform grid: z <- z - dt * v(z, t).
Tensor euler_integrate(const Tensor& z1, std::size_t steps, const VelocityFn& v);

struct SampleRequest {
    synth::Prompt prompt;
    std::optional<Tensor> embedding;  // M x D_u; none samples the frozen backbone
    std::uint64_t seed = 0;
    double delta_scale = 1.0;  // multiplies the deltas
};

// Standard-normal starting state of one request, 3 x S x S.
Tensor initial_noise(const model::BackboneConfig& cfg, std::uint64_t seed);

// Generates one image per request, in chunks of at most max_batch. Deltas are
// computed once per request and reused at every step. Results do not depend
// on how requests are grouped. Images are clamped to [-1, 1].
std::vector<Tensor> sample_images(const ParamStore& params, const model::ModelSpec& spec,
                                  std::span<const SampleRequest> requests, const train::SamplerConfig& cfg,
                                  std::size_t max_batch = 64);

struct GridUser {
    std::string label;
    std::optional<Tensor> embedding;
};

struct Grid {
    std::vector<synth::Prompt> prompts;
    std::vector<GridUser> users;
    std::vector<Tensor> cells;  // row-major: user index major, prompt index minor
    std::vector<std::uint64_t> seeds;
    nlohmann::json manifest() const;
};

std::uint64_t cell_seed(std::uint64_t master, std::size_t prompt_index, std::size_t user_index);

Grid sample_grid(const ParamStore& params, const model::ModelSpec& spec, std::span<const synth::Prompt> prompts,
                 std::span<const GridUser> users, std::uint64_t master_seed, const train::SamplerConfig& cfg,
                 std::size_t max_batch = 64);

// 8-bit binary PPM of a grid of 3 x S x S images with a one-pixel gutter.
std::string encode_ppm_grid(std::span<const Tensor> images, std::size_t columns);
void write_ppm_grid(const std::filesystem::path& path, std::span<const Tensor> images, std::size_t columns);

}  // namespace prefmod::sample
