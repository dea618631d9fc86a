#include "prefmod/sample/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "prefmod/core/error.hpp"
#include "prefmod/core/ops.hpp"
#include "prefmod/core/raw_io.hpp"
#include "prefmod/core/rng.hpp"
#include "prefmod/train/trainer.hpp"

namespace prefmod::sample {

Tensor euler_integrate(const Tensor& z1, std::size_t steps, const VelocityFn& v) {
    if (steps == 0) throw ConfigError("sampler needs at least one step");
    std::vector<double> z = z1.to_vector();
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) * dt;
        const Tensor vel = v(Tensor(z1.shape(), z), t);
        if (vel.shape() != z1.shape()) throw ShapeError("velocity shape " + shape_str(vel.shape()) + " != state shape");
        for (std::size_t i = 0; i < z.size(); ++i) z[i] -= dt * vel[i];
        for (double x : z) {
            if (!std::isfinite(x)) throw NumericalError("sampler state became non-finite at t = " + std::to_string(t));
        }
    }
    return Tensor(z1.shape(), std::move(z));
}

Tensor initial_noise(const model::BackboneConfig& cfg, std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x5A3F}));
    return rng.normal_tensor({cfg.channels, cfg.image_size, cfg.image_size});
}

namespace {

std::vector<Tensor> sample_chunk(const ParamStore& params, const model::ModelSpec& spec,
                                 std::span<const SampleRequest> reqs, const train::SamplerConfig& cfg) {
    const auto& bb = spec.backbone;
    const std::size_t b = reqs.size();
    std::vector<synth::Prompt> prompts;
    std::vector<Tensor> noise;
    bool conditioned = false;
    for (const SampleRequest& r : reqs) {
        prompts.push_back(r.prompt);
        noise.push_back(initial_noise(bb, r.seed));
        conditioned |= r.embedding.has_value();
    }

    std::optional<Tensor> shared, distinct;
    if (conditioned) {
        Tape tape;
        Binder w(tape, params);
        std::vector<Var> rows;
        for (const SampleRequest& r : reqs) {
            const Tensor e = r.embedding ? *r.embedding : Tensor::zeros({spec.adapters.tokens, spec.adapters.d_user});
            if (e.shape() != Shape{spec.adapters.tokens, spec.adapters.d_user}) {
                throw ShapeError("user embedding has shape " + shape_str(e.shape()) + ", expected " +
                                 shape_str({spec.adapters.tokens, spec.adapters.d_user}));
            }
            rows.push_back(tape.constant(e));
        }
        const model::DeltaSet d = model::preference_deltas(w, spec, ops::concat(rows, 0), prompts);
        // Unconditioned requests and scaled requests are handled row-wise.
        auto finish = [&](const Tensor& t) {
            std::vector<double> v = t.to_vector();
            const std::size_t width = t.dim(1) * model::kTextTokens;
            for (std::size_t i = 0; i < b; ++i) {
                const double s = reqs[i].embedding ? reqs[i].delta_scale : 0.0;
                if (s == 1.0) continue;
                for (std::size_t k = 0; k < width; ++k) v[i * width + k] = s == 0.0 ? 0.0 : v[i * width + k] * s;
            }
            return Tensor(t.shape(), std::move(v));
        };
        shared = finish(d.shared.value());
        distinct = finish(d.distinct.value());
    }

    const Tensor z1 = train::stack_images(noise);
    const Tensor z0 = euler_integrate(z1, cfg.steps, [&](const Tensor& z, double t) {
        Tape tape;
        Binder w(tape, params);
        const model::TextEncoding text = model::encode_prompts(w, bb, prompts);
        const std::vector<double> ts(b, t);
        model::DeltaSet d;
        if (conditioned) d = {tape.constant(*shared), tape.constant(*distinct)};
        return model::velocity(w, bb, tape.constant(z), text, ts, conditioned ? &d : nullptr).value();
    });

    std::vector<Tensor> out;
    const std::size_t n = z0.numel() / b;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> v(z0.data().begin() + i * n, z0.data().begin() + (i + 1) * n);
        for (double& x : v) x = std::clamp(x, -1.0, 1.0);
        out.emplace_back(Shape{bb.channels, bb.image_size, bb.image_size}, std::move(v));
    }
    return out;
}

}  // namespace

std::vector<Tensor> sample_images(const ParamStore& params, const model::ModelSpec& spec,
                                  std::span<const SampleRequest> requests, const train::SamplerConfig& cfg,
                                  std::size_t max_batch) {
    if (max_batch == 0) throw ConfigError("max_batch must be positive");
    std::vector<Tensor> out;
    out.reserve(requests.size());
    for (std::size_t start = 0; start < requests.size(); start += max_batch) {
        const auto chunk = requests.subspan(start, std::min(max_batch, requests.size() - start));
        for (Tensor& t : sample_chunk(params, spec, chunk, cfg)) out.push_back(std::move(t));
    }
    return out;
}

std::uint64_t cell_seed(std::uint64_t master, std::size_t prompt_index, std::size_t user_index) {
    return derive_seed({master, 0xCE11, prompt_index, user_index});
}

Grid sample_grid(const ParamStore& params, const model::ModelSpec& spec, std::span<const synth::Prompt> prompts,
                 std::span<const GridUser> users, std::uint64_t master_seed, const train::SamplerConfig& cfg,
                 std::size_t max_batch) {
    if (prompts.empty() || users.empty()) throw DataError("sample grid needs at least one prompt and one user");
    Grid g;
    g.prompts.assign(prompts.begin(), prompts.end());
    g.users.assign(users.begin(), users.end());
    std::vector<SampleRequest> reqs;
    for (std::size_t u = 0; u < users.size(); ++u) {
        for (std::size_t p = 0; p < prompts.size(); ++p) {
            g.seeds.push_back(cell_seed(master_seed, p, u));
            reqs.push_back({prompts[p], users[u].embedding, g.seeds.back(), 1.0});
        }
    }
    g.cells = sample_images(params, spec, reqs, cfg, max_batch);
    return g;
}

nlohmann::json Grid::manifest() const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (std::size_t u = 0; u < users.size(); ++u) {
        for (std::size_t p = 0; p < prompts.size(); ++p) {
            const std::size_t i = u * prompts.size() + p;
            cells_json.push_back({{"row", u},
                                  {"column", p},
                                  {"user", users[u].label},
                                  {"conditioned", users[u].embedding.has_value()},
                                  {"prompt", prompts[p].str()},
                                  {"seed", seeds[i]}});
        }
    }
    return {{"rows", users.size()}, {"columns", prompts.size()}, {"cells", cells_json}};
}

std::string encode_ppm_grid(std::span<const Tensor> images, std::size_t columns) {
    if (images.empty() || columns == 0) throw DataError("PPM grid needs at least one image and one column");
    const std::size_t s = images[0].dim(1);
    const std::size_t rows = (images.size() + columns - 1) / columns;
    const std::size_t width = columns * (s + 1) + 1, height = rows * (s + 1) + 1;
    std::string pix(width * height * 3, static_cast<char>(255));
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor& im = images[i];
        if (im.shape() != Shape{3, s, s}) throw ShapeError("PPM grid images must all be 3 x S x S");
        const std::size_t ox = (i % columns) * (s + 1) + 1, oy = (i / columns) * (s + 1) + 1;
        for (std::size_t y = 0; y < s; ++y) {
            for (std::size_t x = 0; x < s; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    const double v = std::clamp((im[(c * s + y) * s + x] + 1.0) * 0.5, 0.0, 1.0);
                    pix[((oy + y) * width + ox + x) * 3 + c] = static_cast<char>(std::lround(v * 255.0));
                }
            }
        }
    }
    return "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n" + pix;
}

void write_ppm_grid(const std::filesystem::path& path, std::span<const Tensor> images, std::size_t columns) {
    write_file_atomic(path, encode_ppm_grid(images, columns));
}

}  // namespace prefmod::sample
