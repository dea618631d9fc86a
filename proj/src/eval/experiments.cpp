#include "prefmod/eval/experiments.hpp"

#include <algorithm>
#include <sstream>

#include "prefmod/core/error.hpp"
#include "prefmod/core/rng.hpp"
#include "prefmod/synth/render.hpp"
#include "prefmod/train/trainer.hpp"

namespace prefmod::eval {

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::Full, Variant::NoShared, Variant::NoDistinct, Variant::NoDispersion,
                                           Variant::NoPpm};
    return v;
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoShared: return "no_shared";
        case Variant::NoDistinct: return "no_distinct";
        case Variant::NoDispersion: return "no_dispersion";
        case Variant::NoPpm: return "no_ppm";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    for (Variant v : all_variants()) {
        if (variant_name(v) == name) return v;
    }
    throw ConfigError("unknown variant '" + name + "' (expected full, no_shared, no_distinct, no_dispersion or no_ppm)");
}

train::PipelineConfig apply_variant(const train::PipelineConfig& base, Variant v) {
    train::PipelineConfig c = base;
    switch (v) {
        case Variant::Full: break;
        case Variant::NoShared: c.model.conditioning.use_shared = false; break;
        case Variant::NoDistinct: c.model.conditioning.use_distinct = false; break;
        case Variant::NoDispersion: c.stage1.loss_weights = {0.0, 0.0}; break;
        case Variant::NoPpm: c.model.conditioning.prompt_modulation = false; break;
    }
    return c;
}

std::vector<EvalUser> bank_users(const train::Checkpoint& stage1, const synth::Dataset& data,
                                 const model::AdapterConfig& cfg) {
    std::vector<EvalUser> out;
    for (std::uint64_t u : stage1.bank_users) out.push_back({u, data.user(u).style, train::bank_embedding(stage1, cfg, u)});
    return out;
}

std::vector<synth::Sample> sweep_history(const synth::Dataset& data, std::uint64_t user_id, std::size_t length,
                                         std::uint64_t seed) {
    std::vector<std::size_t> own = data.samples_of(user_id);
    if (own.size() < length) {
        throw DataError("user " + std::to_string(user_id) + " has " + std::to_string(own.size()) +
                        " samples, fewer than the history length " + std::to_string(length));
    }
    Rng rng(derive_seed({seed, 0x4157, user_id}));
    std::shuffle(own.begin(), own.end(), rng.engine());
    std::vector<synth::Sample> out;
    for (std::size_t i = 0; i < length; ++i) out.push_back(data.samples[own[i]]);
    return out;
}

std::vector<SweepRow> history_sweep(const synth::Dataset& data, const train::Checkpoint& stage1,
                                    const train::PipelineConfig& cfg, std::function<void(const SweepRow&)> on_row) {
    const auto held = data.user_ids(synth::Split::HeldOut);
    if (held.size() < cfg.sweep.n_users) {
        throw DataError("history sweep needs " + std::to_string(cfg.sweep.n_users) + " held-out users, dataset has " +
                        std::to_string(held.size()));
    }
    const std::size_t longest = *std::max_element(cfg.sweep.lengths.begin(), cfg.sweep.lengths.end());
    for (std::size_t i = 0; i < cfg.sweep.n_users; ++i) {
        if (data.samples_of(held[i]).size() < longest) {
            throw DataError("held-out user " + std::to_string(held[i]) + " has fewer samples than the longest history (" +
                            std::to_string(longest) + ")");
        }
    }
    const std::vector<synth::Prompt> prompts = eval_prompts(cfg.eval.n_prompts);
    std::vector<SweepRow> rows;
    for (std::size_t length : cfg.sweep.lengths) {
        for (train::FitMode mode : cfg.sweep.modes) {
            for (std::size_t ui = 0; ui < cfg.sweep.n_users; ++ui) {
                const std::uint64_t user = held[ui];
                const synth::StyleParams& style = data.user(user).style;
                for (std::size_t s = 0; s < cfg.sweep.n_seeds; ++s) {
                    // History and fitting noise depend on the seed only, so both modes see the same history.
                    const std::uint64_t cell = derive_seed({cfg.seed, 0x5EE9, length, user, s});
                    const auto history = sweep_history(data, user, length, cell);
                    const train::FittedUser fit = train::train_new_user(history, stage1, cfg, mode, cell);
                    std::vector<sample::SampleRequest> reqs;
                    for (std::size_t p = 0; p < prompts.size(); ++p) {
                        reqs.push_back({prompts[p], fit.embedding, eval_cell_seed(cfg.seed, p, s), 1.0});
                    }
                    const auto imgs = sample::sample_images(stage1.params, cfg.model, reqs, cfg.sampler, cfg.eval.max_batch);
                    SweepRow row{length, mode, user, s, 0.0, 0.0};
                    std::size_t n_perc = 0;
                    const auto own = data.samples_of(user);
                    for (std::size_t p = 0; p < prompts.size(); ++p) {
                        row.style_error += synth::style_error(synth::estimate_style(imgs[p], prompts[p]), style);
                        for (std::size_t k : own) {
                            if (data.samples[k].prompt == prompts[p]) {
                                row.perceptual += synth::perceptual_distance(imgs[p], data.samples[k].image);
                                ++n_perc;
                                break;
                            }
                        }
                    }
                    row.style_error /= static_cast<double>(prompts.size());
                    row.perceptual = n_perc ? row.perceptual / static_cast<double>(n_perc) : 0.0;
                    rows.push_back(row);
                    if (on_row) on_row(row);
                }
            }
        }
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "length,mode,user_id,seed,style_error,perceptual\n";
    for (const SweepRow& r : rows) {
        out << r.length << ',' << train::fit_mode_name(r.mode) << ',' << r.user_id << ',' << r.seed << ','
            << r.style_error << ',' << r.perceptual << '\n';
    }
    return out.str();
}

double sweep_mean(const std::vector<SweepRow>& rows, std::size_t length, train::FitMode mode) {
    double total = 0.0;
    std::size_t n = 0;
    for (const SweepRow& r : rows) {
        if (r.length == length && r.mode == mode) {
            total += r.style_error;
            ++n;
        }
    }
    if (n == 0) throw DataError("no sweep rows for length " + std::to_string(length) + " and mode " + train::fit_mode_name(mode));
    return total / static_cast<double>(n);
}

}  // namespace prefmod::eval
