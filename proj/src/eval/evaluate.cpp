#include "prefmod/eval/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "prefmod/core/error.hpp"
#include "prefmod/core/rng.hpp"
#include "prefmod/synth/render.hpp"

#ifndef PREFMOD_REVISION
#define PREFMOD_REVISION "unknown"
#endif

namespace prefmod::eval {

using nlohmann::json;

const char* revision() { return PREFMOD_REVISION; }

std::vector<synth::Prompt> eval_prompts(std::size_t n) {
    const auto& all = synth::Prompt::all_content();
    if (n == 0 || n > all.size()) throw ConfigError("eval prompt count must be in 1.." + std::to_string(all.size()));
    std::vector<synth::Prompt> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(all[i * all.size() / n]);
    return out;
}

std::uint64_t eval_cell_seed(std::uint64_t seed, std::size_t prompt_index, std::size_t seed_index) {
    return derive_seed({seed, 0xE7A1, prompt_index, seed_index});
}

double prior_style_error(const synth::StyleParams& truth, const synth::Prompt& prompt) {
    // Mean absolute deviation of a uniform variable on [a, b] from x.
    auto uniform_mad = [](double x, double a, double b) {
        return ((x - a) * (x - a) + (b - x) * (b - x)) / (2.0 * (b - a));
    };
    const double hue = 0.5;  // circular distance of a uniform angle averages a quarter turn
    const double sat = uniform_mad(truth.saturation, synth::kSaturationMin, synth::kSaturationMax) /
                       (synth::kSaturationMax - synth::kSaturationMin);
    double tex = 0.0;
    for (int k = 0; k <= synth::kTextureMax; ++k) tex += std::abs(k - truth.texture_freq);
    tex /= (synth::kTextureMax + 1.0) * synth::kTextureMax;
    const double off = uniform_mad(truth.offset, -synth::kOffsetMax, synth::kOffsetMax) / (2.0 * synth::kOffsetMax);
    double total = hue + sat + tex + off;
    int fields = 4;
    if (prompt.shape() != synth::ShapeKind::Circle) {
        total += uniform_mad(truth.roundness, 0.0, 1.0);
        ++fields;
    }
    return total / fields;
}

EvalReport evaluate(const ParamStore& params, const model::ModelSpec& spec, const synth::Dataset& data,
                    std::span<const EvalUser> users, const train::EvalConfig& cfg,
                    const train::SamplerConfig& sampler, std::uint64_t seed, EvalImages* images) {
    if (users.empty()) throw DataError("evaluation needs at least one user");
    for (const EvalUser& u : users) {
        if (u.embedding.shape() != Shape{spec.adapters.tokens, spec.adapters.d_user}) {
            throw DataError("user " + std::to_string(u.user_id) + " has no embedding of shape " +
                            shape_str({spec.adapters.tokens, spec.adapters.d_user}));
        }
    }
    const std::vector<synth::Prompt> prompts = eval_prompts(cfg.n_prompts);
    const std::size_t np = prompts.size(), ns = cfg.n_seeds, cells = np * ns;

    std::vector<sample::SampleRequest> reqs;
    for (const EvalUser& u : users) {
        for (std::size_t p = 0; p < np; ++p) {
            for (std::size_t s = 0; s < ns; ++s) reqs.push_back({prompts[p], u.embedding, eval_cell_seed(seed, p, s), 1.0});
        }
    }
    for (std::size_t p = 0; p < np; ++p) {
        for (std::size_t s = 0; s < ns; ++s) reqs.push_back({prompts[p], std::nullopt, eval_cell_seed(seed, p, s), 1.0});
    }
    std::vector<Tensor> imgs = sample::sample_images(params, spec, reqs, sampler, cfg.max_batch);

    std::vector<synth::StyleEstimate> est(imgs.size());
    std::vector<double> content(imgs.size());
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        est[i] = synth::estimate_style(imgs[i], reqs[i].prompt);
        content[i] = synth::content_check(imgs[i], reqs[i].prompt);
    }
    const std::size_t uncond0 = users.size() * cells;

    EvalReport r;
    r.n_prompts = np;
    r.n_seeds = ns;
    r.seed = seed;
    r.revision = revision();
    for (std::size_t ui = 0; ui < users.size(); ++ui) {
        const EvalUser& u = users[ui];
        UserMetrics m;
        m.user_id = u.user_id;
        std::size_t perceptual_count = 0;
        const auto own = data.samples_of(u.user_id);
        for (std::size_t p = 0; p < np; ++p) {
            const synth::Sample* ref = nullptr;
            for (std::size_t k : own) {
                if (data.samples[k].prompt == prompts[p]) {
                    ref = &data.samples[k];
                    break;
                }
            }
            for (std::size_t s = 0; s < ns; ++s) {
                const std::size_t c = ui * cells + p * ns + s, b = uncond0 + p * ns + s;
                const double ec = synth::style_error(est[c], u.style), eu = synth::style_error(est[b], u.style);
                m.style_error += ec;
                m.style_error_uncond += eu;
                m.win_rate += ec < eu ? 1.0 : (ec == eu ? 0.5 : 0.0);  // ties split
                m.content += content[c];
                m.content_uncond += content[b];
                m.prior_style_error += prior_style_error(u.style, prompts[p]);
                if (ref) {
                    m.perceptual += synth::perceptual_distance(imgs[c], ref->image);
                    ++perceptual_count;
                }
                std::size_t best = 0;
                double best_err = 0.0;
                for (std::size_t vi = 0; vi < users.size(); ++vi) {
                    const double e = synth::style_error(est[c], users[vi].style);
                    if (vi == 0 || e < best_err) {
                        best = vi;
                        best_err = e;
                    }
                }
                m.assignment_accuracy += best == ui ? 1.0 : 0.0;
            }
        }
        const double n = static_cast<double>(cells);
        m.style_error /= n;
        m.style_error_uncond /= n;
        m.win_rate /= n;
        m.content /= n;
        m.content_uncond /= n;
        m.prior_style_error /= n;
        m.assignment_accuracy /= n;
        m.perceptual = perceptual_count ? m.perceptual / static_cast<double>(perceptual_count) : 0.0;
        r.users.push_back(m);
    }
    const double nu = static_cast<double>(users.size());
    for (const UserMetrics& m : r.users) {
        r.style_error += m.style_error / nu;
        r.style_error_uncond += m.style_error_uncond / nu;
        r.prior_style_error += m.prior_style_error / nu;
        r.win_rate += m.win_rate / nu;
        r.content += m.content / nu;
        r.content_uncond += m.content_uncond / nu;
        r.perceptual += m.perceptual / nu;
        r.assignment_accuracy += m.assignment_accuracy / nu;
    }
    if (users.size() >= 2) {
        std::vector<Tensor> embs;
        for (const EvalUser& u : users) embs.push_back(u.embedding);
        r.separation = model::separation_metric(params, spec, embs);
    }
    if (images) {
        images->conditioned.assign(imgs.begin(), imgs.begin() + static_cast<std::ptrdiff_t>(uncond0));
        images->unconditional.assign(imgs.begin() + static_cast<std::ptrdiff_t>(uncond0), imgs.end());
    }
    return r;
}

namespace {

const std::vector<std::pair<const char*, double UserMetrics::*>>& user_fields() {
    static const std::vector<std::pair<const char*, double UserMetrics::*>> fields = {
        {"style_error", &UserMetrics::style_error},
        {"style_error_uncond", &UserMetrics::style_error_uncond},
        {"prior_style_error", &UserMetrics::prior_style_error},
        {"win_rate", &UserMetrics::win_rate},
        {"content", &UserMetrics::content},
        {"content_uncond", &UserMetrics::content_uncond},
        {"perceptual", &UserMetrics::perceptual},
        {"assignment_accuracy", &UserMetrics::assignment_accuracy},
    };
    return fields;
}

const std::vector<std::pair<const char*, double EvalReport::*>>& report_fields() {
    static const std::vector<std::pair<const char*, double EvalReport::*>> fields = {
        {"style_error", &EvalReport::style_error},
        {"style_error_uncond", &EvalReport::style_error_uncond},
        {"prior_style_error", &EvalReport::prior_style_error},
        {"win_rate", &EvalReport::win_rate},
        {"content", &EvalReport::content},
        {"content_uncond", &EvalReport::content_uncond},
        {"perceptual", &EvalReport::perceptual},
        {"separation", &EvalReport::separation},
        {"assignment_accuracy", &EvalReport::assignment_accuracy},
    };
    return fields;
}

}  // namespace

json EvalReport::to_json() const {
    json j;
    j["metric_notes"] = {
        {"style_error", "oracle style distance to the user's true style (stands in for a learned preference score)"},
        {"win_rate", "fraction of matched cells where the conditioned image has lower oracle style error than the unconditional one, ties counting half"},
        {"content", "oracle prompt-content score (stands in for text-image alignment)"},
        {"perceptual", "multi-scale pixel distance to the user's own sample of the same prompt"},
        {"separation", "mean pairwise distance of empty-prompt deltas between users"},
        {"context", "the oracle reads style directly and uses no context images"},
    };
    json summary;
    for (const auto& [name, field] : report_fields()) summary[name] = this->*field;
    j["summary"] = summary;
    json per_user = json::array();
    for (const UserMetrics& m : users) {
        json u = {{"user_id", m.user_id}};
        for (const auto& [name, field] : user_fields()) u[name] = m.*field;
        per_user.push_back(u);
    }
    j["users"] = per_user;
    j["meta"] = {{"n_prompts", n_prompts}, {"n_seeds", n_seeds}, {"seed", seed},
                 {"fingerprint", fingerprint}, {"revision", revision}};
    return j;
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    try {
        for (const auto& [name, field] : report_fields()) r.*field = j.at("summary").at(name).get<double>();
        for (const json& u : j.at("users")) {
            UserMetrics m;
            m.user_id = u.at("user_id").get<std::uint64_t>();
            for (const auto& [name, field] : user_fields()) m.*field = u.at(name).get<double>();
            r.users.push_back(m);
        }
        const json& meta = j.at("meta");
        r.n_prompts = meta.at("n_prompts").get<std::size_t>();
        r.n_seeds = meta.at("n_seeds").get<std::size_t>();
        r.seed = meta.at("seed").get<std::uint64_t>();
        r.fingerprint = meta.at("fingerprint").get<std::string>();
        r.revision = meta.at("revision").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed evaluation report: ") + e.what());
    }
    return r;
}

std::string EvalReport::metrics_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "user_id,metric,value\n";
    for (const UserMetrics& m : users) {
        for (const auto& [name, field] : user_fields()) out << m.user_id << ',' << name << ',' << m.*field << '\n';
    }
    for (const auto& [name, field] : report_fields()) out << "all," << name << ',' << this->*field << '\n';
    return out.str();
}

}  // namespace prefmod::eval
