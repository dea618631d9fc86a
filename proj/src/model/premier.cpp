#include "prefmod/model/premier.hpp"

#include <cmath>

#include "prefmod/core/error.hpp"
#include "prefmod/core/ops.hpp"

namespace prefmod::model {

namespace {

Var zeros(Tape& tape, std::size_t rows, std::size_t cols) { return tape.constant(Tensor::zeros({rows, cols})); }

}  // namespace

DeltaSet preference_deltas(Binder& w, const ModelSpec& spec, const Var& e_u, std::span<const synth::Prompt> prompts) {
    const std::size_t b = prompts.size();
    const BackboneConfig& bb = spec.backbone;
    std::vector<synth::Prompt> adapter_prompts(prompts.begin(), prompts.end());
    if (!spec.conditioning.prompt_modulation) adapter_prompts.assign(b, synth::Prompt::empty());
    const TextEncoding text = encode_prompts(w, bb, adapter_prompts);
    DeltaSet d;
    d.shared = spec.conditioning.use_shared ? shared_delta(w, spec.adapters, bb, e_u, text.token_embeds)
                                            : zeros(w.tape(), b * kTextTokens, bb.d_mod);
    d.distinct = spec.conditioning.use_distinct ? distinct_delta(w, spec.adapters, bb, e_u, text.token_embeds)
                                                : zeros(w.tape(), b * kTextTokens, bb.blocks * bb.d_mod);
    return d;
}

AnchorDeltas anchor_deltas(Binder& w, const ModelSpec& spec, const Var& e_u, DeltaFlatten flatten) {
    const std::size_t b = e_u.shape().at(0) / spec.adapters.tokens;
    const std::vector<synth::Prompt> empty(b, synth::Prompt::empty());
    const TextEncoding text = encode_prompts(w, spec.backbone, empty);
    AnchorDeltas a;
    a.shared = flatten_deltas(shared_delta(w, spec.adapters, spec.backbone, e_u, text.token_embeds), kTextTokens, flatten);
    a.distinct =
        flatten_deltas(distinct_delta(w, spec.adapters, spec.backbone, e_u, text.token_embeds), kTextTokens, flatten);
    return a;
}

double separation_metric(const ParamStore& params, const ModelSpec& spec, std::span<const Tensor> embeddings) {
    if (embeddings.size() < 2) throw DataError("separation metric needs at least two embeddings");
    Tape tape;
    Binder w(tape, params);
    std::vector<Var> rows;
    for (const Tensor& e : embeddings) rows.push_back(tape.constant(e));
    const Var e_u = ops::concat(rows, 0);
    const std::size_t b = embeddings.size();
    const std::vector<synth::Prompt> empty(b, synth::Prompt::empty());
    const DeltaSet d = preference_deltas(w, ModelSpec{spec.backbone, spec.adapters, {spec.conditioning.use_shared,
                                                                                   spec.conditioning.use_distinct, true}},
                                         e_u, empty);
    const Tensor s = d.shared.value(), dd = d.distinct.value();
    const std::size_t ws = kTextTokens * s.dim(1), wd = kTextTokens * dd.dim(1);
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) {
            double sq = 0.0;
            for (std::size_t k = 0; k < ws; ++k) sq += (s[i * ws + k] - s[j * ws + k]) * (s[i * ws + k] - s[j * ws + k]);
            for (std::size_t k = 0; k < wd; ++k) sq += (dd[i * wd + k] - dd[j * wd + k]) * (dd[i * wd + k] - dd[j * wd + k]);
            total += std::sqrt(sq);
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

}  // namespace prefmod::model
