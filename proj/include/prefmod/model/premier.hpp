#pragma once

// The assembled preference-conditioned model: frozen backbone plus adapters,
// with the switches used by the ablation variants.

#include <span>

#include "prefmod/model/adapters.hpp"
#include "prefmod/model/losses.hpp"

namespace prefmod::model {

struct ConditioningConfig {
    bool use_shared = true;
    bool use_distinct = true;
    bool prompt_modulation = true;  // false feeds EMPTY to the adapters instead of the prompt
};

struct ModelSpec {
    BackboneConfig backbone;
    AdapterConfig adapters;
    ConditioningConfig conditioning;
};

// Deltas for a batch. e_u is (B*M) x D_u and prompts has B entries. Disabled
// adapters contribute exact zeros.
DeltaSet preference_deltas(Binder& w, const ModelSpec& spec, const Var& e_u, std::span<const synth::Prompt> prompts);

// Deltas of each embedding under the EMPTY prompt, one row per embedding:
// {shared, distinct}, each B x (3 * width) after flattening.
struct AnchorDeltas {
    Var shared;
    Var distinct;
};
AnchorDeltas anchor_deltas(Binder& w, const ModelSpec& spec, const Var& e_u, DeltaFlatten flatten);

// Mean pairwise L2 distance of the EMPTY-prompt deltas (shared and distinct
// concatenated) between the given embeddings, each M x D_u.
double separation_metric(const ParamStore& params, const ModelSpec& spec, std::span<const Tensor> embeddings);

}  // namespace prefmod::model
