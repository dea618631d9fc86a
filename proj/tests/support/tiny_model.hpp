#pragma once

#include "prefmod/core/rng.hpp"
#include "prefmod/model/adapters.hpp"

namespace prefmod::testing {

inline model::BackboneConfig tiny_backbone() {
    model::BackboneConfig c;
    c.blocks = 2;
    c.d_model = 8;
    c.heads = 2;
    c.d_mod = 8;
    c.d_pool = 8;
    c.patch = 4;
    c.image_size = 8;
    c.ffn_mult = 2;
    return c;
}

inline model::AdapterConfig tiny_adapters() {
    model::AdapterConfig c;
    c.tokens = 3;
    c.d_user = 4;
    c.blocks = 3;
    c.heads = 2;
    c.ffn_mult = 2;
    return c;
}

// Adds N(0, stddev) noise to every tensor so zero-initialized heads become live.
inline ParamStore randomized(const ParamStore& store, std::uint64_t seed, double stddev = 0.3) {
    ParamStore out;
    Rng rng(seed);
    for (const auto& [name, t] : store.tensors()) {
        auto v = t.to_vector();
        for (double& x : v) x += rng.normal(stddev);
        out.set(name, Tensor(t.shape(), std::move(v)));
    }
    return out;
}

}  // namespace prefmod::testing
