#pragma once

// Finite-difference check of the combined stage-1 objective through the
// backbone, both adapters, bank rows and combination coefficients.

#include "gradcheck.hpp"
#include "prefmod/core/ops.hpp"
#include "prefmod/model/adapters.hpp"
#include "prefmod/model/losses.hpp"
#include "prefmod/model/nn.hpp"
#include "tiny_model.hpp"

namespace prefmod::testing {

// radius > 0 projects the anchors onto a sphere as the trainer does.
// max_per_tensor > 0 checks a strided subset whose start rotates with seed.
inline GradCheckResult full_loss_gradcheck(std::uint64_t seed, double radius = 0.0, std::size_t max_per_tensor = 0) {
    using namespace prefmod::model;
    const BackboneConfig c = tiny_backbone();
    const AdapterConfig ac = tiny_adapters();
    ParamStore all = init_backbone(c, seed);
    all.merge(init_adapters(ac, c, seed));
    all.set("user.bank", init_user_bank(ac, 3, seed));
    all.set("user.alpha", Tensor({1, 3}, {0.5, -0.3, 0.9}));
    all = randomized(all, seed + 100, 0.3);
    Rng rng(seed + 1);
    const Tensor z0 = rng.normal_tensor({2, c.channels, c.image_size, c.image_size});
    const Tensor z1 = rng.normal_tensor({2, c.channels, c.image_size, c.image_size});
    const std::vector<double> t = {0.3, 0.8};
    const Tensor zt = interpolate(z0, z1, t);
    const std::vector<std::uint64_t> ids = {0, 1};
    const std::vector<synth::Prompt> prompts = {synth::Prompt::parse("circle two left"),
                                                synth::Prompt::parse("cross three right")};

    auto cap = [&](const Var& x) {
        return radius > 0.0 ? ops::scale(ops::normalize_rows(x), radius) : x;
    };
    auto loss_fn = [&](Binder& w) {
        const TextEncoding enc = encode_prompts(w, c, prompts);
        const std::size_t sel[1] = {2};
        const Var mixed = combine(w("user.bank"), w("user.alpha"), ac);
        const Var e_u = ops::concat(std::vector<Var>{select_users(w("user.bank"), ac, sel), mixed}, 0);
        const DeltaSet d = compute_deltas(w, ac, c, e_u, enc);
        const Var v = velocity(w, c, w.tape().constant(zt), enc, t, &d);
        const std::vector<synth::Prompt> empty(2, synth::Prompt::empty());
        const TextEncoding anchor = encode_prompts(w, c, empty);
        const DeltaSet da = compute_deltas(w, ac, c, e_u, anchor);
        const Var ds = dispersion_loss(cap(flatten_deltas(da.shared, 3, DeltaFlatten::Concat)), ids);
        const Var dd = dispersion_loss(cap(flatten_deltas(da.distinct, 3, DeltaFlatten::Concat)), ids);
        return total_loss(flow_loss(v, z0, z1), ds, dd, LossWeights{});
    };
    return store_gradcheck(loss_fn, all, 1e-5, max_per_tensor, 1e-4, seed);
}

}  // namespace prefmod::testing
