#include "prefmod/model/losses.hpp"

#include <set>

#include "prefmod/core/error.hpp"
#include "prefmod/core/ops.hpp"

namespace prefmod::model {

void LossWeights::validate() const {
    if (!(shared >= 0.0) || !(distinct >= 0.0)) throw ConfigError("loss weights must be nonnegative");
}

Tensor interpolate(const Tensor& z0, const Tensor& z1, std::span<const double> t) {
    if (z0.shape() != z1.shape()) {
        throw ShapeError("interpolate: " + shape_str(z0.shape()) + " vs " + shape_str(z1.shape()));
    }
    const std::size_t lead = z0.rank() == 0 ? 1 : z0.dim(0);
    if (t.size() != lead) {
        throw ShapeError("interpolate: " + std::to_string(t.size()) + " timesteps for leading axis " + std::to_string(lead));
    }
    const std::size_t per = z0.numel() / lead;
    std::vector<double> out(z0.numel());
    for (std::size_t b = 0; b < lead; ++b) {
        if (!(t[b] >= 0.0 && t[b] <= 1.0)) throw DataError("interpolate: t = " + std::to_string(t[b]) + " outside [0, 1]");
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = (1.0 - t[b]) * z0[i] + t[b] * z1[i];
    }
    return Tensor(z0.shape(), std::move(out));
}

Tensor interpolate(const Tensor& z0, const Tensor& z1, double t) {
    if (z0.shape() != z1.shape()) {
        throw ShapeError("interpolate: " + shape_str(z0.shape()) + " vs " + shape_str(z1.shape()));
    }
    const std::vector<double> ts(z0.rank() == 0 ? 1 : z0.dim(0), t);
    return interpolate(z0, z1, ts);
}

Var flow_loss(const Var& v_pred, const Tensor& z0, const Tensor& z1) {
    if (z0.shape() != z1.shape() || v_pred.shape() != z0.shape()) {
        throw ShapeError("flow_loss: prediction " + shape_str(v_pred.shape()) + " vs targets " + shape_str(z0.shape()) +
                         " / " + shape_str(z1.shape()));
    }
    std::vector<double> target(z0.numel());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = z1[i] - z0[i];
    const Var diff = ops::sub(v_pred, v_pred.tape()->constant(Tensor(z0.shape(), std::move(target))));
    return ops::mean(ops::mul(diff, diff));
}

Var flatten_deltas(const Var& deltas, std::size_t tokens, DeltaFlatten mode) {
    const Shape& s = deltas.shape();
    if (s.size() != 2 || tokens == 0 || s[0] % tokens != 0) {
        throw ShapeError("flatten_deltas: " + shape_str(s) + " is not (B*" + std::to_string(tokens) + ") x width");
    }
    const std::size_t b = s[0] / tokens;
    if (mode == DeltaFlatten::Concat) return ops::reshape(deltas, {b, tokens * s[1]});
    std::vector<double> avg(b * s[0], 0.0);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t k = 0; k < tokens; ++k) avg[r * s[0] + r * tokens + k] = 1.0 / static_cast<double>(tokens);
    }
    return ops::matmul(deltas.tape()->constant(Tensor({b, s[0]}, std::move(avg))), deltas);
}

Var dispersion_loss(const Var& flat_deltas, std::span<const std::uint64_t> user_ids) {
    const Shape& s = flat_deltas.shape();
    if (s.size() != 2 || s[0] != user_ids.size()) {
        throw ShapeError("dispersion_loss: " + shape_str(s) + " deltas for " + std::to_string(user_ids.size()) + " users");
    }
    if (std::set<std::uint64_t>(user_ids.begin(), user_ids.end()).size() < 2) {
        throw DataError("dispersion_loss needs at least two distinct users in the batch");
    }
    const std::size_t b = s[0];
    std::vector<Var> rows;
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx[1] = {i};
        rows.push_back(ops::gather_rows(flat_deltas, idx));
    }
    std::vector<Var> per_anchor;
    for (std::size_t a = 0; a < b; ++a) {
        std::vector<Var> neg;
        for (std::size_t o = 0; o < b; ++o) {
            if (user_ids[o] == user_ids[a]) continue;
            neg.push_back(ops::reshape(ops::scale(ops::l2_distance(rows[a], rows[o]), -1.0), {1}));
        }
        per_anchor.push_back(ops::reshape(ops::logsumexp(ops::concat(neg, 0)), {1}));
    }
    return ops::mean(ops::concat(per_anchor, 0));
}

Var total_loss(const Var& flow, const Var& disp_shared, const Var& disp_distinct, const LossWeights& weights) {
    weights.validate();
    return ops::add(flow, ops::add(ops::scale(disp_shared, weights.shared), ops::scale(disp_distinct, weights.distinct)));
}

}  // namespace prefmod::model
