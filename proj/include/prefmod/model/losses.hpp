#pragma once

#include <cstdint>
#include <span>

#include "prefmod/core/tape.hpp"

namespace prefmod::model {

struct LossWeights {
    double shared = 0.1;
    double distinct = 0.1;

    void validate() const;  // throws ConfigError on negative weights
};

// How a per-user delta (tokens x width) is reduced to one vector for the dispersion distance.
enum class DeltaFlatten { Concat, TokenMean };

// z_t = (1 - t) z0 + t z1 with one t per leading-axis slice.
Tensor interpolate(const Tensor& z0, const Tensor& z1, std::span<const double> t);
Tensor interpolate(const Tensor& z0, const Tensor& z1, double t);

// Element mean of (v_pred - (z1 - z0))^2.
Var flow_loss(const Var& v_pred, const Tensor& z0, const Tensor& z1);

// deltas is (B*tokens) x width, one block of `tokens` rows per batch item.
// Returns B x F with F = tokens*width (Concat) or width (TokenMean).
Var flatten_deltas(const Var& deltas, std::size_t tokens, DeltaFlatten mode);

// Mean over anchors a of log sum_{b: id_b != id_a} exp(-||d_a - d_b||).
// Throws DataError when fewer than two distinct users are present.
Var dispersion_loss(const Var& flat_deltas, std::span<const std::uint64_t> user_ids);

Var total_loss(const Var& flow, const Var& disp_shared, const Var& disp_distinct, const LossWeights& weights);

}  // namespace prefmod::model
