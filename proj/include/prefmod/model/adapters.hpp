#pragma once

// Preference adapters: cross-attention stacks that read a user embedding and
// emit a modulation direction per text token.

#include <cstdint>
#include <span>

#include "prefmod/model/backbone.hpp"

namespace prefmod::model {

struct AdapterConfig {
    std::size_t tokens = 8;   // M, rows of a user embedding
    std::size_t d_user = 64;  // D_u
    std::size_t blocks = 3;
    std::size_t heads = 4;
    std::size_t ffn_mult = 2;
    double embedding_std = 0.02;

    void validate(const BackboneConfig& bb) const;
};

enum class AdapterKind { Shared, Distinct };

// Parameters of both adapters, named "ad.shared.*" and "ad.distinct.*".
ParamStore init_adapters(const AdapterConfig& cfg, const BackboneConfig& bb, std::uint64_t seed);

// n_users embeddings stacked into one (n_users*M) x D_u tensor.
Tensor init_user_bank(const AdapterConfig& cfg, std::size_t n_users, std::uint64_t seed);

// Rows of the listed users, (len(users)*M) x D_u.
Var select_users(const Var& bank, const AdapterConfig& cfg, std::span<const std::size_t> users);

// e_u is (B*M) x D_u, text_tokens (B*3) x d_model. Returns (B*3) x d_mod for
// the shared adapter and (B*3) x (J*d_mod) for the distinct adapter.
Var adapter_delta(Binder& w, AdapterKind kind, const AdapterConfig& cfg, const BackboneConfig& bb, const Var& e_u,
                  const Var& text_tokens);
Var shared_delta(Binder& w, const AdapterConfig& cfg, const BackboneConfig& bb, const Var& e_u, const Var& text_tokens);
Var distinct_delta(Binder& w, const AdapterConfig& cfg, const BackboneConfig& bb, const Var& e_u, const Var& text_tokens);
DeltaSet compute_deltas(Binder& w, const AdapterConfig& cfg, const BackboneConfig& bb, const Var& e_u,
                        const TextEncoding& text);

// y_i^j for one sample: y + shared[token] + distinct[token, block].
// shared is 3 x d_mod and distinct 3 x (J*d_mod).
Tensor compose(const Tensor& y, const Tensor& shared, const Tensor& distinct, std::size_t token, std::size_t block);

// e_new = sum_k alpha[k] * bank[k]. alpha is 1 x K, bank (K*M) x D_u; returns M x D_u.
Var combine(const Var& bank, const Var& alpha, const AdapterConfig& cfg);
Tensor uniform_alpha(std::size_t n_users);

}  // namespace prefmod::model
