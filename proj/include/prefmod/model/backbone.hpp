#pragma once

// Toy joint text/image diffusion transformer predicting a velocity field.
//
// A batch of B samples is laid out as B contiguous sequences of
// kTextTokens text rows followed by n_patches() image rows.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "prefmod/core/params.hpp"
#include "prefmod/synth/prompt.hpp"

namespace prefmod::model {

inline constexpr std::size_t kTextTokens = 3;

struct BackboneConfig {
    std::size_t blocks = 4;  // J
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t d_mod = 64;
    std::size_t d_pool = 32;
    std::size_t patch = 4;
    std::size_t image_size = 16;
    std::size_t channels = 3;
    std::size_t ffn_mult = 2;
    double time_scale = 1000.0;  // t is multiplied by this before the sinusoids
    bool modulate_image_tokens = false;

    void validate() const;  // throws ConfigError
    std::size_t patches_per_side() const { return image_size / patch; }
    std::size_t n_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t patch_dim() const { return channels * patch * patch; }
    std::size_t seq_len() const { return kTextTokens + n_patches(); }
    std::size_t image_numel() const { return channels * image_size * image_size; }
};

ParamStore init_backbone(const BackboneConfig& cfg, std::uint64_t seed);

struct TextEncoding {
    Var token_embeds;  // (B*3) x d_model, rows ordered [shape, count, position] per sample
    Var pooled;        // B x d_pool
    std::size_t batch = 0;
};

// Per-text-token modulation directions for a batch.
struct DeltaSet {
    Var shared;    // (B*3) x d_mod
    Var distinct;  // (B*3) x (J*d_mod), block j in columns [j*d_mod, (j+1)*d_mod)
};

// Values of (shift, scale, gate) for both sublayers, one row per token.
struct BlockModulation {
    Var shift_attn, scale_attn, gate_attn;
    Var shift_ffn, scale_ffn, gate_ffn;
};

// Optional capture of the per-token modulation rows, (B*seq) x 6*d_model per block.
struct ModulationTrace {
    std::vector<Tensor> blocks;
};

TextEncoding encode_prompts(Binder& w, const BackboneConfig& cfg, std::span<const synth::Prompt> prompts);

// Sinusoidal embedding of each t, B x d_pool. Throws DataError for t outside [0, 1].
Tensor timestep_embedding(const BackboneConfig& cfg, std::span<const double> t);

Var pooled_branch(Binder& w, const Var& pooled);  // M_p
Var time_branch(Binder& w, const Var& t_embed);   // M_t
// y = M_p(pooled) + M_t(t), B x d_mod.
Var base_modulation(Binder& w, const BackboneConfig& cfg, const Var& pooled, std::span<const double> t);

// Maps one modulation vector per token to that token's (shift, scale, gate) triples in block j.
BlockModulation block_modulation(Binder& w, const BackboneConfig& cfg, std::size_t block, const Var& y_rows);
// layer_norm(x) * (1 + scale) + shift, row-wise.
Var modulate(const Var& x, const Var& shift, const Var& scale);

// One joint block over all rows of x with per-row modulation vectors.
Var joint_block(Binder& w, const BackboneConfig& cfg, std::size_t block, const Var& x, const Var& y_rows,
                std::size_t batch, ModulationTrace* trace = nullptr);

// z_t is B x C x S x S. Returns the velocity with the same shape.
Var velocity(Binder& w, const BackboneConfig& cfg, const Var& z_t, const TextEncoding& text, std::span<const double> t,
             const DeltaSet* deltas = nullptr, ModulationTrace* trace = nullptr);

// Index maps between a B x C x S x S batch and its (B*n_patches) x patch_dim token matrix.
std::vector<std::size_t> patchify_index(const BackboneConfig& cfg, std::size_t batch);
std::vector<std::size_t> unpatchify_index(const BackboneConfig& cfg, std::size_t batch);
Var patchify(const BackboneConfig& cfg, const Var& images);
Var unpatchify(const BackboneConfig& cfg, const Var& tokens);
Tensor patchify(const BackboneConfig& cfg, const Tensor& images);
Tensor unpatchify(const BackboneConfig& cfg, const Tensor& tokens);

}  // namespace prefmod::model
