#include "prefmod/model/backbone.hpp"

#include <cmath>
#include <string>

#include "prefmod/core/error.hpp"
#include "prefmod/core/ops.hpp"
#include "prefmod/model/nn.hpp"

namespace prefmod::model {

namespace {

std::string blk(std::size_t j) { return "bb.blk" + std::to_string(j); }

Tensor averaging_matrix(std::size_t rows, std::size_t group) {
    std::vector<double> m(rows * rows * group, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t g = 0; g < group; ++g) m[r * rows * group + r * group + g] = 1.0 / static_cast<double>(group);
    }
    return Tensor({rows, rows * group}, std::move(m));
}

}  // namespace

void BackboneConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("backbone: " + msg); };
    if (blocks == 0) fail("blocks must be positive");
    if (d_model == 0 || heads == 0 || d_model % heads != 0) fail("d_model must be a positive multiple of heads");
    if (d_mod == 0 || d_pool == 0) fail("d_mod and d_pool must be positive");
    if (d_pool % 2 != 0) fail("d_pool must be even for the sinusoidal timestep embedding");
    if (patch == 0 || image_size == 0 || image_size % patch != 0) fail("image_size must be divisible by patch");
    if (channels == 0 || ffn_mult == 0) fail("channels and ffn_mult must be positive");
}

ParamStore init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed({seed, 0xBAC4B0}));
    ParamStore s;
    const std::size_t d = cfg.d_model;
    s.set("bb.tok", rng.normal_tensor({synth::kVocabSize, d}, 0.3));
    s.set("bb.txt_pos", rng.normal_tensor({kTextTokens, d}, 0.1));
    init_linear(s, "bb.pool", d, cfg.d_pool, rng);
    init_linear(s, "bb.mp.l1", cfg.d_pool, cfg.d_mod, rng);
    init_linear(s, "bb.mp.l2", cfg.d_mod, cfg.d_mod, rng);
    init_linear(s, "bb.mt.l1", cfg.d_pool, cfg.d_mod, rng);
    init_linear(s, "bb.mt.l2", cfg.d_mod, cfg.d_mod, rng);
    init_linear(s, "bb.patch_in", cfg.patch_dim(), d, rng);
    s.set("bb.img_pos", rng.normal_tensor({cfg.n_patches(), d}, 0.1));
    for (std::size_t j = 0; j < cfg.blocks; ++j) {
        init_linear(s, blk(j) + ".mod", cfg.d_mod, 6 * d, rng, 0.3);
        init_linear(s, blk(j) + ".qkv", d, 3 * d, rng);
        init_linear(s, blk(j) + ".out", d, d, rng);
        init_linear(s, blk(j) + ".ff1", d, cfg.ffn_mult * d, rng);
        init_linear(s, blk(j) + ".ff2", cfg.ffn_mult * d, d, rng);
    }
    init_linear(s, "bb.final.mod", cfg.d_mod, 2 * d, rng, 0.3);
    init_linear(s, "bb.final.out", d, cfg.patch_dim(), rng, 0.0);
    return s;
}

TextEncoding encode_prompts(Binder& w, const BackboneConfig& cfg, std::span<const synth::Prompt> prompts) {
    if (prompts.empty()) throw ShapeError("encode_prompts: empty batch");
    const std::size_t b = prompts.size();
    std::vector<std::size_t> ids, slots;
    for (const auto& p : prompts) {
        const auto tokens = p.tokens();
        for (std::size_t i = 0; i < kTextTokens; ++i) {
            if (tokens[i] >= synth::kVocabSize) throw DataError("encode_prompts: unknown token id " + std::to_string(tokens[i]));
            ids.push_back(tokens[i]);
            slots.push_back(i);
        }
    }
    TextEncoding enc;
    enc.batch = b;
    enc.token_embeds = ops::add(ops::gather_rows(w("bb.tok"), ids), ops::gather_rows(w("bb.txt_pos"), slots));
    const Var avg = w.tape().constant(averaging_matrix(b, kTextTokens));
    enc.pooled = linear(w, "bb.pool", ops::matmul(avg, enc.token_embeds));
    (void)cfg;
    return enc;
}

Tensor timestep_embedding(const BackboneConfig& cfg, std::span<const double> t) {
    const std::size_t half = cfg.d_pool / 2;
    std::vector<double> out(t.size() * cfg.d_pool);
    for (std::size_t r = 0; r < t.size(); ++r) {
        if (!(t[r] >= 0.0 && t[r] <= 1.0)) throw DataError("timestep " + std::to_string(t[r]) + " outside [0, 1]");
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = t[r] * cfg.time_scale * freq;
            out[r * cfg.d_pool + i] = std::sin(arg);
            out[r * cfg.d_pool + half + i] = std::cos(arg);
        }
    }
    return Tensor({t.size(), cfg.d_pool}, std::move(out));
}

Var pooled_branch(Binder& w, const Var& pooled) { return linear(w, "bb.mp.l2", ops::silu(linear(w, "bb.mp.l1", pooled))); }

Var time_branch(Binder& w, const Var& t_embed) { return linear(w, "bb.mt.l2", ops::silu(linear(w, "bb.mt.l1", t_embed))); }

Var base_modulation(Binder& w, const BackboneConfig& cfg, const Var& pooled, std::span<const double> t) {
    if (pooled.shape().at(0) != t.size()) {
        throw ShapeError("base_modulation: " + std::to_string(t.size()) + " timesteps for " +
                         std::to_string(pooled.shape().at(0)) + " pooled rows");
    }
    const Var te = w.tape().constant(timestep_embedding(cfg, t));
    return ops::add(pooled_branch(w, pooled), time_branch(w, te));
}

BlockModulation block_modulation(Binder& w, const BackboneConfig& cfg, std::size_t block, const Var& y_rows) {
    const Var mod = linear(w, blk(block) + ".mod", y_rows);
    const std::vector<std::size_t> sizes(6, cfg.d_model);
    const auto p = ops::split(mod, 1, sizes);
    return {p[0], p[1], p[2], p[3], p[4], p[5]};
}

Var modulate(const Var& x, const Var& shift, const Var& scale) {
    const Var h = ops::layer_norm(x);
    return ops::add(ops::add(h, ops::mul(h, scale)), shift);
}

namespace {

Var run_block(Binder& w, const BackboneConfig& cfg, std::size_t block, const Var& x, const Var& mod_rows,
              std::size_t batch, ModulationTrace* trace) {
    if (trace != nullptr) trace->blocks.push_back(mod_rows.value());
    const std::vector<std::size_t> six(6, cfg.d_model);
    const auto m = ops::split(mod_rows, 1, six);
    const std::string name = blk(block);

    const Var ha = modulate(x, m[0], m[1]);
    const std::vector<std::size_t> three(3, cfg.d_model);
    const auto qkv = ops::split(linear(w, name + ".qkv", ha), 1, three);
    const Var attn = linear(w, name + ".out", ops::attention(qkv[0], qkv[1], qkv[2], cfg.heads, batch));
    const Var x1 = ops::add(x, ops::mul(m[2], attn));

    const Var hf = modulate(x1, m[3], m[4]);
    const Var ff = linear(w, name + ".ff2", ops::silu(linear(w, name + ".ff1", hf)));
    return ops::add(x1, ops::mul(m[5], ff));
}

}  // namespace

Var joint_block(Binder& w, const BackboneConfig& cfg, std::size_t block, const Var& x, const Var& y_rows,
                std::size_t batch, ModulationTrace* trace) {
    if (x.shape().size() != 2 || y_rows.shape().size() != 2 || x.shape()[0] != y_rows.shape()[0]) {
        throw ShapeError("joint_block: " + shape_str(x.shape()) + " tokens with " + shape_str(y_rows.shape()) +
                         " modulation vectors");
    }
    return run_block(w, cfg, block, x, linear(w, blk(block) + ".mod", y_rows), batch, trace);
}

std::vector<std::size_t> patchify_index(const BackboneConfig& cfg, std::size_t batch) {
    const std::size_t s = cfg.image_size, p = cfg.patch, ps = cfg.patches_per_side(), c = cfg.channels;
    std::vector<std::size_t> idx;
    idx.reserve(batch * cfg.image_numel());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t py = 0; py < ps; ++py) {
            for (std::size_t px = 0; px < ps; ++px) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    for (std::size_t dy = 0; dy < p; ++dy) {
                        for (std::size_t dx = 0; dx < p; ++dx) {
                            idx.push_back(b * c * s * s + ch * s * s + (py * p + dy) * s + px * p + dx);
                        }
                    }
                }
            }
        }
    }
    return idx;
}

std::vector<std::size_t> unpatchify_index(const BackboneConfig& cfg, std::size_t batch) {
    const auto fwd = patchify_index(cfg, batch);
    std::vector<std::size_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
    return inv;
}

namespace {

std::size_t image_batch(const BackboneConfig& cfg, const Shape& s) {
    if (s.size() != 4 || s[1] != cfg.channels || s[2] != cfg.image_size || s[3] != cfg.image_size) {
        throw ShapeError("expected B x " + std::to_string(cfg.channels) + " x " + std::to_string(cfg.image_size) + " x " +
                         std::to_string(cfg.image_size) + " images, got " + shape_str(s));
    }
    return s[0];
}

std::size_t token_batch(const BackboneConfig& cfg, const Shape& s) {
    if (s.size() != 2 || s[1] != cfg.patch_dim() || s[0] % cfg.n_patches() != 0) {
        throw ShapeError("expected (B*" + std::to_string(cfg.n_patches()) + ") x " + std::to_string(cfg.patch_dim()) +
                         " patch tokens, got " + shape_str(s));
    }
    return s[0] / cfg.n_patches();
}

Tensor gather_tensor(const Tensor& x, const std::vector<std::size_t>& idx, Shape shape) {
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
    return Tensor(std::move(shape), std::move(out));
}

}  // namespace

Var patchify(const BackboneConfig& cfg, const Var& images) {
    const std::size_t b = image_batch(cfg, images.shape());
    return ops::gather(images, patchify_index(cfg, b), {b * cfg.n_patches(), cfg.patch_dim()});
}

Var unpatchify(const BackboneConfig& cfg, const Var& tokens) {
    const std::size_t b = token_batch(cfg, tokens.shape());
    return ops::gather(tokens, unpatchify_index(cfg, b), {b, cfg.channels, cfg.image_size, cfg.image_size});
}

Tensor patchify(const BackboneConfig& cfg, const Tensor& images) {
    const std::size_t b = image_batch(cfg, images.shape());
    return gather_tensor(images, patchify_index(cfg, b), {b * cfg.n_patches(), cfg.patch_dim()});
}

Tensor unpatchify(const BackboneConfig& cfg, const Tensor& tokens) {
    const std::size_t b = token_batch(cfg, tokens.shape());
    return gather_tensor(tokens, unpatchify_index(cfg, b), {b, cfg.channels, cfg.image_size, cfg.image_size});
}

Var velocity(Binder& w, const BackboneConfig& cfg, const Var& z_t, const TextEncoding& text, std::span<const double> t,
             const DeltaSet* deltas, ModulationTrace* trace) {
    const std::size_t b = image_batch(cfg, z_t.shape());
    const std::size_t np = cfg.n_patches(), seq = cfg.seq_len(), nt = kTextTokens;
    if (text.batch != b || text.token_embeds.shape() != Shape{b * nt, cfg.d_model}) {
        throw ShapeError("velocity: text encoding for batch " + std::to_string(text.batch) + " with images of batch " +
                         std::to_string(b));
    }
    if (t.size() != b) throw ShapeError("velocity: " + std::to_string(t.size()) + " timesteps for batch " + std::to_string(b));
    std::vector<Var> distinct;
    if (deltas != nullptr) {
        const Shape want_shared{b * nt, cfg.d_mod}, want_distinct{b * nt, cfg.blocks * cfg.d_mod};
        if (deltas->shared.shape() != want_shared || deltas->distinct.shape() != want_distinct) {
            throw ShapeError("velocity: deltas " + shape_str(deltas->shared.shape()) + " / " +
                             shape_str(deltas->distinct.shape()) + " do not match " + shape_str(want_shared) + " / " +
                             shape_str(want_distinct));
        }
        const std::vector<std::size_t> sizes(cfg.blocks, cfg.d_mod);
        distinct = ops::split(deltas->distinct, 1, sizes);
    }

    const Var y = base_modulation(w, cfg, text.pooled, t);

    std::vector<std::size_t> pos_rows(b * np), seq_index(b * seq), mod_index(b * seq), image_rows(b * np);
    for (std::size_t i = 0; i < b * np; ++i) pos_rows[i] = i % np;
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < seq; ++i) {
            const std::size_t row = s * seq + i;
            seq_index[row] = i < nt ? s * nt + i : b * nt + s * np + (i - nt);
            mod_index[row] = i < nt ? s * nt + i : b * nt + s;
            if (i >= nt) image_rows[s * np + (i - nt)] = row;
        }
    }

    const Var img = ops::add(linear(w, "bb.patch_in", patchify(cfg, z_t)), ops::gather_rows(w("bb.img_pos"), pos_rows));
    const Var joined = ops::concat(std::vector<Var>{text.token_embeds, img}, 0);
    Var x = ops::gather_rows(joined, seq_index);

    const Var y_txt_base = repeat_rows(y, nt);
    const Var text_avg = w.tape().constant(averaging_matrix(b, nt));
    for (std::size_t j = 0; j < cfg.blocks; ++j) {
        Var y_txt = y_txt_base;
        Var y_img = y;
        if (deltas != nullptr) {
            const Var delta = ops::add(deltas->shared, distinct[j]);
            y_txt = ops::add(y_txt_base, delta);
            if (cfg.modulate_image_tokens) y_img = ops::add(y, ops::matmul(text_avg, delta));
        }
        const Var compact = linear(w, blk(j) + ".mod", ops::concat(std::vector<Var>{y_txt, y_img}, 0));
        x = run_block(w, cfg, j, x, ops::gather_rows(compact, mod_index), b, trace);
    }

    const Var fin = linear(w, "bb.final.mod", y);
    const std::vector<std::size_t> two(2, cfg.d_model);
    const auto sm = ops::split(repeat_rows(fin, np), 1, two);
    const Var h = modulate(ops::gather_rows(x, image_rows), sm[0], sm[1]);
    return unpatchify(cfg, linear(w, "bb.final.out", h));
}

}  // namespace prefmod::model
