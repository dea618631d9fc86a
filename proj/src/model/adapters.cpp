#include "prefmod/model/adapters.hpp"

#include "prefmod/core/error.hpp"
#include "prefmod/core/ops.hpp"
#include "prefmod/model/nn.hpp"

namespace prefmod::model {

namespace {

std::string prefix(AdapterKind kind) { return kind == AdapterKind::Shared ? "ad.shared" : "ad.distinct"; }

std::size_t out_dim(AdapterKind kind, const BackboneConfig& bb) {
    return kind == AdapterKind::Shared ? bb.d_mod : bb.blocks * bb.d_mod;
}

}  // namespace

void AdapterConfig::validate(const BackboneConfig& bb) const {
    if (tokens == 0 || d_user == 0) throw ConfigError("adapters: embedding shape must be positive");
    if (blocks == 0) throw ConfigError("adapters: need at least one attention block");
    if (heads == 0 || bb.d_model % heads != 0) throw ConfigError("adapters: backbone d_model must be divisible by heads");
    if (ffn_mult == 0) throw ConfigError("adapters: ffn_mult must be positive");
    if (!(embedding_std > 0.0)) throw ConfigError("adapters: embedding_std must be positive");
}

ParamStore init_adapters(const AdapterConfig& cfg, const BackboneConfig& bb, std::uint64_t seed) {
    cfg.validate(bb);
    const std::size_t d = bb.d_model;
    ParamStore s;
    for (AdapterKind kind : {AdapterKind::Shared, AdapterKind::Distinct}) {
        Rng rng(derive_seed({seed, 0xADA97, static_cast<std::uint64_t>(kind)}));
        const std::string p = prefix(kind);
        for (std::size_t i = 0; i < cfg.blocks; ++i) {
            const std::string b = p + ".b" + std::to_string(i);
            init_linear(s, b + ".q", d, d, rng);
            init_linear(s, b + ".kv", cfg.d_user, 2 * d, rng);
            init_linear(s, b + ".o", d, d, rng);
            init_linear(s, b + ".ff1", d, cfg.ffn_mult * d, rng);
            init_linear(s, b + ".ff2", cfg.ffn_mult * d, d, rng);
        }
        init_linear(s, p + ".head", d, out_dim(kind, bb), rng, 0.0);
    }
    return s;
}

Tensor init_user_bank(const AdapterConfig& cfg, std::size_t n_users, std::uint64_t seed) {
    if (n_users == 0) throw ConfigError("user bank needs at least one user");
    Rng rng(derive_seed({seed, 0xE5E4}));
    return rng.normal_tensor({n_users * cfg.tokens, cfg.d_user}, cfg.embedding_std);
}

Var select_users(const Var& bank, const AdapterConfig& cfg, std::span<const std::size_t> users) {
    const std::size_t n = bank.shape().at(0) / cfg.tokens;
    std::vector<std::size_t> rows;
    rows.reserve(users.size() * cfg.tokens);
    for (std::size_t u : users) {
        if (u >= n) throw ShapeError("select_users: user index " + std::to_string(u) + " outside bank of " + std::to_string(n));
        for (std::size_t m = 0; m < cfg.tokens; ++m) rows.push_back(u * cfg.tokens + m);
    }
    return ops::gather_rows(bank, rows);
}

Var adapter_delta(Binder& w, AdapterKind kind, const AdapterConfig& cfg, const BackboneConfig& bb, const Var& e_u,
                  const Var& text_tokens) {
    const std::size_t d = bb.d_model;
    const Shape& es = e_u.shape();
    const Shape& ts = text_tokens.shape();
    if (es.size() != 2 || es[1] != cfg.d_user || es[0] % cfg.tokens != 0) {
        throw ShapeError("adapter: user embedding must be (B*" + std::to_string(cfg.tokens) + ") x " +
                         std::to_string(cfg.d_user) + ", got " + shape_str(es));
    }
    const std::size_t batch = es[0] / cfg.tokens;
    if (ts.size() != 2 || ts[1] != d || ts[0] != batch * kTextTokens) {
        throw ShapeError("adapter: text tokens " + shape_str(ts) + " do not match " + std::to_string(batch) +
                         " user embeddings");
    }
    const std::string p = prefix(kind);
    const Var kv_in = ops::layer_norm(e_u);
    const std::vector<std::size_t> two(2, d);
    Var h = text_tokens;
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::string b = p + ".b" + std::to_string(i);
        const Var q = linear(w, b + ".q", ops::layer_norm(h));
        const auto kv = ops::split(linear(w, b + ".kv", kv_in), 1, two);
        h = ops::add(h, linear(w, b + ".o", ops::attention(q, kv[0], kv[1], cfg.heads, batch)));
        h = ops::add(h, linear(w, b + ".ff2", ops::silu(linear(w, b + ".ff1", ops::layer_norm(h)))));
    }
    return linear(w, p + ".head", ops::layer_norm(h));
}

Var shared_delta(Binder& w, const AdapterConfig& cfg, const BackboneConfig& bb, const Var& e_u, const Var& text_tokens) {
    return adapter_delta(w, AdapterKind::Shared, cfg, bb, e_u, text_tokens);
}

Var distinct_delta(Binder& w, const AdapterConfig& cfg, const BackboneConfig& bb, const Var& e_u,
                   const Var& text_tokens) {
    return adapter_delta(w, AdapterKind::Distinct, cfg, bb, e_u, text_tokens);
}

DeltaSet compute_deltas(Binder& w, const AdapterConfig& cfg, const BackboneConfig& bb, const Var& e_u,
                        const TextEncoding& text) {
    return {shared_delta(w, cfg, bb, e_u, text.token_embeds), distinct_delta(w, cfg, bb, e_u, text.token_embeds)};
}

Tensor compose(const Tensor& y, const Tensor& shared, const Tensor& distinct, std::size_t token, std::size_t block) {
    const std::size_t d = y.numel();
    if (shared.rank() != 2 || shared.dim(1) != d || distinct.rank() != 2 || distinct.dim(1) % d != 0 ||
        distinct.dim(0) != shared.dim(0)) {
        throw ShapeError("compose: deltas " + shape_str(shared.shape()) + " / " + shape_str(distinct.shape()) +
                         " do not match y of size " + std::to_string(d));
    }
    const std::size_t blocks = distinct.dim(1) / d;
    if (token >= shared.dim(0)) throw std::out_of_range("compose: token " + std::to_string(token) + " out of range");
    if (block >= blocks) throw std::out_of_range("compose: block " + std::to_string(block) + " out of range");
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) {
        out[i] = y[i] + shared.at(token, i) + distinct.at(token, block * d + i);
    }
    return Tensor(y.shape(), std::move(out));
}

Var combine(const Var& bank, const Var& alpha, const AdapterConfig& cfg) {
    const std::size_t rows = bank.shape().at(0);
    if (bank.shape().size() != 2 || bank.shape()[1] != cfg.d_user || rows % cfg.tokens != 0) {
        throw ShapeError("combine: bank shape " + shape_str(bank.shape()) + " is not (K*M) x D_u");
    }
    const std::size_t k = rows / cfg.tokens;
    if (alpha.shape() != Shape{1, k}) {
        throw ShapeError("combine: " + shape_str(alpha.shape()) + " coefficients for a bank of " + std::to_string(k) +
                         " users");
    }
    const Var flat = ops::reshape(bank, {k, cfg.tokens * cfg.d_user});
    return ops::reshape(ops::matmul(alpha, flat), {cfg.tokens, cfg.d_user});
}

Tensor uniform_alpha(std::size_t n_users) {
    return Tensor::full({1, n_users}, 1.0 / static_cast<double>(n_users));
}

}  // namespace prefmod::model
