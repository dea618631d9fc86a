#include "prefmod/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "prefmod/core/error.hpp"
#include "prefmod/core/kernels.hpp"

namespace prefmod::ops {

namespace {

std::vector<double> transposed(std::span<const double> src, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
    }
    return out;
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
    if (x.shape().size() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(x.shape()));
    }
}

enum class Pairing { Same, RightScalar, LeftScalar };

Pairing pairing(const Var& a, const Var& b, const char* op) {
    if (a.shape() == b.shape()) return Pairing::Same;
    if (b.shape().empty()) return Pairing::RightScalar;
    if (a.shape().empty()) return Pairing::LeftScalar;
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    kernels::gemm(m, n, k, a.value().data().data(), k, b.value().data().data(), n, out.data(), n, false);
    Tensor av = a.value(), bv = b.value();
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape()->record("matmul", Tensor({m, n}, std::move(out)), {a, b},
                            [=](std::span<const double> g, Tape& t) {
                                if (t.requires_grad(ia)) {
                                    // dA = dC * B^T
                                    const auto bt = transposed(bv.data(), k, n);
                                    kernels::gemm(m, k, n, g.data(), n, bt.data(), k, t.grad(ia).data(), k, true);
                                }
                                if (t.requires_grad(ib)) {
                                    // dB = A^T * dC
                                    const auto at = transposed(av.data(), m, k);
                                    kernels::gemm(k, n, m, at.data(), m, g.data(), n, t.grad(ib).data(), n, true);
                                }
                            });
}

Var add(const Var& a, const Var& b) {
    const Pairing p = pairing(a, b, "add");
    const Var& full = p == Pairing::LeftScalar ? b : a;
    const std::size_t n = full.numel();
    std::vector<double> out(n);
    if (p == Pairing::Same) {
        kernels::add(n, a.value().data().data(), b.value().data().data(), out.data());
    } else {
        const double s = (p == Pairing::RightScalar ? b : a).value()[0];
        const auto src = full.value().data();
        for (std::size_t i = 0; i < n; ++i) out[i] = src[i] + s;
    }
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape()->record("add", Tensor(full.shape(), std::move(out)), {a, b},
                            [=](std::span<const double> g, Tape& t) {
                                for (std::uint32_t id : {ia, ib}) {
                                    if (!t.requires_grad(id)) continue;
                                    auto dst = t.grad(id);
                                    if (dst.size() == g.size()) {
                                        kernels::axpy(g.size(), 1.0, g.data(), dst.data());
                                    } else {
                                        dst[0] += kernels::sum(g.size(), g.data());
                                    }
                                }
                            });
}

Var sub(const Var& a, const Var& b) {
    const Pairing p = pairing(a, b, "sub");
    const Var& full = p == Pairing::LeftScalar ? b : a;
    const std::size_t n = full.numel();
    std::vector<double> out(n);
    const auto av = a.value().data();
    const auto bv = b.value().data();
    if (p == Pairing::Same) {
        kernels::sub(n, av.data(), bv.data(), out.data());
    } else if (p == Pairing::RightScalar) {
        for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[0];
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = av[0] - bv[i];
    }
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape()->record("sub", Tensor(full.shape(), std::move(out)), {a, b},
                            [=](std::span<const double> g, Tape& t) {
                                const double signs[2] = {1.0, -1.0};
                                const std::uint32_t ids[2] = {ia, ib};
                                for (int s = 0; s < 2; ++s) {
                                    if (!t.requires_grad(ids[s])) continue;
                                    auto dst = t.grad(ids[s]);
                                    if (dst.size() == g.size()) {
                                        kernels::axpy(g.size(), signs[s], g.data(), dst.data());
                                    } else {
                                        dst[0] += signs[s] * kernels::sum(g.size(), g.data());
                                    }
                                }
                            });
}

Var mul(const Var& a, const Var& b) {
    const Pairing p = pairing(a, b, "mul");
    const Var& full = p == Pairing::LeftScalar ? b : a;
    const std::size_t n = full.numel();
    std::vector<double> out(n);
    Tensor av = a.value(), bv = b.value();
    if (p == Pairing::Same) {
        kernels::mul(n, av.data().data(), bv.data().data(), out.data());
    } else {
        const double s = (p == Pairing::RightScalar ? bv : av)[0];
        kernels::scale(n, s, full.value().data().data(), out.data());
    }
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape()->record("mul", Tensor(full.shape(), std::move(out)), {a, b},
                            [=](std::span<const double> g, Tape& t) {
                                // d(a*b)/da = b and vice versa.
                                const std::uint32_t ids[2] = {ia, ib};
                                const Tensor* other[2] = {&bv, &av};
                                for (int s = 0; s < 2; ++s) {
                                    if (!t.requires_grad(ids[s])) continue;
                                    auto dst = t.grad(ids[s]);
                                    const Tensor& o = *other[s];
                                    if (dst.size() == g.size() && o.numel() == g.size()) {
                                        kernels::mul_acc(g.size(), g.data(), o.data().data(), dst.data());
                                    } else if (dst.size() == g.size()) {
                                        kernels::axpy(g.size(), o[0], g.data(), dst.data());
                                    } else {
                                        dst[0] += kernels::dot(g.size(), g.data(), o.data().data());
                                    }
                                }
                            });
}

Var scale(const Var& x, double factor) {
    const std::size_t n = x.numel();
    std::vector<double> out(n);
    kernels::scale(n, factor, x.value().data().data(), out.data());
    const std::uint32_t ix = x.id();
    return x.tape()->record("scale", Tensor(x.shape(), std::move(out)), {x},
                            [=](std::span<const double> g, Tape& t) {
                                kernels::axpy(g.size(), factor, g.data(), t.grad(ix).data());
                            });
}

Var silu(const Var& x) {
    const std::size_t n = x.numel();
    const auto xv = x.value().data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] / (1.0 + std::exp(-xv[i]));
    Tensor xt = x.value();
    const std::uint32_t ix = x.id();
    return x.tape()->record("silu", Tensor(x.shape(), std::move(out)), {x},
                            [=](std::span<const double> g, Tape& t) {
                                auto dst = t.grad(ix);
                                const auto v = xt.data();
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                    const double s = 1.0 / (1.0 + std::exp(-v[i]));
                                    dst[i] += g[i] * s * (1.0 + v[i] * (1.0 - s));
                                }
                            });
}

Var sum(const Var& x) {
    const double total = kernels::sum(x.numel(), x.value().data().data());
    const std::uint32_t ix = x.id();
    return x.tape()->record("sum", Tensor::scalar(total), {x}, [=](std::span<const double> g, Tape& t) {
        auto dst = t.grad(ix);
        for (double& d : dst) d += g[0];
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.numel());
    const double total = kernels::sum(x.numel(), x.value().data().data());
    const std::uint32_t ix = x.id();
    return x.tape()->record("mean", Tensor::scalar(total / n), {x}, [=](std::span<const double> g, Tape& t) {
        auto dst = t.grad(ix);
        const double share = g[0] / n;
        for (double& d : dst) d += share;
    });
}

Var logsumexp(const Var& x) {
    const auto xv = x.value().data();
    const double top = *std::max_element(xv.begin(), xv.end());
    std::vector<double> weights(xv.size());
    double total = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        weights[i] = std::exp(xv[i] - top);
        total += weights[i];
    }
    for (double& w : weights) w /= total;
    const std::uint32_t ix = x.id();
    return x.tape()->record("logsumexp", Tensor::scalar(top + std::log(total)), {x},
                            [ix, weights = std::move(weights)](std::span<const double> g, Tape& t) {
                                kernels::axpy(weights.size(), g[0], weights.data(), t.grad(ix).data());
                            });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    const std::uint32_t ix = x.id();
    return x.tape()->record("reshape", std::move(out), {x}, [=](std::span<const double> g, Tape& t) {
        kernels::axpy(g.size(), 1.0, g.data(), t.grad(ix).data());
    });
}

Var transpose(const Var& x) {
    require_rank(x, 2, "transpose");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    const std::uint32_t ix = x.id();
    return x.tape()->record("transpose", Tensor({c, r}, transposed(x.value().data(), r, c)), {x},
                            [=](std::span<const double> g, Tape& t) {
                                auto dst = t.grad(ix);
                                for (std::size_t i = 0; i < r; ++i) {
                                    for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
                                }
                            });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " + shape_str(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        bool compatible = s.size() == first.size();
        for (std::size_t d = 0; compatible && d < s.size(); ++d) {
            if (d != axis && s[d] != first[d]) compatible = false;
        }
        if (!compatible) {
            throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first) +
                             " along axis " + std::to_string(axis));
        }
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

    const std::size_t out_row = out_shape[axis] * inner;
    std::vector<double> out(outer * out_row);
    std::vector<std::size_t> offsets, widths;
    std::vector<std::uint32_t> ids;
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const std::size_t w = p.shape()[axis] * inner;
        const auto src = p.value().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.data() + o * w, w, out.data() + o * out_row + offset);
        }
        offsets.push_back(offset);
        widths.push_back(w);
        ids.push_back(p.id());
        offset += w;
    }
    return parts[0].tape()->record(
        "concat", Tensor(std::move(out_shape), std::move(out)), parts,
        [=](std::span<const double> g, Tape& t) {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (!t.requires_grad(ids[i])) continue;
                auto dst = t.grad(ids[i]);
                for (std::size_t o = 0; o < outer; ++o) {
                    kernels::axpy(widths[i], 1.0, g.data() + o * out_row + offsets[i], dst.data() + o * widths[i]);
                }
            }
        });
}

std::vector<Var> split(const Var& x, std::size_t axis, std::span<const std::size_t> sizes) {
    const Shape& shape = x.shape();
    if (axis >= shape.size()) {
        throw ShapeError("split: axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
    }
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total != shape[axis]) {
        throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis " + std::to_string(axis) +
                         " of " + shape_str(shape) + " has " + std::to_string(shape[axis]));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    const std::size_t in_row = shape[axis] * inner;
    const auto src = x.value().data();
    const std::uint32_t ix = x.id();

    std::vector<Var> out;
    std::size_t offset = 0;
    for (std::size_t size : sizes) {
        Shape piece_shape = shape;
        piece_shape[axis] = size;
        const std::size_t w = size * inner;
        std::vector<double> piece(outer * w);
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.data() + o * in_row + offset, w, piece.data() + o * w);
        }
        out.push_back(x.tape()->record("split", Tensor(std::move(piece_shape), std::move(piece)), {x},
                                       [=](std::span<const double> g, Tape& t) {
                                           auto dst = t.grad(ix);
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               kernels::axpy(w, 1.0, g.data() + o * w,
                                                             dst.data() + o * in_row + offset);
                                           }
                                       }));
        offset += w;
    }
    return out;
}

Var add_bias(const Var& x, const Var& bias) {
    require_rank(x, 2, "add_bias");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (bias.shape() != Shape{n}) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(x.shape()));
    }
    std::vector<double> out(m * n);
    const auto xv = x.value().data();
    const auto bv = bias.value().data();
    for (std::size_t i = 0; i < m; ++i) kernels::add(n, xv.data() + i * n, bv.data(), out.data() + i * n);
    const std::uint32_t ix = x.id(), ib = bias.id();
    return x.tape()->record("add_bias", Tensor({m, n}, std::move(out)), {x, bias},
                            [=](std::span<const double> g, Tape& t) {
                                if (t.requires_grad(ix)) kernels::axpy(g.size(), 1.0, g.data(), t.grad(ix).data());
                                if (t.requires_grad(ib)) {
                                    auto dst = t.grad(ib);
                                    for (std::size_t i = 0; i < m; ++i) kernels::axpy(n, 1.0, g.data() + i * n, dst.data());
                                }
                            });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
    require_rank(x, 2, "gather_rows");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (rows.empty()) throw ShapeError("gather_rows: empty row list");
    std::vector<double> out(rows.size() * n);
    const auto xv = x.value().data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_str(x.shape()));
        }
        std::copy_n(xv.data() + rows[i] * n, n, out.data() + i * n);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    const std::uint32_t ix = x.id();
    return x.tape()->record("gather_rows", Tensor({rows.size(), n}, std::move(out)), {x},
                            [=, idx = std::move(idx)](std::span<const double> g, Tape& t) {
                                auto dst = t.grad(ix);
                                for (std::size_t i = 0; i < idx.size(); ++i) {
                                    kernels::axpy(n, 1.0, g.data() + i * n, dst.data() + idx[i] * n);
                                }
                            });
}

Var gather(const Var& x, std::span<const std::size_t> index, Shape out_shape) {
    if (shape_numel(out_shape) != index.size()) {
        throw ShapeError("gather: " + std::to_string(index.size()) + " indices for output shape " + shape_str(out_shape));
    }
    const auto xv = x.value().data();
    std::vector<double> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= xv.size()) {
            throw ShapeError("gather: index " + std::to_string(index[i]) + " out of range for " + shape_str(x.shape()));
        }
        out[i] = xv[index[i]];
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    const std::uint32_t ix = x.id();
    return x.tape()->record("gather", Tensor(std::move(out_shape), std::move(out)), {x},
                            [=, idx = std::move(idx)](std::span<const double> g, Tape& t) {
                                auto dst = t.grad(ix);
                                for (std::size_t i = 0; i < idx.size(); ++i) dst[idx[i]] += g[i];
                            });
}

Var softmax_rows(const Var& x) {
    require_rank(x, 2, "softmax_rows");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    const auto xv = x.value().data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xv.data() + i * n;
        double* dst = out.data() + i * n;
        const double top = *std::max_element(row, row + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] = std::exp(row[j] - top);
            total += dst[j];
        }
        for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
    }
    Tensor result({m, n}, std::move(out));
    const std::uint32_t ix = x.id();
    return x.tape()->record("softmax_rows", result, {x}, [=](std::span<const double> g, Tape& t) {
        auto dst = t.grad(ix);
        const auto p = result.data();
        for (std::size_t i = 0; i < m; ++i) {
            const double inner = kernels::dot(n, g.data() + i * n, p.data() + i * n);
            for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += p[i * n + j] * (g[i * n + j] - inner);
        }
    });
}

Var layer_norm(const Var& x, const std::optional<Var>& gain, const std::optional<Var>& bias, double eps) {
    if (x.shape().empty()) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (d < 2) throw ShapeError("layer_norm: last axis must have at least 2 entries, got " + shape_str(x.shape()));
    if (gain && gain->shape() != Shape{d}) throw ShapeError("layer_norm: gain shape " + shape_str(gain->shape()));
    if (bias && bias->shape() != Shape{d}) throw ShapeError("layer_norm: bias shape " + shape_str(bias->shape()));

    const std::size_t rows = x.numel() / d;
    const auto xv = x.value().data();
    std::vector<double> normed(x.numel());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        const double mu = kernels::sum(d, row) / static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) normed[r * d + j] = (row[j] - mu) * inv_std[r];
    }
    std::vector<double> out = normed;
    Tensor gv = gain ? gain->value() : Tensor();
    if (gain || bias) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                double v = normed[r * d + j];
                if (gain) v *= gv[j];
                if (bias) v += bias->value()[j];
                out[r * d + j] = v;
            }
        }
    }
    std::vector<Var> inputs{x};
    if (gain) inputs.push_back(*gain);
    if (bias) inputs.push_back(*bias);
    const std::uint32_t ix = x.id();
    const std::optional<std::uint32_t> ig = gain ? std::optional(gain->id()) : std::nullopt;
    const std::optional<std::uint32_t> ib = bias ? std::optional(bias->id()) : std::nullopt;
    return x.tape()->record(
        "layer_norm", Tensor(x.shape(), std::move(out)), inputs,
        [=, normed = std::move(normed), inv_std = std::move(inv_std)](std::span<const double> g, Tape& t) {
            std::vector<double> dn(d);
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* nr = normed.data() + r * d;
                if (ig && t.requires_grad(*ig)) kernels::mul_acc(d, gr, nr, t.grad(*ig).data());
                if (ib && t.requires_grad(*ib)) kernels::axpy(d, 1.0, gr, t.grad(*ib).data());
                if (!t.requires_grad(ix)) continue;
                for (std::size_t j = 0; j < d; ++j) dn[j] = ig ? gr[j] * gv[j] : gr[j];
                const double mean_dn = kernels::sum(d, dn.data()) * inv_d;
                const double mean_dn_n = kernels::dot(d, dn.data(), nr) * inv_d;
                double* dst = t.grad(ix).data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += inv_std[r] * (dn[j] - mean_dn - nr[j] * mean_dn_n);
            }
        });
}

Var l2_distance(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("l2_distance: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t n = a.numel();
    std::vector<double> diff(n);
    kernels::sub(n, a.value().data().data(), b.value().data().data(), diff.data());
    const double dist = std::sqrt(kernels::dot(n, diff.data(), diff.data()));
    const std::uint32_t ia = a.id(), ib = b.id();
    return a.tape()->record("l2_distance", Tensor::scalar(dist), {a, b},
                            [=, diff = std::move(diff)](std::span<const double> g, Tape& t) {
                                // Subgradient 0 at coincident inputs.
                                if (dist == 0.0) return;
                                const double f = g[0] / dist;
                                if (t.requires_grad(ia)) kernels::axpy(n, f, diff.data(), t.grad(ia).data());
                                if (t.requires_grad(ib)) kernels::axpy(n, -f, diff.data(), t.grad(ib).data());
                            });
}

Var normalize_rows(const Var& x, double eps) {
    require_rank(x, 2, "normalize_rows");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    const double* xv = x.value().data().data();
    std::vector<double> out(rows * cols), inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        inv[r] = 1.0 / std::sqrt(kernels::dot(cols, xv + r * cols, xv + r * cols) + eps);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * inv[r];
    }
    const std::uint32_t ix = x.id();
    const Tensor xt = x.value();
    return x.tape()->record("normalize_rows", Tensor({rows, cols}, std::move(out)), {x},
                            [=, inv = std::move(inv)](std::span<const double> g, Tape& t) {
                                // d/dx (x / r) = g / r - x (x.g) / r^3
                                auto gx = t.grad(ix);
                                const double* xs = xt.data().data();
                                for (std::size_t r = 0; r < rows; ++r) {
                                    const double* xr = xs + r * cols;
                                    const double* gr = g.data() + r * cols;
                                    const double proj = kernels::dot(cols, xr, gr) * inv[r] * inv[r] * inv[r];
                                    for (std::size_t c = 0; c < cols; ++c) {
                                        gx[r * cols + c] += gr[c] * inv[r] - xr[c] * proj;
                                    }
                                }
                            });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::size_t n_seq) {
    require_rank(q, 2, "attention");
    require_rank(k, 2, "attention");
    require_rank(v, 2, "attention");
    const std::size_t width = q.shape()[1];
    if (k.shape() != v.shape() || k.shape()[1] != width) {
        throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()) + " are incompatible");
    }
    if (heads == 0 || width % heads != 0) {
        throw ShapeError("attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                         " heads");
    }
    if (n_seq == 0 || q.shape()[0] % n_seq != 0 || k.shape()[0] % n_seq != 0) {
        throw ShapeError("attention: row counts " + shape_str(q.shape()) + "/" + shape_str(k.shape()) +
                         " not divisible into " + std::to_string(n_seq) + " sequences");
    }
    const std::size_t lq = q.shape()[0] / n_seq, lk = k.shape()[0] / n_seq, dh = width / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor qv = q.value(), kv = k.value(), vv = v.value();
    // probs[(s*heads + h)] is an lq x lk block.
    std::vector<double> probs(n_seq * heads * lq * lk);
    std::vector<double> out(n_seq * lq * width);
    std::vector<double> kt(dh * lk);
    for (std::size_t s = 0; s < n_seq; ++s) {
        for (std::size_t h = 0; h < heads; ++h) {
            const double* qs = qv.data().data() + s * lq * width + h * dh;
            const double* ks = kv.data().data() + s * lk * width + h * dh;
            const double* vs = vv.data().data() + s * lk * width + h * dh;
            for (std::size_t r = 0; r < lk; ++r) {
                for (std::size_t c = 0; c < dh; ++c) kt[c * lk + r] = ks[r * width + c];
            }
            double* p = probs.data() + (s * heads + h) * lq * lk;
            kernels::gemm(lq, lk, dh, qs, width, kt.data(), lk, p, lk, false);
            for (std::size_t i = 0; i < lq; ++i) {
                double* row = p + i * lk;
                double top = row[0] * inv_sqrt;
                for (std::size_t j = 0; j < lk; ++j) {
                    row[j] *= inv_sqrt;
                    top = std::max(top, row[j]);
                }
                double total = 0.0;
                for (std::size_t j = 0; j < lk; ++j) {
                    row[j] = std::exp(row[j] - top);
                    total += row[j];
                }
                for (std::size_t j = 0; j < lk; ++j) row[j] /= total;
            }
            kernels::gemm(lq, dh, lk, p, lk, vs, width, out.data() + s * lq * width + h * dh, width, false);
        }
    }
    const std::uint32_t iq = q.id(), ik = k.id(), iv = v.id();
    return q.tape()->record(
        "attention", Tensor({n_seq * lq, width}, std::move(out)), {q, k, v},
        [=, probs = std::move(probs)](std::span<const double> g, Tape& t) {
            const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
            std::vector<double> vt(dh * lk), dp(lq * lk), pt(lk * lq), dst(lk * lq);
            for (std::size_t s = 0; s < n_seq; ++s) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t qoff = s * lq * width + h * dh;
                    const std::size_t koff = s * lk * width + h * dh;
                    const double* p = probs.data() + (s * heads + h) * lq * lk;
                    const double* go = g.data() + qoff;
                    if (gv) {
                        // dV = P^T dO
                        for (std::size_t i = 0; i < lq; ++i) {
                            for (std::size_t j = 0; j < lk; ++j) pt[j * lq + i] = p[i * lk + j];
                        }
                        kernels::gemm(lk, dh, lq, pt.data(), lq, go, width, t.grad(iv).data() + koff, width, true);
                    }
                    if (!gq && !gk) continue;
                    // dP = dO V^T
                    const double* vs = vv.data().data() + koff;
                    for (std::size_t r = 0; r < lk; ++r) {
                        for (std::size_t c = 0; c < dh; ++c) vt[c * lk + r] = vs[r * width + c];
                    }
                    kernels::gemm(lq, lk, dh, go, width, vt.data(), lk, dp.data(), lk, false);
                    // dS = P (dP - rowsum(dP P)), folded with the 1/sqrt(dh) scale
                    for (std::size_t i = 0; i < lq; ++i) {
                        const double inner = kernels::dot(lk, dp.data() + i * lk, p + i * lk);
                        for (std::size_t j = 0; j < lk; ++j) {
                            dp[i * lk + j] = p[i * lk + j] * (dp[i * lk + j] - inner) * inv_sqrt;
                        }
                    }
                    if (gq) {
                        kernels::gemm(lq, dh, lk, dp.data(), lk, kv.data().data() + koff, width,
                                      t.grad(iq).data() + qoff, width, true);
                    }
                    if (gk) {
                        for (std::size_t i = 0; i < lq; ++i) {
                            for (std::size_t j = 0; j < lk; ++j) dst[j * lq + i] = dp[i * lk + j];
                        }
                        kernels::gemm(lk, dh, lq, dst.data(), lq, qv.data().data() + qoff, width,
                                      t.grad(ik).data() + koff, width, true);
                    }
                }
            }
        });
}

}  // namespace prefmod::ops
