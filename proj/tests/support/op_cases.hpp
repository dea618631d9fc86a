#pragma once

// Finite-difference cases covering every differentiable op. Each loss mixes
// the op output with a fixed random projection so that no gradient entry is
// structurally tiny.

#include <vector>

#include "gradcheck.hpp"
#include "prefmod/core/ops.hpp"
#include "prefmod/core/rng.hpp"

namespace prefmod::testing {

struct OpCase {
    const char* name;
    std::vector<Shape> shapes;
    LossFn fn;
};

inline Var project(Tape& t, Var out, std::uint64_t seed) {
    Rng rng(seed);
    auto w = t.constant(rng.normal_tensor(out.shape()));
    return ops::sum(ops::mul(out, w));
}

inline std::vector<OpCase> op_cases() {
    return {
        {"matmul", {{3, 4}, {4, 5}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::matmul(v[0], v[1]), 1); }},
        {"add", {{3, 4}, {3, 4}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::add(v[0], v[1]), 2); }},
        {"sub_scalar", {{3, 4}, {}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::sub(v[0], v[1]), 3); }},
        {"mul", {{3, 4}, {3, 4}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::mul(v[0], v[1]), 4); }},
        {"mul_scalar", {{}, {3, 4}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::mul(v[0], v[1]), 5); }},
        {"scale", {{5}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::scale(v[0], -1.7), 6); }},
        {"silu", {{2, 6}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::silu(v[0]), 7); }},
        {"mean", {{2, 6}}, [](Tape& t, const std::vector<Var>& v) { return ops::mul(ops::mean(v[0]), ops::mean(v[0])); }},
        {"sum", {{4}}, [](Tape& t, const std::vector<Var>& v) { return ops::mul(ops::sum(v[0]), ops::sum(v[0])); }},
        {"logsumexp", {{6}}, [](Tape& t, const std::vector<Var>& v) { return ops::logsumexp(v[0]); }},
        {"reshape", {{2, 6}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::reshape(v[0], {3, 4}), 8); }},
        {"transpose", {{2, 5}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::transpose(v[0]), 9); }},
        {"concat_split", {{2, 3}, {2, 2}}, [](Tape& t, const std::vector<Var>& v) {
             std::vector<Var> parts{v[0], v[1]};
             auto joined = ops::concat(parts, 1);
             const std::size_t sizes[] = {1, 4};
             auto halves = ops::split(joined, 1, sizes);
             return ops::add(project(t, halves[0], 10), project(t, ops::silu(halves[1]), 11));
         }},
        {"add_bias", {{3, 4}, {4}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::silu(ops::add_bias(v[0], v[1])), 12); }},
        {"gather_rows", {{4, 3}}, [](Tape& t, const std::vector<Var>& v) {
             const std::size_t rows[] = {2, 0, 2, 3};
             return project(t, ops::silu(ops::gather_rows(v[0], rows)), 13);
         }},
        {"gather", {{2, 3}}, [](Tape& t, const std::vector<Var>& v) {
             const std::size_t idx[] = {5, 0, 1, 1};
             return project(t, ops::silu(ops::gather(v[0], idx, {2, 2})), 14);
         }},
        {"softmax_rows", {{3, 5}}, [](Tape& t, const std::vector<Var>& v) { return project(t, ops::softmax_rows(v[0]), 15); }},
        {"layer_norm", {{3, 5}, {5}, {5}}, [](Tape& t, const std::vector<Var>& v) {
             return project(t, ops::layer_norm(v[0], v[1], v[2]), 16);
         }},
        {"l2_distance", {{6}, {6}}, [](Tape& t, const std::vector<Var>& v) { return ops::l2_distance(v[0], v[1]); }},
        {"normalize_rows", {{3, 4}}, [](Tape& t, const std::vector<Var>& v) {
             return project(t, ops::normalize_rows(v[0]), 18);
         }},
        {"attention", {{6, 4}, {4, 4}, {4, 4}}, [](Tape& t, const std::vector<Var>& v) {
             return project(t, ops::attention(v[0], v[1], v[2], 2, 2), 17);
         }},
    };
}

// Worst relative error of one case over seeds 0..n_seeds-1.
inline GradCheckResult op_case_check(const OpCase& c, std::size_t n_seeds) {
    GradCheckResult worst;
    for (std::uint64_t seed = 0; seed < n_seeds; ++seed) {
        Rng rng(derive_seed({seed, 99}));
        std::vector<Tensor> inputs;
        for (const Shape& s : c.shapes) inputs.push_back(rng.normal_tensor(s));
        const auto res = gradcheck(c.fn, inputs);
        worst.checked += res.checked;
        if (res.max_rel_error >= worst.max_rel_error) {
            worst.max_rel_error = res.max_rel_error;
            worst.worst = res.worst;
        }
    }
    return worst;
}

}  // namespace prefmod::testing
