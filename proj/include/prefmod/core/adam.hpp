#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prefmod/core/params.hpp"

namespace prefmod {

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected adaptive-moment optimizer state.
struct AdamState {
    struct Moments {
        std::vector<double> first;
        std::vector<double> second;
    };

    AdamHyper hyper;
    std::uint64_t step = 0;
    std::map<std::string, Moments> moments;
};

// Applies one update to every parameter named in grads. Each gradient must
// name an existing parameter of identical shape; parameters without a
// gradient are left untouched. Moments are created on first use.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state);

}  // namespace prefmod
