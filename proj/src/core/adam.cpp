#include "prefmod/core/adam.hpp"

#include <cmath>

#include "prefmod/core/error.hpp"

namespace prefmod {

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state) {
    for (const auto& [name, g] : grads) {
        if (!params.contains(name)) throw ShapeError("adam_step: gradient for unknown parameter '" + name + "'");
        if (params.get(name).shape() != g.shape()) {
            throw ShapeError("adam_step: gradient " + shape_str(g.shape()) + " misaligned with parameter '" + name +
                             "' " + shape_str(params.get(name).shape()));
        }
        if (!g.all_finite()) throw NumericalError("adam_step: non-finite gradient for '" + name + "'");
    }

    state.step += 1;
    const AdamHyper& h = state.hyper;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);

    for (const auto& [name, g] : grads) {
        const Tensor& p = params.get(name);
        auto& mom = state.moments[name];
        if (mom.first.empty()) {
            mom.first.assign(p.numel(), 0.0);
            mom.second.assign(p.numel(), 0.0);
        }
        std::vector<double> next = p.to_vector();
        const auto gv = g.data();
        for (std::size_t i = 0; i < next.size(); ++i) {
            mom.first[i] = h.beta1 * mom.first[i] + (1.0 - h.beta1) * gv[i];
            mom.second[i] = h.beta2 * mom.second[i] + (1.0 - h.beta2) * gv[i] * gv[i];
            const double m_hat = mom.first[i] / c1;
            const double v_hat = mom.second[i] / c2;
            next[i] -= h.learning_rate * m_hat / (std::sqrt(v_hat) + h.eps);
        }
        params.set(name, Tensor(p.shape(), std::move(next)));
    }
}

}  // namespace prefmod
