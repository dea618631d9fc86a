#include "prefmod/model/nn.hpp"

#include <cmath>

#include "prefmod/core/ops.hpp"

namespace prefmod::model {

Var linear(Binder& w, const std::string& name, const Var& x) {
    return ops::add_bias(ops::matmul(x, w(name + ".w")), w(name + ".b"));
}

void init_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain) {
    if (gain == 0.0) {
        store.set(name + ".w", Tensor::zeros({in, out}));
    } else {
        store.set(name + ".w", rng.normal_tensor({in, out}, gain / std::sqrt(static_cast<double>(in))));
    }
    store.set(name + ".b", Tensor::zeros({out}));
}

Var repeat_rows(const Var& x, std::size_t group) {
    const std::size_t rows = x.shape().at(0);
    std::vector<std::size_t> index(rows * group);
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = i / group;
    return ops::gather_rows(x, index);
}

}  // namespace prefmod::model
