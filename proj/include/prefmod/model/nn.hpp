#pragma once

#include <string>

#include "prefmod/core/params.hpp"
#include "prefmod/core/rng.hpp"

namespace prefmod::model {

// x * W + b with W stored as "<name>.w" (in x out) and b as "<name>.b".
Var linear(Binder& w, const std::string& name, const Var& x);

// Weight ~ N(0, gain / sqrt(in)), bias zero. gain 0 gives an all-zero layer.
void init_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                 double gain = 1.0);

// Rows i*group .. i*group+group-1 of the result all equal row i of x.
Var repeat_rows(const Var& x, std::size_t group);

}  // namespace prefmod::model
