#include "prefmod/core/tape.hpp"

#include <limits>
#include <string>

#include "prefmod/core/error.hpp"

namespace prefmod {

const Tensor& Var::value() const {
    if (tape_ == nullptr) throw std::logic_error("value() on an unbound Var");
    return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

const Tensor& Gradients::operator[](const Var& param) const {
    auto it = grads_.find(param.id());
    if (it == grads_.end()) throw std::out_of_range("no gradient recorded for node " + std::to_string(param.id()));
    return it->second;
}

Var Tape::push(Node node) {
    if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) throw std::length_error("tape is full");
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NumericalError("non-finite value in constant " + shape_str(value.shape()));
    return push(Node{std::move(value), nullptr, false, false});
}

Var Tape::parameter(Tensor value) {
    if (!value.all_finite()) throw NumericalError("non-finite value in parameter " + shape_str(value.shape()));
    return push(Node{std::move(value), nullptr, true, true});
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) {
        if (in.tape() != this) throw std::invalid_argument(std::string(op) + ": input belongs to another tape");
        needs = needs || nodes_[in.id()].requires_grad;
    }
    if (!value.all_finite()) {
        throw NumericalError(std::string(op) + " produced a non-finite value (output shape " +
                             shape_str(value.shape()) + ")");
    }
    return push(Node{std::move(value), needs ? std::move(backward) : nullptr, needs, false});
}

std::span<double> Tape::grad(std::uint32_t id) {
    auto& g = grads_.at(id);
    if (g.empty()) g.assign(nodes_[id].value.numel(), 0.0);
    return g;
}

Gradients Tape::backward(const Var& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));

    grads_.assign(nodes_.size(), {});
    Gradients out;
    if (nodes_[loss.id()].requires_grad) {
        grad(loss.id())[0] = 1.0;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (!node.backward || grads_[i].empty()) continue;
            node.backward(grads_[i], *this);
        }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].is_parameter) continue;
        if (grads_[i].empty()) {
            out.grads_.emplace(static_cast<std::uint32_t>(i), Tensor::zeros(nodes_[i].value.shape()));
        } else {
            out.grads_.emplace(static_cast<std::uint32_t>(i), Tensor(nodes_[i].value.shape(), std::move(grads_[i])));
        }
    }
    grads_.clear();
    return out;
}

}  // namespace prefmod
