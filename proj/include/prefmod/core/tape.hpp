#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prefmod/core/tensor.hpp"

namespace prefmod {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t numel() const { return value().numel(); }
    std::uint32_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

// Gradients of a scalar loss with respect to the parameter nodes of a tape.
class Gradients {
public:
    const Tensor& operator[](const Var& param) const;
    bool contains(const Var& param) const { return grads_.count(param.id()) != 0; }
    std::size_t size() const noexcept { return grads_.size(); }

private:
    friend class Tape;
    std::unordered_map<std::uint32_t, Tensor> grads_;
};

// Linear record of primitive operations for reverse-mode differentiation.
// Nodes are appended in execution order, so ids are already a topological order.
class Tape {
public:
    // Called during backward with the output gradient; adds into input gradients.
    using BackwardFn = std::function<void(std::span<const double> grad_out, Tape& tape)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    // Appends an op output. Throws NumericalError if the value is not finite.
    // The backward function is dropped when no input requires a gradient.
    Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

    Gradients backward(const Var& loss);

    const Tensor& value(std::uint32_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Gradient accumulator of a node; only meaningful inside a BackwardFn.
    std::span<double> grad(std::uint32_t id);
    std::span<double> grad(const Var& v) { return grad(v.id()); }

private:
    struct Node {
        Tensor value;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_parameter = false;
    };

    Var push(Node node);

    std::deque<Node> nodes_;  // stable references on append
    std::vector<std::vector<double>> grads_;
};

}  // namespace prefmod
