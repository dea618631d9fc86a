#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "prefmod/core/tape.hpp"

namespace prefmod {

// Named weight tensors, ordered by name so iteration and serialization are stable.
class ParamStore {
public:
    void set(const std::string& name, Tensor value);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    std::vector<std::string> names() const;
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t total_numel() const;

    const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }

    // Adds every tensor of other; names must not collide.
    void merge(const ParamStore& other);

private:
    std::map<std::string, Tensor> tensors_;
};

// Lazily binds store entries to nodes on one tape. Names accepted by the
// trainable predicate become parameter nodes, the rest constants.
class Binder {
public:
    using Predicate = std::function<bool(const std::string&)>;

    Binder(Tape& tape, const ParamStore& store, Predicate trainable = {});

    Var operator()(const std::string& name);
    Tape& tape() noexcept { return tape_; }

    // Trainable names actually used in this forward pass, with their nodes.
    const std::map<std::string, Var>& trainable() const noexcept { return trainable_; }
    std::map<std::string, Tensor> gradients(const Gradients& grads) const;

private:
    Tape& tape_;
    const ParamStore& store_;
    Predicate is_trainable_;
    std::map<std::string, Var> bound_;
    std::map<std::string, Var> trainable_;
};

}  // namespace prefmod
