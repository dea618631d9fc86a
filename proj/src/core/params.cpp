#include "prefmod/core/params.hpp"

#include "prefmod/core/error.hpp"

namespace prefmod {

void ParamStore::set(const std::string& name, Tensor value) { tensors_.insert_or_assign(name, std::move(value)); }

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("parameter '" + name + "' not found");
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (auto it = tensors_.lower_bound(prefix); it != tensors_.end() && it->first.starts_with(prefix); ++it) {
        out.push_back(it->first);
    }
    return out;
}

std::size_t ParamStore::total_numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
}

void ParamStore::merge(const ParamStore& other) {
    for (const auto& [name, t] : other.tensors_) {
        if (contains(name)) throw std::invalid_argument("parameter '" + name + "' already present");
        tensors_.emplace(name, t);
    }
}

Binder::Binder(Tape& tape, const ParamStore& store, Predicate trainable)
    : tape_(tape), store_(store), is_trainable_(std::move(trainable)) {}

Var Binder::operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    const Tensor& value = store_.get(name);
    const bool train = is_trainable_ && is_trainable_(name);
    Var v = train ? tape_.parameter(value) : tape_.constant(value);
    bound_.emplace(name, v);
    if (train) trainable_.emplace(name, v);
    return v;
}

std::map<std::string, Tensor> Binder::gradients(const Gradients& grads) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : trainable_) out.emplace(name, grads[v]);
    return out;
}

}  // namespace prefmod
