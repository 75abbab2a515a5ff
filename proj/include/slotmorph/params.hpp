#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotmorph/graph.hpp"
#include "slotmorph/rng.hpp"

namespace slotmorph {

// Named learnable tensors, ordered by name.
template <typename T>
class ParamSet {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> value)
    {
        auto [it, inserted] = values_.insert_or_assign(name, std::move(value));
        return it->second;
    }

    // Glorot-uniform matrix [fan_in, fan_out].
    Tensor<T>& add_glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng)
    {
        Tensor<T> w({fan_in, fan_out});
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-limit, limit));
        return add(name, std::move(w));
    }
    Tensor<T>& add_normal(const std::string& name, Shape dims, double stddev, Rng& rng)
    {
        Tensor<T> w(std::move(dims));
        for (auto& v : w.vec()) v = static_cast<T>(stddev * rng.normal());
        return add(name, std::move(w));
    }
    Tensor<T>& add_const(const std::string& name, Shape dims, T value)
    {
        return add(name, Tensor<T>(std::move(dims), value));
    }

    bool contains(const std::string& name) const { return values_.count(name) != 0; }
    Tensor<T>& at(const std::string& name)
    {
        auto it = values_.find(name);
        if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const { return const_cast<ParamSet*>(this)->at(name); }

    std::map<std::string, Tensor<T>>& all() { return values_; }
    const std::map<std::string, Tensor<T>>& all() const { return values_; }
    std::size_t count() const
    {
        std::size_t n = 0;
        for (const auto& [_, v] : values_) n += v.size();
        return n;
    }

    template <typename U>
    ParamSet<U> cast() const
    {
        ParamSet<U> out;
        for (const auto& [k, v] : values_) out.add(k, v.template cast<U>());
        return out;
    }

private:
    std::map<std::string, Tensor<T>> values_;
};

// Lazily binds parameters to leaves of one graph. Only parameters actually
// touched by a forward pass become leaves.
template <typename T>
class Binding {
public:
    Binding(Graph<T>& graph, const ParamSet<T>& params, bool requires_grad = true)
        : graph_(&graph), params_(&params), requires_grad_(requires_grad)
    {
    }
    // Pre-bound leaves, used by gradient checks that own the leaf creation.
    Binding(Graph<T>& graph, std::map<std::string, Var<T>> bound) : graph_(&graph), bound_(std::move(bound)) {}

    Var<T> operator()(const std::string& name) const
    {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        if (!params_) throw std::out_of_range("unbound parameter '" + name + "'");
        auto v = graph_->leaf(params_->at(name), requires_grad_);
        bound_.emplace(name, v);
        return v;
    }

    Graph<T>& graph() const { return *graph_; }
    const std::map<std::string, Var<T>>& bound() const { return bound_; }

    // Gradients of all bound parameters (zeros for unreached ones).
    std::map<std::string, Tensor<T>> grads() const
    {
        std::map<std::string, Tensor<T>> out;
        for (const auto& [k, v] : bound_) out.emplace(k, graph_->grad(v));
        return out;
    }

private:
    Graph<T>* graph_;
    const ParamSet<T>* params_ = nullptr;
    bool requires_grad_ = true;
    mutable std::map<std::string, Var<T>> bound_;
};

}  // namespace slotmorph
