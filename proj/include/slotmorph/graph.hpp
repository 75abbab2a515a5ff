#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "slotmorph/tensor.hpp"

namespace slotmorph {

template <typename T>
class Graph;

// Handle to a node on a Graph tape.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    std::uint32_t id = 0;

    const Tensor<T>& value() const { return graph->value(*this); }
    const Shape& dims() const { return value().dims(); }
    bool requires_grad() const { return graph->requires_grad(*this); }
};

// Reverse-mode tape. Nodes are appended in execution order; backward replays
// the recorded closures from the output back to index 0, each at most once.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

    Var<T> leaf(Tensor<T> value, bool requires_grad = true)
    {
        nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr});
        return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }
    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    // Appends an op output. The closure is kept only when some input needs a
    // gradient; otherwise the node is a plain constant.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn)
    {
        bool needs = false;
        for (const auto& v : inputs) needs = needs || requires_grad(v);
        nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : nullptr});
        return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }
    Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn)
    {
        bool needs = false;
        for (const auto& v : inputs) needs = needs || requires_grad(v);
        nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : nullptr});
        return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    const Tensor<T>& value(std::uint32_t id) const { return nodes_[id].value; }
    bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
    bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

    bool has_grad(Var<T> v) const { return !nodes_.at(v.id).grad.empty(); }
    // Accumulated gradient, or zeros when the node was never reached.
    Tensor<T> grad(Var<T> v) const
    {
        const auto& n = nodes_.at(v.id);
        return n.grad.empty() ? Tensor<T>(n.value.dims()) : n.grad;
    }

    // Gradient accumulator for node `id`, allocated on first use.
    Tensor<T>& grad_ref(std::uint32_t id)
    {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.dims());
        return n.grad;
    }
    const Tensor<T>& out_grad(std::uint32_t id) const { return nodes_[id].grad; }

    void backward(Var<T> out, const Tensor<T>& seed)
    {
        if (seed.dims() != value(out).dims())
            throw ShapeError("backward: seed dims " + shape_str(seed.dims()) + " != output dims " +
                             shape_str(value(out).dims()));
        grad_ref(out.id) = seed;
        visits_ = 0;
        for (std::int64_t i = out.id; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.backward || n.grad.empty()) continue;
            n.backward(*this, static_cast<std::uint32_t>(i));
            ++visits_;
        }
    }
    void backward(Var<T> scalar_out)
    {
        Tensor<T> seed(value(scalar_out).dims(), T{1});
        if (seed.size() != 1) throw ShapeError("backward: implicit seed needs a scalar output");
        backward(scalar_out, seed);
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t last_backward_visits() const { return visits_; }

    // Non-differentiable-point detection used by grad_check: when the margin
    // is positive, kinked ops (relu, clamp) log inputs that fall within it.
    void set_kink_margin(double margin) { kink_margin_ = margin; }
    double kink_margin() const { return kink_margin_; }
    void note_kink(std::string what) { kinks_.push_back(std::move(what)); }
    const std::vector<std::string>& kinks() const { return kinks_; }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    std::size_t visits_ = 0;
    double kink_margin_ = 0.0;
    std::vector<std::string> kinks_;
};

enum class Reduction { Mean, Sum };

// Primitive catalog. Every op validates shapes and throws ShapeError naming
// itself and the offending dims.
namespace op {

// a[..., k] x b[k, n] -> [..., n]
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// a[B, m, k] x b[B, k, n] (or b[B, n, k] with trans_b) -> [B, m, n]
template <typename T> Var<T> bmm(Var<T> a, Var<T> b, bool trans_b = false);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
// Broadcast a vector over the trailing axis.
template <typename T> Var<T> add_bias(Var<T> a, Var<T> bias);
template <typename T> Var<T> mul_bias(Var<T> a, Var<T> w);
// Multiply each trailing-axis row of `a` by the matching entry of `s`;
// numel(a) must be numel(s) * C.
template <typename T> Var<T> scale_rows(Var<T> a, Var<T> s);
template <typename T> Var<T> scale(Var<T> a, T c);
template <typename T> Var<T> add_scalar(Var<T> a, T c);

template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> clamp(Var<T> a, T lo, T hi);

// Softmax along the trailing axis. Entries where `mask` is 0 get exactly zero
// probability; a fully masked row is an error.
template <typename T> Var<T> softmax(Var<T> a, const Tensor<T>* mask = nullptr);
// a / sum(a) along the trailing axis.
template <typename T> Var<T> normalize(Var<T> a);
template <typename T> Var<T> layer_norm(Var<T> a, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
template <typename T> Var<T> layer_norm(Var<T> a, T eps = T(1e-5));

template <typename T> Var<T> embedding(Var<T> table, std::span<const int> ids);
template <typename T> Var<T> concat_last(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_last(Var<T> a, std::size_t start, std::size_t len);
template <typename T> Var<T> reshape(Var<T> a, Shape dims);
template <typename T> Var<T> permute(Var<T> a, const std::vector<std::size_t>& perm);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> sum_axis(Var<T> a, std::size_t axis);

// Cross-entropy of logits[R, V] against class ids; rows with target < 0 or
// zero weight are ignored. Mean divides by the total weight.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, std::span<const T> weights = {},
                     Reduction reduction = Reduction::Mean);

}  // namespace op

}  // namespace slotmorph
