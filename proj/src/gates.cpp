#include "slotmorph/gates.hpp"

#include <algorithm>
#include <stdexcept>

namespace slotmorph {

namespace {

double sigmoid(double x)
{
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

void GateConfig::validate() const
{
    if (!(beta > 0.0) || beta > 1.0) throw std::invalid_argument("gate beta must be in (0, 1]");
    if (!(epsilon > 0.0)) throw std::invalid_argument("gate epsilon must be positive");
}

double concrete_sample(double log_alpha, double u, const GateConfig& cfg)
{
    return sigmoid((std::log(u) - std::log1p(-u) + log_alpha) / cfg.beta);
}

double stretch_rectify(double s, const GateConfig& cfg)
{
    return std::min(1.0, std::max(0.0, s * (1.0 + 2.0 * cfg.epsilon) - cfg.epsilon));
}

double eval_gate(double log_alpha, const GateConfig& cfg)
{
    return stretch_rectify(sigmoid(log_alpha), cfg);
}

double open_probability(double log_alpha, const GateConfig& cfg)
{
    return sigmoid(log_alpha - cfg.beta * std::log(cfg.epsilon / (1.0 + cfg.epsilon)));
}

template <typename T>
void init_gates(ParamSet<T>& ps, std::size_t slot_dim, Rng& rng)
{
    ps.add_normal("gate.w", {slot_dim}, 1.0 / std::sqrt(static_cast<double>(slot_dim)), rng);
}

template <typename T>
Var<T> sample_gates(Var<T> log_alpha, const Tensor<T>& uniforms, const GateConfig& cfg)
{
    cfg.validate();
    if (uniforms.dims() != log_alpha.dims())
        throw ShapeError("sample_gates: uniforms " + shape_str(uniforms.dims()) + " vs log_alpha " +
                         shape_str(log_alpha.dims()));
    Tensor<T> logistic(uniforms.dims());
    for (std::size_t i = 0; i < uniforms.size(); ++i) {
        const double u = static_cast<double>(uniforms[i]);
        logistic[i] = static_cast<T>(std::log(u) - std::log1p(-u));
    }
    auto& g = *log_alpha.graph;
    auto s = op::sigmoid(op::scale(op::add(log_alpha, g.constant(std::move(logistic))), static_cast<T>(1.0 / cfg.beta)));
    auto stretched = op::add_scalar(op::scale(s, static_cast<T>(1.0 + 2.0 * cfg.epsilon)), static_cast<T>(-cfg.epsilon));
    return op::clamp(stretched, T{0}, T{1});
}

template <typename T>
Var<T> expected_gates(Var<T> log_alpha, const GateConfig& cfg)
{
    cfg.validate();
    auto stretched = op::add_scalar(op::scale(op::sigmoid(log_alpha), static_cast<T>(1.0 + 2.0 * cfg.epsilon)),
                                    static_cast<T>(-cfg.epsilon));
    return op::clamp(stretched, T{0}, T{1});
}

template <typename T>
GateResult<T> gate_forward(const Binding<T>& p, const GateConfig& cfg, Var<T> slots, GateMode mode, Rng* rng)
{
    cfg.validate();
    const auto& sv = slots.value();
    if (sv.rank() != 3) throw ShapeError("gate_forward: slots must be [B, K, D], got " + shape_str(sv.dims()));
    const std::size_t batch = sv.dim(0), k = sv.dim(1), ds = sv.dim(2);
    auto w = op::reshape(p("gate.w"), {ds, 1});
    auto log_alpha = op::reshape(op::matmul(slots, w), {batch, k});
    Var<T> gates;
    if (mode == GateMode::TrainSample) {
        if (!rng) throw std::invalid_argument("gate_forward: train mode needs an rng");
        Tensor<T> u({batch, k});
        for (auto& v : u.vec()) v = static_cast<T>(rng->uniform_open());
        gates = sample_gates(log_alpha, u, cfg);
    } else {
        gates = expected_gates(log_alpha, cfg);
    }
    return {log_alpha, gates, op::scale_rows(slots, gates)};
}

template <typename T>
Var<T> l0_penalty(Var<T> log_alpha, const GateConfig& cfg)
{
    cfg.validate();
    const T shift = static_cast<T>(-cfg.beta * std::log(cfg.epsilon / (1.0 + cfg.epsilon)));
    return op::sum(op::sigmoid(op::add_scalar(log_alpha, shift)));
}

#define SLOTMORPH_INSTANTIATE_GATES(T)                                                                     \
    template void init_gates<T>(ParamSet<T>&, std::size_t, Rng&);                                          \
    template Var<T> sample_gates<T>(Var<T>, const Tensor<T>&, const GateConfig&);                          \
    template Var<T> expected_gates<T>(Var<T>, const GateConfig&);                                          \
    template GateResult<T> gate_forward<T>(const Binding<T>&, const GateConfig&, Var<T>, GateMode, Rng*); \
    template Var<T> l0_penalty<T>(Var<T>, const GateConfig&);

SLOTMORPH_INSTANTIATE_GATES(float)
SLOTMORPH_INSTANTIATE_GATES(double)

}  // namespace slotmorph
