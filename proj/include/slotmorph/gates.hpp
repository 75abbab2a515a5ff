#pragma once

#include <cmath>

#include "slotmorph/params.hpp"

namespace slotmorph {

// Hard-concrete gate hyperparameters: temperature beta and stretch epsilon,
// samples are stretched to [-epsilon, 1 + epsilon] and rectified to [0, 1].
struct GateConfig {
    double beta = 2.0 / 3.0;
    double epsilon = 0.1;

    void validate() const;
};

enum class GateMode { TrainSample, EvalExpectation };

// Scalar reference formulas.
double concrete_sample(double log_alpha, double u, const GateConfig& cfg);
double stretch_rectify(double s, const GateConfig& cfg);
double eval_gate(double log_alpha, const GateConfig& cfg);
// P(g != 0) = sigmoid(log_alpha - beta * log(epsilon / (1 + epsilon)))
double open_probability(double log_alpha, const GateConfig& cfg);

template <typename T>
struct GateResult {
    Var<T> log_alpha;  // [B, K]
    Var<T> gates;      // [B, K]
    Var<T> slots;      // [B, K, D_slots], row i scaled by gate i
};

template <typename T>
void init_gates(ParamSet<T>& ps, std::size_t slot_dim, Rng& rng);

// log_alpha_i = m_i . w. TrainSample draws one uniform per gate from `rng`.
template <typename T>
GateResult<T> gate_forward(const Binding<T>& p, const GateConfig& cfg, Var<T> slots, GateMode mode, Rng* rng);

// Train-mode gate from given log_alpha [B, K] and fixed uniforms.
template <typename T>
Var<T> sample_gates(Var<T> log_alpha, const Tensor<T>& uniforms, const GateConfig& cfg);
template <typename T>
Var<T> expected_gates(Var<T> log_alpha, const GateConfig& cfg);

// Expected number of open gates, summed over every entry of log_alpha.
template <typename T>
Var<T> l0_penalty(Var<T> log_alpha, const GateConfig& cfg);

}  // namespace slotmorph
