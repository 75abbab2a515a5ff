#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "slotmorph/params.hpp"

namespace slotmorph::nn {

template <typename T>
void init_linear(ParamSet<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng)
{
    ps.add_glorot(prefix + ".w", in, out, rng);
    ps.add_const(prefix + ".b", {out}, T{0});
}

template <typename T>
Var<T> linear(const Binding<T>& p, const std::string& prefix, Var<T> x)
{
    return op::add_bias(op::matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}

template <typename T>
void init_layer_norm(ParamSet<T>& ps, const std::string& prefix, std::size_t dim)
{
    ps.add_const(prefix + ".gamma", {dim}, T{1});
    ps.add_const(prefix + ".beta", {dim}, T{0});
}

template <typename T>
Var<T> layer_norm(const Binding<T>& p, const std::string& prefix, Var<T> x)
{
    return op::layer_norm(x, p(prefix + ".gamma"), p(prefix + ".beta"));
}

// Two affine layers with a ReLU in between.
template <typename T>
void init_mlp(ParamSet<T>& ps, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
              Rng& rng)
{
    init_linear(ps, prefix + ".fc1", in, hidden, rng);
    init_linear(ps, prefix + ".fc2", hidden, out, rng);
}

template <typename T>
Var<T> mlp(const Binding<T>& p, const std::string& prefix, Var<T> x)
{
    return linear(p, prefix + ".fc2", op::relu(linear(p, prefix + ".fc1", x)));
}

// GRU with update gate z, reset gate r applied to the state before the
// candidate projection:
//   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
//   n = tanh(x Wn + bn + (r * h) Un)
//   h' = (1 - z) * n + z * h
template <typename T>
void init_gru(ParamSet<T>& ps, const std::string& prefix, std::size_t input_dim, std::size_t dim, Rng& rng)
{
    ps.add_glorot(prefix + ".w_x", input_dim, 3 * dim, rng);
    ps.add_const(prefix + ".b", {3 * dim}, T{0});
    ps.add_glorot(prefix + ".u_zr", dim, 2 * dim, rng);
    ps.add_glorot(prefix + ".u_n", dim, dim, rng);
}

template <typename T>
Var<T> gru_cell(const Binding<T>& p, const std::string& prefix, Var<T> state, Var<T> input)
{
    const std::size_t d = state.value().cols();
    const auto& wx = p(prefix + ".w_x").value();
    if (input.value().rows() != state.value().rows() || wx.dim(0) != input.value().cols() || wx.dim(1) != 3 * d)
        throw ShapeError("gru_cell: state " + shape_str(state.dims()) + ", input " + shape_str(input.dims()) +
                         ", w_x " + shape_str(wx.dims()));
    auto gx = op::add_bias(op::matmul(input, p(prefix + ".w_x")), p(prefix + ".b"));
    auto gh = op::matmul(state, p(prefix + ".u_zr"));
    auto z = op::sigmoid(op::add(op::slice_last(gx, 0, d), op::slice_last(gh, 0, d)));
    auto r = op::sigmoid(op::add(op::slice_last(gx, d, d), op::slice_last(gh, d, d)));
    auto n = op::tanh(op::add(op::slice_last(gx, 2 * d, d), op::matmul(op::mul(r, state), p(prefix + ".u_n"))));
    return op::add(n, op::mul(z, op::sub(state, n)));
}

// Sinusoidal position encoding of width `dim` at (possibly fractional) position.
inline std::vector<double> sinusoid(double position, std::size_t dim)
{
    std::vector<double> pe(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
        pe[i] = (i % 2 == 0) ? std::sin(position / rate) : std::cos(position / rate);
    }
    return pe;
}

template <typename T>
Tensor<T> sinusoid_table(std::size_t positions, std::size_t dim)
{
    Tensor<T> t({positions, dim});
    for (std::size_t p = 0; p < positions; ++p) {
        auto pe = sinusoid(static_cast<double>(p), dim);
        for (std::size_t i = 0; i < dim; ++i) t.at(p, i) = static_cast<T>(pe[i]);
    }
    return t;
}

}  // namespace slotmorph::nn
