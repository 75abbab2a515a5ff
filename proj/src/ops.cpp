#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>

#include "slotmorph/graph.hpp"

namespace slotmorph::op {

namespace {

using Index = Eigen::Index;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m x n] (+)= op(A) * op(B); A is stored k x m when ta, B is stored n x k when tb.
template <typename T>
void gemm(const T* a, const T* b, T* c, Index m, Index n, Index k, bool ta, bool tb, bool accumulate)
{
    Eigen::Map<RowMat<T>> C(c, m, n);
    if (!accumulate) C.setZero();
    if (m == 0 || n == 0 || k == 0) return;
    if (!ta && !tb)
        C.noalias() += Eigen::Map<const RowMat<T>>(a, m, k) * Eigen::Map<const RowMat<T>>(b, k, n);
    else if (!ta && tb)
        C.noalias() += Eigen::Map<const RowMat<T>>(a, m, k) * Eigen::Map<const RowMat<T>>(b, n, k).transpose();
    else if (ta && !tb)
        C.noalias() += Eigen::Map<const RowMat<T>>(a, k, m).transpose() * Eigen::Map<const RowMat<T>>(b, k, n);
    else
        C.noalias() += Eigen::Map<const RowMat<T>>(a, k, m).transpose() *
                       Eigen::Map<const RowMat<T>>(b, n, k).transpose();
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail)
{
    throw ShapeError(std::string(op) + ": " + detail);
}

void require_same(const char* op, const Shape& a, const Shape& b)
{
    if (a != b) shape_fail(op, "dims " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
Graph<T>& graph_of(const char* op, Var<T> a, Var<T> b)
{
    if (a.graph != b.graph || a.graph == nullptr) shape_fail(op, "operands live on different graphs");
    return *a.graph;
}

// Elementwise unary op: fwd(x) and dfdx(x, y).
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(Var<T> a, Fwd fwd, Deriv deriv)
{
    auto& g = *a.graph;
    const auto& x = a.value();
    Tensor<T> y(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
    const auto ia = a.id;
    return g.record(std::move(y), {a}, [ia, deriv](Graph<T>& g, std::uint32_t self) {
        if (!g.requires_grad(ia)) return;
        const auto& x = g.value(ia);
        const auto& y = g.value(self);
        const auto& gy = g.out_grad(self);
        auto& gx = g.grad_ref(ia);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * deriv(x[i], y[i]);
    });
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b)
{
    auto& g = graph_of("matmul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (bv.rank() != 2 || av.rank() < 1 || av.cols() != bv.dim(0))
        shape_fail("matmul", "cannot multiply " + shape_str(av.dims()) + " by " + shape_str(bv.dims()));
    const Index rows = static_cast<Index>(av.rows()), k = static_cast<Index>(bv.dim(0)),
                n = static_cast<Index>(bv.dim(1));
    Shape od = av.dims();
    od.back() = bv.dim(1);
    Tensor<T> out(od);
    gemm(av.data(), bv.data(), out.data(), rows, n, k, false, false, false);
    const auto ia = a.id, ib = b.id;
    return g.record(std::move(out), {a, b}, [ia, ib, rows, n, k](Graph<T>& g, std::uint32_t self) {
        const auto& gc = g.out_grad(self);
        if (g.requires_grad(ia))
            gemm(gc.data(), g.value(ib).data(), g.grad_ref(ia).data(), rows, k, n, false, true, true);
        if (g.requires_grad(ib))
            gemm(g.value(ia).data(), gc.data(), g.grad_ref(ib).data(), k, n, rows, true, false, true);
    });
}

template <typename T>
Var<T> bmm(Var<T> a, Var<T> b, bool trans_b)
{
    auto& g = graph_of("bmm", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0))
        shape_fail("bmm", "batch mismatch " + shape_str(av.dims()) + " vs " + shape_str(bv.dims()));
    const std::size_t batch = av.dim(0);
    const Index m = static_cast<Index>(av.dim(1)), k = static_cast<Index>(av.dim(2));
    const Index bk = static_cast<Index>(trans_b ? bv.dim(2) : bv.dim(1));
    const Index n = static_cast<Index>(trans_b ? bv.dim(1) : bv.dim(2));
    if (bk != k)
        shape_fail("bmm", "inner dims differ " + shape_str(av.dims()) + " vs " + shape_str(bv.dims()) +
                              (trans_b ? " (b transposed)" : ""));
    Tensor<T> out({batch, static_cast<std::size_t>(m), static_cast<std::size_t>(n)});
    for (std::size_t s = 0; s < batch; ++s)
        gemm(av.data() + s * m * k, bv.data() + s * k * n, out.data() + s * m * n, m, n, k, false, trans_b, false);
    const auto ia = a.id, ib = b.id;
    return g.record(std::move(out), {a, b}, [=](Graph<T>& g, std::uint32_t self) {
        const auto& gc = g.out_grad(self);
        const auto& av = g.value(ia);
        const auto& bv = g.value(ib);
        for (std::size_t s = 0; s < batch; ++s) {
            const T* dc = gc.data() + s * m * n;
            if (g.requires_grad(ia))
                gemm(dc, bv.data() + s * k * n, g.grad_ref(ia).data() + s * m * k, m, k, n, false, !trans_b, true);
            if (g.requires_grad(ib)) {
                if (trans_b)
                    gemm(dc, av.data() + s * m * k, g.grad_ref(ib).data() + s * k * n, n, k, m, true, false, true);
                else
                    gemm(av.data() + s * m * k, dc, g.grad_ref(ib).data() + s * k * n, k, n, m, true, false, true);
            }
        }
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b)
{
    auto& g = graph_of("add", a, b);
    require_same("add", a.dims(), b.dims());
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const auto ia = a.id, ib = b.id;
    return g.record(std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::uint32_t self) {
        const auto& gc = g.out_grad(self);
        for (auto id : {ia, ib}) {
            if (!g.requires_grad(id)) continue;
            auto& gx = g.grad_ref(id);
            for (std::size_t i = 0; i < gc.size(); ++i) gx[i] += gc[i];
        }
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b)
{
    auto& g = graph_of("sub", a, b);
    require_same("sub", a.dims(), b.dims());
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    const auto ia = a.id, ib = b.id;
    return g.record(std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::uint32_t self) {
        const auto& gc = g.out_grad(self);
        if (g.requires_grad(ia)) {
            auto& gx = g.grad_ref(ia);
            for (std::size_t i = 0; i < gc.size(); ++i) gx[i] += gc[i];
        }
        if (g.requires_grad(ib)) {
            auto& gx = g.grad_ref(ib);
            for (std::size_t i = 0; i < gc.size(); ++i) gx[i] -= gc[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b)
{
    auto& g = graph_of("mul", a, b);
    require_same("mul", a.dims(), b.dims());
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const auto ia = a.id, ib = b.id;
    return g.record(std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::uint32_t self) {
        const auto& gc = g.out_grad(self);
        if (g.requires_grad(ia)) {
            auto& gx = g.grad_ref(ia);
            const auto& bv = g.value(ib);
            for (std::size_t i = 0; i < gc.size(); ++i) gx[i] += gc[i] * bv[i];
        }
        if (g.requires_grad(ib)) {
            auto& gx = g.grad_ref(ib);
            const auto& av = g.value(ia);
            for (std::size_t i = 0; i < gc.size(); ++i) gx[i] += gc[i] * av[i];
        }
    });
}

template <typename T>
Var<T> add_bias(Var<T> a, Var<T> bias)
{
    auto& g = graph_of("add_bias", a, bias);
    const auto& bv = bias.value();
    if (bv.rank() != 1 || bv.size() != a.value().cols())
        shape_fail("add_bias", "bias " + shape_str(bv.dims()) + " vs input " + shape_str(a.dims()));
    Tensor<T> out = a.value();
    const std::size_t c = bv.size();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
    const auto ia = a.id, ib = bias.id;
    return g.record(std::move(out), {a, bias}, [ia, ib, c](Graph<T>& g, std::uint32_t self) {
        const auto& gc = g.out_grad(self);
        if (g.requires_grad(ia)) {
            auto& gx = g.grad_ref(ia);
            for (std::size_t i = 0; i < gc.size(); ++i) gx[i] += gc[i];
        }
        if (g.requires_grad(ib)) {
            auto& gb = g.grad_ref(ib);
            for (std::size_t r = 0; r < gc.size() / c; ++r)
                for (std::size_t j = 0; j < c; ++j) gb[j] += gc[r * c + j];
        }
    });
}

template <typename T>
Var<T> mul_bias(Var<T> a, Var<T> w)
{
    auto& g = graph_of("mul_bias", a, w);
    const auto& wv = w.value();
    if (wv.rank() != 1 || wv.size() != a.value().cols())
        shape_fail("mul_bias", "weight " + shape_str(wv.dims()) + " vs input " + shape_str(a.dims()));
    Tensor<T> out = a.value();
    const std::size_t c = wv.size();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] *= wv[j];
    const auto ia = a.id, iw = w.id;
    return g.record(std::move(out), {a, w}, [ia, iw, c](Graph<T>& g, std::uint32_t self) {
        const auto& gc = g.out_grad(self);
        if (g.requires_grad(ia)) {
            auto& gx = g.grad_ref(ia);
            const auto& wv = g.value(iw);
            for (std::size_t i = 0; i < gc.size(); ++i) gx[i] += gc[i] * wv[i % c];
        }
        if (g.requires_grad(iw)) {
            auto& gw = g.grad_ref(iw);
            const auto& av = g.value(ia);
            for (std::size_t i = 0; i < gc.size(); ++i) gw[i % c] += gc[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale_rows(Var<T> a, Var<T> s)
{
    auto& g = graph_of("scale_rows", a, s);
    const auto& av = a.value();
    const auto& sv = s.value();
    if (sv.size() == 0 || av.size() % sv.size() != 0)
        shape_fail("scale_rows", "input " + shape_str(av.dims()) + " vs scales " + shape_str(sv.dims()));
    const std::size_t c = av.size() / sv.size();
    Tensor<T> out = av;
    for (std::size_t r = 0; r < sv.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] *= sv[r];
    const auto ia = a.id, is = s.id;
    return g.record(std::move(out), {a, s}, [ia, is, c](Graph<T>& g, std::uint32_t self) {
        const auto& gc = g.out_grad(self);
        const auto& sv = g.value(is);
        if (g.requires_grad(ia)) {
            auto& gx = g.grad_ref(ia);
            for (std::size_t r = 0; r < sv.size(); ++r)
                for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += gc[r * c + j] * sv[r];
        }
        if (g.requires_grad(is)) {
            auto& gs = g.grad_ref(is);
            const auto& av = g.value(ia);
            for (std::size_t r = 0; r < sv.size(); ++r) {
                T acc = 0;
                for (std::size_t j = 0; j < c; ++j) acc += gc[r * c + j] * av[r * c + j];
                gs[r] += acc;
            }
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T c)
{
    return unary(a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c)
{
    return unary(a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> exp(Var<T> a)
{
    return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a)
{
    return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Var<T> tanh(Var<T> a)
{
    return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> a)
{
    return unary(
        a,
        [](T x) {
            if (x >= 0) return T{1} / (T{1} + std::exp(-x));
            const T e = std::exp(x);
            return e / (T{1} + e);
        },
        [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> relu(Var<T> a)
{
    auto& g = *a.graph;
    if (g.kink_margin() > 0)
        for (T x : a.value().vec())
            if (std::abs(static_cast<double>(x)) < g.kink_margin()) {
                g.note_kink("relu input " + std::to_string(static_cast<double>(x)) + " is at the kink 0");
                break;
            }
    return unary(a, [](T x) { return x > 0 ? x : T{0}; }, [](T x, T) { return x > 0 ? T{1} : T{0}; });
}

template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi)
{
    auto& g = *a.graph;
    if (g.kink_margin() > 0)
        for (T x : a.value().vec()) {
            const double d = std::min(std::abs(static_cast<double>(x - lo)), std::abs(static_cast<double>(x - hi)));
            if (d < g.kink_margin()) {
                g.note_kink("clamp input " + std::to_string(static_cast<double>(x)) + " is at a bound");
                break;
            }
        }
    return unary(
        a, [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](T x, T) { return (x > lo && x < hi) ? T{1} : T{0}; });
}

template <typename T>
Var<T> softmax(Var<T> a, const Tensor<T>* mask)
{
    auto& g = *a.graph;
    const auto& x = a.value();
    if (mask && mask->dims() != x.dims())
        shape_fail("softmax", "mask " + shape_str(mask->dims()) + " vs input " + shape_str(x.dims()));
    const std::size_t c = x.cols();
    Tensor<T> y(x.dims());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const T* xr = x.data() + r * c;
        T* yr = y.data() + r * c;
        const T* mr = mask ? mask->data() + r * c : nullptr;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            if (!mr || mr[j] != T{0}) mx = std::max(mx, xr[j]);
        if (mx == -std::numeric_limits<T>::infinity())
            shape_fail("softmax", "row " + std::to_string(r) + " is fully masked");
        T z = 0;
        for (std::size_t j = 0; j < c; ++j) {
            yr[j] = (!mr || mr[j] != T{0}) ? std::exp(xr[j] - mx) : T{0};
            z += yr[j];
        }
        for (std::size_t j = 0; j < c; ++j) yr[j] /= z;
    }
    const auto ia = a.id;
    return g.record(std::move(y), {a}, [ia, c](Graph<T>& g, std::uint32_t self) {
        if (!g.requires_grad(ia)) return;
        const auto& y = g.value(self);
        const auto& gy = g.out_grad(self);
        auto& gx = g.grad_ref(ia);
        for (std::size_t r = 0; r < y.size() / c; ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += y[r * c + j] * gy[r * c + j];
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (gy[r * c + j] - dot);
        }
    });
}

template <typename T>
Var<T> normalize(Var<T> a)
{
    auto& g = *a.graph;
    const auto& x = a.value();
    const std::size_t c = x.cols();
    Tensor<T> y(x.dims());
    std::vector<T> sums(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        T s = 0;
        for (std::size_t j = 0; j < c; ++j) s += x[r * c + j];
        sums[r] = s;
        for (std::size_t j = 0; j < c; ++j) y[r * c + j] = x[r * c + j] / s;
    }
    const auto ia = a.id;
    return g.record(std::move(y), {a}, [ia, c, sums = std::move(sums)](Graph<T>& g, std::uint32_t self) {
        if (!g.requires_grad(ia)) return;
        const auto& y = g.value(self);
        const auto& gy = g.out_grad(self);
        auto& gx = g.grad_ref(ia);
        for (std::size_t r = 0; r < sums.size(); ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += y[r * c + j] * gy[r * c + j];
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += (gy[r * c + j] - dot) / sums[r];
        }
    });
}

namespace {

template <typename T>
Var<T> layer_norm_impl(Var<T> a, const Var<T>* gamma, const Var<T>* beta, T eps)
{
    auto& g = *a.graph;
    const auto& x = a.value();
    const std::size_t c = x.cols(), rows = x.rows();
    if (gamma && (gamma->value().size() != c || beta->value().size() != c))
        shape_fail("layer_norm", "affine params " + shape_str(gamma->dims()) + "/" + shape_str(beta->dims()) +
                                     " vs input " + shape_str(x.dims()));
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    Tensor<T> y(x.dims());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * c;
        T mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(c);
        const T rs = T{1} / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (xr[j] - mu) * rs;
            (*xhat)[r * c + j] = h;
            y[r * c + j] = gamma ? h * gamma->value()[j] + beta->value()[j] : h;
        }
    }
    const auto ia = a.id;
    const bool affine = gamma != nullptr;
    const auto ig = affine ? gamma->id : 0u, ib = affine ? beta->id : 0u;
    auto fn = [=](Graph<T>& g, std::uint32_t self) {
        const auto& gy = g.out_grad(self);
        if (affine && g.requires_grad(ig)) {
            auto& gg = g.grad_ref(ig);
            for (std::size_t i = 0; i < gy.size(); ++i) gg[i % c] += gy[i] * (*xhat)[i];
        }
        if (affine && g.requires_grad(ib)) {
            auto& gb = g.grad_ref(ib);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i % c] += gy[i];
        }
        if (!g.requires_grad(ia)) return;
        auto& gx = g.grad_ref(ia);
        std::vector<T> dh(c);
        for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
                dh[j] = gy[r * c + j] * (affine ? g.value(ig)[j] : T{1});
                m1 += dh[j];
                m2 += dh[j] * (*xhat)[r * c + j];
            }
            m1 /= static_cast<T>(c);
            m2 /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j)
                gx[r * c + j] += (*rstd)[r] * (dh[j] - m1 - (*xhat)[r * c + j] * m2);
        }
    };
    if (affine) return g.record(std::move(y), {a, *gamma, *beta}, fn);
    return g.record(std::move(y), {a}, fn);
}

}  // namespace

template <typename T>
Var<T> layer_norm(Var<T> a, Var<T> gamma, Var<T> beta, T eps)
{
    return layer_norm_impl(a, &gamma, &beta, eps);
}

template <typename T>
Var<T> layer_norm(Var<T> a, T eps)
{
    return layer_norm_impl<T>(a, nullptr, nullptr, eps);
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids)
{
    auto& g = *table.graph;
    const auto& tv = table.value();
    if (tv.rank() != 2) shape_fail("embedding", "table must be rank 2, got " + shape_str(tv.dims()));
    const std::size_t d = tv.dim(1);
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.dim(0))
            shape_fail("embedding", "id " + std::to_string(ids[i]) + " outside table " + shape_str(tv.dims()));
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    const auto it = table.id;
    return g.record(std::move(out), {table},
                    [it, d, idv = std::vector<int>(ids.begin(), ids.end())](Graph<T>& g, std::uint32_t self) {
                        const auto& gy = g.out_grad(self);
                        auto& gt = g.grad_ref(it);
                        for (std::size_t i = 0; i < idv.size(); ++i)
                            for (std::size_t j = 0; j < d; ++j)
                                gt[static_cast<std::size_t>(idv[i]) * d + j] += gy[i * d + j];
                    });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts)
{
    if (parts.empty()) shape_fail("concat_last", "no inputs");
    auto& g = *parts.front().graph;
    const std::size_t rows = parts.front().value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != rows)
            shape_fail("concat_last", "row count " + shape_str(p.dims()) + " vs " + shape_str(parts.front().dims()));
        widths.push_back(p.value().cols());
        total += widths.back();
    }
    Shape od = parts.front().dims();
    od.back() = total;
    Tensor<T> out(od);
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& v = parts[p].value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + off);
        off += widths[p];
    }
    std::vector<std::uint32_t> ids;
    for (const auto& p : parts) ids.push_back(p.id);
    return g.record(std::move(out), std::span<const Var<T>>(parts),
                    [ids, widths, rows, total](Graph<T>& g, std::uint32_t self) {
                        const auto& gy = g.out_grad(self);
                        std::size_t off = 0;
                        for (std::size_t p = 0; p < ids.size(); ++p) {
                            if (g.requires_grad(ids[p])) {
                                auto& gx = g.grad_ref(ids[p]);
                                for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t j = 0; j < widths[p]; ++j)
                                        gx[r * widths[p] + j] += gy[r * total + off + j];
                            }
                            off += widths[p];
                        }
                    });
}

template <typename T>
Var<T> slice_last(Var<T> a, std::size_t start, std::size_t len)
{
    auto& g = *a.graph;
    const auto& x = a.value();
    const std::size_t c = x.cols();
    if (start + len > c)
        shape_fail("slice_last", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                     ") outside " + shape_str(x.dims()));
    Shape od = x.dims();
    od.back() = len;
    Tensor<T> out(od);
    for (std::size_t r = 0; r < x.rows(); ++r) std::copy_n(x.data() + r * c + start, len, out.data() + r * len);
    const auto ia = a.id;
    return g.record(std::move(out), {a}, [ia, start, len, c](Graph<T>& g, std::uint32_t self) {
        const auto& gy = g.out_grad(self);
        auto& gx = g.grad_ref(ia);
        for (std::size_t r = 0; r < gy.size() / len; ++r)
            for (std::size_t j = 0; j < len; ++j) gx[r * c + start + j] += gy[r * len + j];
    });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape dims)
{
    auto& g = *a.graph;
    Tensor<T> out = a.value();
    out.reshape(std::move(dims));
    const auto ia = a.id;
    return g.record(std::move(out), {a}, [ia](Graph<T>& g, std::uint32_t self) {
        const auto& gy = g.out_grad(self);
        auto& gx = g.grad_ref(ia);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
}

template <typename T>
Var<T> permute(Var<T> a, const std::vector<std::size_t>& perm)
{
    auto& g = *a.graph;
    const auto& x = a.value();
    const std::size_t rank = x.rank();
    if (perm.size() != rank) shape_fail("permute", "perm size vs " + shape_str(x.dims()));
    std::vector<bool> seen(rank, false);
    for (auto p : perm) {
        if (p >= rank || seen[p]) shape_fail("permute", "invalid permutation for " + shape_str(x.dims()));
        seen[p] = true;
    }
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
    Shape od(rank);
    std::vector<std::size_t> src_stride(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        od[i] = x.dim(perm[i]);
        src_stride[i] = in_strides[perm[i]];
    }
    // gather index of each output element
    std::vector<std::size_t> src(x.size());
    {
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t o = 0; o < src.size(); ++o) {
            std::size_t s = 0;
            for (std::size_t i = 0; i < rank; ++i) s += idx[i] * src_stride[i];
            src[o] = s;
            for (std::size_t i = rank; i-- > 0;) {
                if (++idx[i] < od[i]) break;
                idx[i] = 0;
            }
        }
    }
    Tensor<T> out(od);
    for (std::size_t o = 0; o < src.size(); ++o) out[o] = x[src[o]];
    const auto ia = a.id;
    return g.record(std::move(out), {a}, [ia, src = std::move(src)](Graph<T>& g, std::uint32_t self) {
        const auto& gy = g.out_grad(self);
        auto& gx = g.grad_ref(ia);
        for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += gy[o];
    });
}

template <typename T>
Var<T> sum(Var<T> a)
{
    auto& g = *a.graph;
    T s = 0;
    for (T v : a.value().vec()) s += v;
    const auto ia = a.id;
    return g.record(Tensor<T>(Shape{}, std::vector<T>{s}), {a}, [ia](Graph<T>& g, std::uint32_t self) {
        const T gy = g.out_grad(self)[0];
        auto& gx = g.grad_ref(ia);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
    });
}

template <typename T>
Var<T> mean(Var<T> a)
{
    const auto n = a.value().size();
    if (n == 0) shape_fail("mean", "empty input");
    return scale(sum(a), T{1} / static_cast<T>(n));
}

template <typename T>
Var<T> sum_axis(Var<T> a, std::size_t axis)
{
    auto& g = *a.graph;
    const auto& x = a.value();
    if (axis >= x.rank()) shape_fail("sum_axis", "axis " + std::to_string(axis) + " of " + shape_str(x.dims()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t len = x.dim(axis);
    Shape od = x.dims();
    od.erase(od.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor<T> out(od);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
    const auto ia = a.id;
    return g.record(std::move(out), {a}, [ia, outer, inner, len](Graph<T>& g, std::uint32_t self) {
        const auto& gy = g.out_grad(self);
        auto& gx = g.grad_ref(ia);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i) gx[(o * len + l) * inner + i] += gy[o * inner + i];
    });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, std::span<const T> weights, Reduction reduction)
{
    auto& g = *logits.graph;
    const auto& x = logits.value();
    const std::size_t v = x.cols(), rows = x.rows();
    if (targets.size() != rows)
        shape_fail("cross_entropy", std::to_string(targets.size()) + " targets for logits " + shape_str(x.dims()));
    if (!weights.empty() && weights.size() != rows)
        shape_fail("cross_entropy", std::to_string(weights.size()) + " weights for logits " + shape_str(x.dims()));
    auto probs = std::make_shared<std::vector<T>>(x.size());
    std::vector<T> w(rows);
    T total = 0, wsum = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        w[r] = targets[r] < 0 ? T{0} : (weights.empty() ? T{1} : weights[r]);
        if (targets[r] >= static_cast<int>(v))
            shape_fail("cross_entropy", "target " + std::to_string(targets[r]) + " >= classes " + std::to_string(v));
        const T* xr = x.data() + r * v;
        T mx = *std::max_element(xr, xr + v);
        T z = 0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(xr[j] - mx);
        const T lse = mx + std::log(z);
        for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] = std::exp(xr[j] - lse);
        if (w[r] != T{0}) {
            total += w[r] * (lse - xr[targets[r]]);
            wsum += w[r];
        }
    }
    const T norm = reduction == Reduction::Mean ? (wsum > 0 ? T{1} / wsum : T{0}) : T{1};
    const auto ia = logits.id;
    return g.record(Tensor<T>(Shape{}, std::vector<T>{total * norm}), {logits},
                    [ia, v, norm, probs, w = std::move(w),
                     tg = std::vector<int>(targets.begin(), targets.end())](Graph<T>& g, std::uint32_t self) {
                        const T gy = g.out_grad(self)[0] * norm;
                        auto& gx = g.grad_ref(ia);
                        for (std::size_t r = 0; r < w.size(); ++r) {
                            if (w[r] == T{0}) continue;
                            const T s = gy * w[r];
                            for (std::size_t j = 0; j < v; ++j) gx[r * v + j] += s * (*probs)[r * v + j];
                            gx[r * v + static_cast<std::size_t>(tg[r])] -= s;
                        }
                    });
}

#define SLOTMORPH_INSTANTIATE_OPS(T)                                                                     \
    template Var<T> matmul(Var<T>, Var<T>);                                                              \
    template Var<T> bmm(Var<T>, Var<T>, bool);                                                           \
    template Var<T> add(Var<T>, Var<T>);                                                                 \
    template Var<T> sub(Var<T>, Var<T>);                                                                 \
    template Var<T> mul(Var<T>, Var<T>);                                                                 \
    template Var<T> add_bias(Var<T>, Var<T>);                                                            \
    template Var<T> mul_bias(Var<T>, Var<T>);                                                            \
    template Var<T> scale_rows(Var<T>, Var<T>);                                                          \
    template Var<T> scale(Var<T>, T);                                                                    \
    template Var<T> add_scalar(Var<T>, T);                                                               \
    template Var<T> exp(Var<T>);                                                                         \
    template Var<T> log(Var<T>);                                                                         \
    template Var<T> tanh(Var<T>);                                                                        \
    template Var<T> sigmoid(Var<T>);                                                                     \
    template Var<T> relu(Var<T>);                                                                        \
    template Var<T> clamp(Var<T>, T, T);                                                                 \
    template Var<T> softmax(Var<T>, const Tensor<T>*);                                                   \
    template Var<T> normalize(Var<T>);                                                                   \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                               \
    template Var<T> layer_norm(Var<T>, T);                                                               \
    template Var<T> embedding(Var<T>, std::span<const int>);                                             \
    template Var<T> concat_last(const std::vector<Var<T>>&);                                             \
    template Var<T> slice_last(Var<T>, std::size_t, std::size_t);                                        \
    template Var<T> reshape(Var<T>, Shape);                                                              \
    template Var<T> permute(Var<T>, const std::vector<std::size_t>&);                                    \
    template Var<T> sum(Var<T>);                                                                         \
    template Var<T> mean(Var<T>);                                                                        \
    template Var<T> sum_axis(Var<T>, std::size_t);                                                       \
    template Var<T> cross_entropy(Var<T>, std::span<const int>, std::span<const T>, Reduction);

SLOTMORPH_INSTANTIATE_OPS(float)
SLOTMORPH_INSTANTIATE_OPS(double)

}  // namespace slotmorph::op
