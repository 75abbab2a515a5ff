#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "slotmorph/gradcheck.hpp"
#include "slotmorph/nn.hpp"

using namespace slotmorph;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape dims, Rng& rng, double scale = 1.0)
{
    TD t(std::move(dims));
    for (auto& v : t.vec()) v = scale * rng.normal();
    return t;
}

}  // namespace

TEST_CASE("forward examples")
{
    Graph<double> g;
    auto a = g.constant(TD::from({2}, {1, 2}));
    auto b = g.constant(TD::from({2}, {3, 4}));
    auto s = op::scale(op::add(a, b), 0.5);
    CHECK(s.value().vec() == std::vector<double>{2, 3});

    auto sm = op::softmax(g.constant(TD({4})));
    for (double v : sm.value().vec()) CHECK(v == doctest::Approx(0.25));

    Rng rng(3);
    auto z = op::matmul(g.constant(TD({2, 3})), g.constant(random_tensor({3, 4}, rng)));
    CHECK(z.dims() == Shape{2, 4});
    for (double v : z.value().vec()) CHECK(v == 0.0);
}

TEST_CASE("shape errors name the op")
{
    Graph<double> g;
    auto a = g.constant(TD({2, 3}));
    auto b = g.constant(TD({2, 3}));
    try {
        (void)op::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
    }
    CHECK_THROWS_AS(op::add(a, g.constant(TD({3, 2}))), ShapeError);
}

TEST_CASE("backward examples")
{
    Graph<double> g;
    auto x = g.leaf(TD::from({3}, {0.5, -1, 2}));
    g.backward(op::sum(x));
    CHECK(g.grad(x).vec() == std::vector<double>{1, 1, 1});

    Graph<double> g2;
    auto x0 = g2.leaf(TD::from({1}, {0.0}));
    g2.backward(op::sum(op::sigmoid(x0)));
    CHECK(g2.grad(x0)[0] == doctest::Approx(0.25));

    Graph<double> g3;
    auto xi = g3.constant(TD::from({1, 2}, {1, 2}));
    auto w = g3.leaf(TD::from({2, 1}, {0.3, -0.7}));
    auto y = op::matmul(xi, w);
    g3.backward(y, TD({1, 1}, 1.0));
    CHECK(g3.grad(w).vec() == std::vector<double>{1, 2});

    CHECK_THROWS_AS(g3.backward(y, TD({2, 1}, 1.0)), ShapeError);
}

TEST_CASE("backward visits each recorded op once")
{
    Graph<double> g;
    auto x = g.leaf(TD::from({2}, {0.1, 0.2}));
    auto y = op::tanh(op::mul(x, x));
    auto z = op::sum(op::add(y, op::exp(x)));
    g.backward(z);
    CHECK(g.last_backward_visits() == 5);
}

TEST_CASE("grad_check examples")
{
    Rng rng(11);
    GradCheckOptions opts;
    const std::vector<int> targets{0, 3, 2, 1, 4};
    auto ce = grad_check(
        [&](Graph<double>&, const std::vector<Var<double>>& in) { return op::cross_entropy(in[0], std::span<const int>(targets)); },
        {random_tensor({5, 6}, rng)}, opts);
    CHECK(ce.passed);
    CHECK(ce.max_rel_error < 1e-4);

    auto ln = grad_check(
        [](Graph<double>&, const std::vector<Var<double>>& in) { return op::layer_norm(in[0], in[1], in[2]); },
        {random_tensor({4, 7}, rng), random_tensor({7}, rng), random_tensor({7}, rng)}, opts);
    CHECK(ln.passed);

    Graph<double> g;
    auto x = g.leaf(TD::from({1}, {0.5}));
    g.backward(op::sum(op::clamp(x, 0.0, 1.0)));
    CHECK(g.grad(x)[0] == 1.0);
}

TEST_CASE("grad_check rejects kinks")
{
    auto prog = [](Graph<double>&, const std::vector<Var<double>>& in) { return op::clamp(in[0], 0.0, 1.0); };
    CHECK_THROWS_AS(grad_check(prog, {TD::from({2}, {1.0, 0.3})}), NonDifferentiablePoint);
    auto relu = [](Graph<double>&, const std::vector<Var<double>>& in) { return op::relu(in[0]); };
    CHECK_THROWS_AS(grad_check(relu, {TD::from({1}, {0.0})}), NonDifferentiablePoint);
}

TEST_CASE("gru cell")
{
    ParamSet<double> ps;
    Rng rng(1);
    nn::init_gru(ps, "g", 1, 1, rng);
    for (auto& [_, t] : ps.all()) t.fill(0.0);
    {
        Graph<double> g;
        Binding<double> p(g, ps);
        auto h = nn::gru_cell(p, "g", g.constant(TD::from({1, 1}, {1.0})), g.constant(TD::from({1, 1}, {0.0})));
        CHECK(h.value()[0] == doctest::Approx(0.5));
    }
    // b = [z, r, n]; large z bias saturates the update gate.
    auto state = TD::from({1, 1}, {0.7});
    auto input = TD::from({1, 1}, {0.4});
    ps.at("g.w_x").fill(0.3);
    ps.at("g.b")[0] = 50.0;
    {
        Graph<double> g;
        Binding<double> p(g, ps);
        auto h = nn::gru_cell(p, "g", g.constant(state), g.constant(input));
        CHECK(h.value()[0] == doctest::Approx(0.7).epsilon(1e-12));
    }
    ps.at("g.b")[0] = -50.0;
    {
        Graph<double> g;
        Binding<double> p(g, ps);
        auto h = nn::gru_cell(p, "g", g.constant(state), g.constant(input));
        const double r = 1.0 / (1.0 + std::exp(-(0.3 * 0.4)));
        const double n = std::tanh(0.3 * 0.4 + r * 0.7 * 0.0);
        CHECK(h.value()[0] == doctest::Approx(n).epsilon(1e-12));
    }
    Graph<double> g;
    Binding<double> p(g, ps);
    CHECK_THROWS_AS(nn::gru_cell(p, "g", g.constant(TD({1, 2})), g.constant(TD({1, 1}))), ShapeError);
}

TEST_CASE("softmax rows are distributions")
{
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        Graph<double> g;
        auto s = op::softmax(g.constant(random_tensor({6, 9}, rng, 10.0))).value();
        for (std::size_t r = 0; r < 6; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < 9; ++c) {
                CHECK(s.at(r, c) > 0.0);
                CHECK(s.at(r, c) < 1.0);
                sum += s.at(r, c);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("layer norm statistics")
{
    Rng rng(8);
    Graph<double> g;
    auto y = op::layer_norm(g.constant(random_tensor({20, 16}, rng, 3.0)), 0.0).value();
    for (std::size_t r = 0; r < 20; ++r) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < 16; ++c) mean += y.at(r, c);
        mean /= 16;
        for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
        var /= 16;
        CHECK(std::abs(mean) <= 1e-6);
        CHECK(std::abs(var - 1.0) <= 1e-4);
    }
}

TEST_CASE("forward is bitwise deterministic")
{
    auto run = [] {
        Rng rng(21);
        Graph<float> g;
        auto x = g.constant(random_tensor({8, 12}, rng).cast<float>());
        auto w = g.constant(random_tensor({12, 5}, rng).cast<float>());
        return op::softmax(op::tanh(op::matmul(op::layer_norm(x), w))).value().vec();
    };
    CHECK(run() == run());
}

TEST_CASE("random programs pass grad_check")
{
    using Prog = std::function<Var<double>(Var<double>, const std::vector<Var<double>>&)>;
    // Unary stages over a [3, 4] value; extra inputs are [3, 4], [4, 4] and [4].
    const std::vector<Prog> stages{
        [](Var<double> x, const auto& in) { return op::add(x, in[1]); },
        [](Var<double> x, const auto& in) { return op::sub(x, in[1]); },
        [](Var<double> x, const auto& in) { return op::mul(x, in[1]); },
        [](Var<double> x, const auto&) { return op::scale(x, -1.7); },
        [](Var<double> x, const auto&) { return op::exp(op::tanh(x)); },
        [](Var<double> x, const auto&) { return op::log(op::add_scalar(op::mul(x, x), 0.5)); },
        [](Var<double> x, const auto&) { return op::tanh(x); },
        [](Var<double> x, const auto&) { return op::sigmoid(x); },
        [](Var<double> x, const auto&) { return op::relu(x); },
        [](Var<double> x, const auto&) { return op::clamp(x, -0.5, 0.5); },
        [](Var<double> x, const auto&) { return op::softmax(x); },
        [](Var<double> x, const auto&) { return op::layer_norm(x); },
        [](Var<double> x, const auto& in) { return op::matmul(x, in[2]); },
        [](Var<double> x, const auto& in) { return op::add_bias(x, in[3]); },
        [](Var<double> x, const auto& in) { return op::mul_bias(x, in[3]); },
        [](Var<double> x, const auto&) {
            return op::concat_last(std::vector<Var<double>>{op::slice_last(x, 2, 2), op::slice_last(x, 0, 2)});
        },
        [](Var<double> x, const auto&) {
            return op::reshape(op::permute(op::reshape(x, {3, 2, 2}), {0, 2, 1}), {3, 4});
        },
        [](Var<double> x, const auto&) {
            auto s = op::sum_axis(x, 1);  // [3]
            return op::scale_rows(x, op::tanh(s));
        },
        [](Var<double> x, const auto&) { return op::add_scalar(op::scale(x, 0.5), 0.25); },
    };
    Rng rng(2024);
    std::size_t passed = 0, kinks = 0;
    double worst = 0;
    while (passed < 1000) {
        const auto depth = 1 + rng.below(6);
        std::vector<std::size_t> chosen;
        for (std::size_t i = 0; i < depth; ++i) chosen.push_back(rng.below(stages.size()));
        const bool mean_out = rng.below(2) == 0;
        auto prog = [&](Graph<double>&, const std::vector<Var<double>>& in) {
            Var<double> x = in[0];
            for (auto c : chosen) x = stages[c](x, in);
            return mean_out ? op::mean(x) : x;
        };
        std::vector<TD> inputs{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({4, 4}, rng, 0.5),
                               random_tensor({4}, rng)};
        try {
            auto rep = grad_check(prog, inputs, {.seed = passed});
            worst = std::max(worst, rep.max_rel_error);
            CHECK_MESSAGE(rep.passed, rep.worst);
            ++passed;
        } catch (const NonDifferentiablePoint&) {
            ++kinks;
        }
    }
    MESSAGE("worst relative error " << worst << ", redrawn at kinks " << kinks);
    CHECK(worst <= 1e-4);
}
