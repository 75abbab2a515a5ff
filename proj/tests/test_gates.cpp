#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "slotmorph/gates.hpp"
#include "slotmorph/gradcheck.hpp"

using namespace slotmorph;
using TD = Tensor<double>;

TEST_CASE("eval gate values")
{
    GateConfig cfg;
    CHECK(eval_gate(0.0, cfg) == 0.5);
    CHECK(eval_gate(50.0, cfg) == 1.0);
    CHECK(eval_gate(-50.0, cfg) == 0.0);
    CHECK(stretch_rectify(concrete_sample(60.0, 0.5, cfg), cfg) == 1.0);
    CHECK(stretch_rectify(concrete_sample(-60.0, 0.5, cfg), cfg) == 0.0);
}

TEST_CASE("config validation")
{
    CHECK_THROWS_AS((GateConfig{0.0, 0.1}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((GateConfig{-1.0, 0.1}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((GateConfig{0.5, 0.0}.validate()), std::invalid_argument);
    CHECK_NOTHROW(GateConfig{}.validate());
}

TEST_CASE("gate_forward modes")
{
    ParamSet<double> ps;
    Rng init(1);
    init_gates(ps, 4, init);
    Rng r0(2);
    TD slots({2, 3, 4});
    for (auto& v : slots.vec()) v = r0.normal();
    GateConfig cfg;

    auto run = [&](GateMode mode, Rng* rng) {
        Graph<double> g;
        Binding<double> p(g, ps);
        auto res = gate_forward(p, cfg, g.constant(slots), mode, rng);
        return std::make_pair(res.gates.value(), res.slots.value());
    };
    Rng a(7), b(7);
    CHECK(run(GateMode::TrainSample, &a).first.vec() == run(GateMode::TrainSample, &b).first.vec());
    CHECK(run(GateMode::EvalExpectation, nullptr).first.vec() == run(GateMode::EvalExpectation, nullptr).first.vec());
    CHECK_THROWS(run(GateMode::TrainSample, nullptr));

    auto [gates, gated] = run(GateMode::EvalExpectation, nullptr);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(gates[i] >= 0.0);
        CHECK(gates[i] <= 1.0);
        for (std::size_t d = 0; d < 4; ++d) CHECK(gated[i * 4 + d] == doctest::Approx(gates[i] * slots[i * 4 + d]));
    }
}

TEST_CASE("closed gate zeroes its slot")
{
    ParamSet<double> ps;
    ps.add("gate.w", TD::from({2}, {1.0, 0.0}));
    TD slots = TD::from({1, 2, 2}, {-100.0, 3.0, 100.0, 3.0});
    Graph<double> g;
    Binding<double> p(g, ps);
    auto res = gate_forward(p, GateConfig{}, g.constant(slots), GateMode::EvalExpectation, nullptr);
    CHECK(res.gates.value()[0] == 0.0);
    CHECK(res.slots.value()[0] == 0.0);
    CHECK(res.slots.value()[1] == 0.0);
    CHECK(res.gates.value()[1] == 1.0);
}

TEST_CASE("l0 penalty closed form")
{
    GateConfig cfg;
    Graph<double> g;
    auto la = g.leaf(TD::from({1, 3}, {-1.0, 0.0, 2.0}));
    auto pen = l0_penalty(la, cfg);
    double expect = 0;
    for (double v : {-1.0, 0.0, 2.0}) expect += open_probability(v, cfg);
    CHECK(pen.value().item() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(open_probability(0.0, cfg) == doctest::Approx(1.0 / (1.0 + std::pow(0.1 / 1.1, 2.0 / 3.0))));
}

TEST_CASE("gate gradients")
{
    Rng rng(13);
    GateConfig cfg;
    for (int rep = 0; rep < 10; ++rep) {
        TD la({2, 4}), u({2, 4});
        for (auto& v : la.vec()) v = rng.uniform(-3, 3);
        for (auto& v : u.vec()) v = rng.uniform(0.05, 0.95);
        try {
            auto rep_s = grad_check(
                [&](Graph<double>&, const std::vector<Var<double>>& in) { return sample_gates(in[0], u, cfg); }, {la});
            CHECK(rep_s.passed);
        } catch (const NonDifferentiablePoint&) {
        }
        auto rep_l0 = grad_check(
            [&](Graph<double>&, const std::vector<Var<double>>& in) { return l0_penalty(in[0], cfg); }, {la});
        CHECK(rep_l0.passed);
    }
}
