#include "slotmorph/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace slotmorph {

namespace {

double projected_value(const GradProgram& program, const std::vector<Tensor<double>>& inputs,
                       const Tensor<double>& projection)
{
    Graph<double> g;
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(g.constant(t));
    const auto& out = program(g, leaves).value();
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += projection[i] * out[i];
    return s;
}

}  // namespace

GradCheckReport grad_check(const GradProgram& program, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options)
{
    Graph<double> g;
    g.set_kink_margin(10.0 * options.eps);
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    auto out = program(g, leaves);
    if (!g.kinks().empty())
        throw NonDifferentiablePoint("grad_check: point is not differentiable: " + g.kinks().front());

    Rng rng(options.seed);
    Tensor<double> projection(out.dims());
    for (auto& v : projection.vec()) v = rng.uniform(-1.0, 1.0);
    g.backward(out, projection);

    GradCheckReport report;
    const double floor = options.atol / options.rtol;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto analytic = g.grad(leaves[k]);
        std::vector<std::size_t> coords(inputs[k].size());
        std::iota(coords.begin(), coords.end(), 0);
        if (options.max_coords && coords.size() > options.max_coords) {
            for (std::size_t i = 0; i < options.max_coords; ++i)
                std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
            coords.resize(options.max_coords);
        }
        auto probe = inputs;
        for (auto c : coords) {
            const double x0 = probe[k][c];
            probe[k][c] = x0 + options.eps;
            const double fp = projected_value(program, probe, projection);
            probe[k][c] = x0 - options.eps;
            const double fm = projected_value(program, probe, projection);
            probe[k][c] = x0;
            const double numeric = (fp - fm) / (2.0 * options.eps);
            const double a = analytic[c];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel > report.max_rel_error || report.worst.empty()) {
                report.max_rel_error = rel;
                std::ostringstream os;
                os << "input " << k << " coord " << c << ": analytic " << a << " numeric " << numeric;
                report.worst = os.str();
            }
            ++report.checked;
        }
    }
    report.passed = report.max_rel_error <= options.rtol;
    return report;
}

GradCheckReport grad_check_params(const ParamProgram& program, const ParamSet<double>& params,
                                  const std::vector<Tensor<double>>& inputs, const GradCheckOptions& options)
{
    std::vector<std::string> names;
    std::vector<Tensor<double>> all = inputs;
    for (const auto& [name, value] : params.all()) {
        names.push_back(name);
        all.push_back(value);
    }
    const std::size_t n_inputs = inputs.size();
    GradProgram wrapped = [&](Graph<double>& g, const std::vector<Var<double>>& leaves) {
        std::map<std::string, Var<double>> bound;
        for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], leaves[n_inputs + i]);
        Binding<double> binding(g, std::move(bound));
        return program(binding, std::vector<Var<double>>(leaves.begin(), leaves.begin() + n_inputs));
    };
    return grad_check(wrapped, all, options);
}

}  // namespace slotmorph
