#pragma once

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotmorph/params.hpp"

namespace slotmorph {

struct GradCheckOptions {
    double eps = 1e-6;
    double rtol = 1e-4;
    double atol = 1e-8;
    // Coordinates sampled per input; 0 checks every coordinate.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    // max |a - n| / max(|a|, |n|, atol / rtol): passing means <= rtol.
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::string worst;
    bool passed = false;
};

// Raised when the program hits a kink (relu at 0, clamp at a bound) within
// the finite-difference step of the evaluation point.
class NonDifferentiablePoint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using GradProgram = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

// Compares reverse-mode gradients of sum(r * program(inputs)) against central
// differences, where r is a fixed random projection of the output.
GradCheckReport grad_check(const GradProgram& program, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options = {});

using ParamProgram = std::function<Var<double>(const Binding<double>&, const std::vector<Var<double>>&)>;

// Same check where a ParamSet joins the differentiated inputs.
GradCheckReport grad_check_params(const ParamProgram& program, const ParamSet<double>& params,
                                  const std::vector<Tensor<double>>& inputs, const GradCheckOptions& options = {});

}  // namespace slotmorph
