#pragma once

#include <functional>
#include <vector>

#include "slotmorph/trainer.hpp"

namespace slotmorph {

// Log-space bisection for the sparsity weight at which a model settles to
// `target` open gates. Each candidate fine-tunes a copy of the starting
// state at constant lambda for `epochs` epochs and measures eval-mode open
// gates on the same sentences.
struct CalibrationConfig {
    double target = 0.0;
    std::size_t epochs = 3;
    double lo = 1e-4;
    double hi = 1.0;
    std::size_t steps = 8;
};

struct CalibrationProbe {
    double lambda = 0.0;
    double open_gates = 0.0;
};

struct CalibrationResult {
    double lambda = 0.0;  // largest probed lambda whose open count stayed at or above target
    std::vector<CalibrationProbe> probes;
};

// Open gates after fine-tuning `from` at constant `lambda`.
EvalMetrics finetune_at(const TrainState& from, const std::vector<CharSequence>& sequences, double lambda,
                        std::size_t epochs);

CalibrationResult calibrate_lambda(const TrainState& from, const std::vector<CharSequence>& sequences,
                                   const CalibrationConfig& cfg,
                                   const std::function<void(const CalibrationProbe&)>& on_probe = {});

}  // namespace slotmorph
