#include "slotmorph/calibrate.hpp"

#include <cmath>
#include <stdexcept>

namespace slotmorph {

EvalMetrics finetune_at(const TrainState& from, const std::vector<CharSequence>& sequences, double lambda,
                        std::size_t epochs)
{
    TrainState st = from;
    st.schedule.lambda0 = lambda;
    st.schedule.multiplier = 1.0;
    st.schedule.lambda_max = std::numeric_limits<double>::infinity();
    st.schedule.gate_target = 0.0;
    st.schedule.epochs = st.epoch + epochs;
    st.lambda_cap = std::numeric_limits<double>::infinity();
    Trainer trainer(std::move(st));
    trainer.train(sequences);
    return evaluate(trainer.state().params, trainer.state().model, sequences);
}

CalibrationResult calibrate_lambda(const TrainState& from, const std::vector<CharSequence>& sequences,
                                   const CalibrationConfig& cfg, const std::function<void(const CalibrationProbe&)>& on_probe)
{
    if (!(cfg.lo > 0 && cfg.hi > cfg.lo)) throw std::invalid_argument("calibrate: need 0 < lo < hi");
    if (cfg.epochs == 0) throw std::invalid_argument("calibrate: epochs must be positive");
    CalibrationResult result;
    const auto probe = [&](double lambda) {
        CalibrationProbe p{lambda, finetune_at(from, sequences, lambda, cfg.epochs).open_gates};
        result.probes.push_back(p);
        if (on_probe) on_probe(p);
        return p.open_gates;
    };
    double lo = cfg.lo, hi = cfg.hi;
    if (probe(lo) < cfg.target) {
        result.lambda = lo;
        return result;
    }
    result.lambda = lo;
    if (probe(hi) >= cfg.target) {
        result.lambda = hi;
        return result;
    }
    for (std::size_t i = 0; i < cfg.steps; ++i) {
        const double mid = std::sqrt(lo * hi);
        if (probe(mid) >= cfg.target) {
            lo = mid;
            result.lambda = mid;
        } else {
            hi = mid;
        }
    }
    return result;
}

}  // namespace slotmorph
