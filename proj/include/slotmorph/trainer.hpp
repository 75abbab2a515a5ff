#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotmorph/checkpoint.hpp"
#include "slotmorph/model.hpp"

namespace slotmorph {

// Sparsity weight schedule and optimizer settings.
//   lambda(e) = min(lambda_max, lambda0 * multiplier^floor(e / period_epochs))
// When gate_target > 0 the cap latches to the current lambda at the end of
// the first epoch whose mean open-gate count is at or below the target.
struct TrainSchedule {
    double lambda0 = 2e-5;
    double multiplier = 2.0;
    std::size_t period_epochs = 10;
    double lambda_max = std::numeric_limits<double>::infinity();
    double gate_target = 0.0;
    std::size_t epochs = 200;
    double lr = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const;
    KeyValues to_kv() const;
    static TrainSchedule from_kv(const KeyValues& kv);
};

double lambda_at(std::size_t epoch, const TrainSchedule& schedule);

struct EpochMetrics {
    std::size_t epoch = 0;
    std::size_t step = 0;  // optimizer steps completed so far
    double rec_loss = 0.0;
    double l0 = 0.0;
    double lambda = 0.0;
    double open_gates = 0.0;
};

// Metrics TSV: epoch, step, L_rec, L0, lambda, open_gates_mean.
std::string metrics_header();
std::string metrics_row(const EpochMetrics& m);

struct TrainState {
    ModelConfig model;
    TrainSchedule schedule;
    CharVocab vocab;
    ParamSet<float> params;
    ParamSet<float> adam_m;
    ParamSet<float> adam_v;
    std::size_t epoch = 0;  // next epoch to run
    std::size_t step = 0;
    double lambda_cap = std::numeric_limits<double>::infinity();
};

TrainState init_train_state(const ModelConfig& model, const TrainSchedule& schedule, const CharVocab& vocab);

Checkpoint to_checkpoint(const TrainState& state);
TrainState from_checkpoint(const Checkpoint& ckpt);
// Model-only view: config, vocab and parameters.
struct LoadedModel {
    ModelConfig config;
    CharVocab vocab;
    ParamSet<float> params;
};
LoadedModel model_from_checkpoint(const Checkpoint& ckpt);

class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Trainer {
public:
    explicit Trainer(TrainState state) : state_(std::move(state)) {}

    // One pass over `sequences` in the epoch's deterministic shuffle order.
    EpochMetrics run_epoch(const std::vector<CharSequence>& sequences);

    using EpochHook = std::function<void(const EpochMetrics&, const TrainState&)>;
    // Runs until schedule.epochs; hook fires after each epoch.
    std::vector<EpochMetrics> train(const std::vector<CharSequence>& sequences, const EpochHook& hook = {});

    const TrainState& state() const { return state_; }
    TrainState& state() { return state_; }

private:
    void adam_update(const std::map<std::string, Tensor<float>>& grads);

    TrainState state_;
};

struct EvalMetrics {
    double rec_loss = 0.0;
    double char_accuracy = 0.0;
    double open_gates = 0.0;
    std::size_t sentences = 0;
};

// Eval-mode pass: teacher-forced loss and accuracy, mean open gates.
EvalMetrics evaluate(const ParamSet<float>& params, const ModelConfig& cfg, const std::vector<CharSequence>& sequences,
                     std::size_t batch_size = 64);

}  // namespace slotmorph
