#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotmorph/bpe.hpp"
#include "slotmorph/model.hpp"

namespace slotmorph {

class ProbeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Assignment {
    std::vector<std::size_t> col_of_row;
    double cost = 0.0;  // sum over rows in row order
};

// Minimum-cost perfect matching on a square matrix (Kuhn-Munkres with
// potentials, O(n^3)).
Assignment hungarian(const std::vector<std::vector<double>>& cost);

struct ProbeConfig {
    std::size_t hidden = 0;  // 0 means the slot dimension
    std::size_t epochs = 50;
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

// Two affine layers with ReLU, shared across slots: D_slots -> hidden -> S+1.
template <typename T>
ParamSet<T> init_probe(std::size_t slot_dim, std::size_t hidden, std::size_t num_outputs, std::uint64_t seed);

// slots [N, K, D] -> logits [N*K, S+1]
template <typename T>
Var<T> probe_logits(const Binding<T>& p, Var<T> slots);

// cost[i][j] = cross-entropy of slot i's prediction against target j.
template <typename T>
std::vector<std::vector<double>> probe_cost(const Tensor<T>& logits, std::size_t sentence, std::size_t num_slots,
                                            const std::vector<int>& targets);

template <typename T>
struct ProbeLoss {
    Var<T> loss;  // matched cross-entropy, summed over slots and sentences
    std::vector<Assignment> matching;
};

// slots [N, K, D] are treated as constants; targets hold N lists of K ids.
template <typename T>
ProbeLoss<T> probe_loss(const Binding<T>& p, Var<T> slots, const std::vector<std::vector<int>>& targets);

struct ProbeMetrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t sentences = 0;
    // Mean of per-sentence F1.
    double sentence_f1 = 0.0;

    double precision() const;
    double recall() const;
    double f1() const;
};

// Per matched pair: predicted and target non-empty with equal labels -> TP;
// predicted non-empty otherwise -> FP; predicted empty, target non-empty ->
// FN; both empty -> TN. A target of OTHER never counts as TP.
void score_matching(const std::vector<int>& predicted, const std::vector<int>& targets, const Assignment& match,
                    const LabelVocab& labels, ProbeMetrics& into);

struct SentencePrediction {
    std::size_t sentence = 0;
    std::vector<int> predicted;    // per slot
    std::vector<int> matched;      // target matched to each slot
};

struct ProbeRun {
    ParamSet<float> params;
    std::vector<double> epoch_loss;  // mean matched loss per sentence
};

// slots [N, K, D], frozen.
ProbeRun train_probe(const Tensor<float>& slots, const ProbeTargets& targets, const LabelVocab& labels,
                     const ProbeConfig& cfg);

ProbeMetrics evaluate_probe(const ParamSet<float>& probe, const Tensor<float>& slots, const ProbeTargets& targets,
                            const LabelVocab& labels, std::vector<SentencePrediction>* predictions = nullptr);

// Eval-mode gated slots for every sequence, [N, K, D_slots].
Tensor<float> extract_slots(const ParamSet<float>& params, const ModelConfig& cfg,
                            const std::vector<CharSequence>& sequences, std::size_t batch_size = 64);

// Slots from a freshly initialised model.
Tensor<float> baseline_slots(const ModelConfig& cfg, std::uint64_t seed, const std::vector<CharSequence>& sequences,
                             std::size_t batch_size = 64);

// Rows keep only the given sentence indices.
Tensor<float> select_sentences(const Tensor<float>& slots, const std::vector<std::size_t>& indices);

struct ProbeReportRow {
    std::string task;   // BPE | SEG
    std::string split;
    std::string model;  // trained | untrained
    ProbeMetrics metrics;
    std::size_t skipped = 0;
};

std::string probe_report_header();
std::string probe_report_row(const ProbeReportRow& row);

void write_predictions(std::ostream& os, const std::vector<SentencePrediction>& predictions,
                       const std::vector<std::string>& sentences, const LabelVocab& labels);

}  // namespace slotmorph
