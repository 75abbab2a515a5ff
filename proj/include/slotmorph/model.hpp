#pragma once

#include <cstdint>
#include <vector>

#include "slotmorph/corpus.hpp"
#include "slotmorph/gates.hpp"
#include "slotmorph/keyvalue.hpp"
#include "slotmorph/slot_attention.hpp"

namespace slotmorph {

// Character autoencoder: Transformer encoder -> slot attention -> hard-concrete
// gates -> one-layer Transformer decoder with a single cross-attention head
// over the slots.
struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 256;
    std::size_t enc_layers = 2;
    std::size_t enc_heads = 4;
    std::size_t dec_layers = 1;
    std::size_t dec_self_heads = 1;
    std::size_t dec_cross_heads = 1;
    std::size_t ff_dim = 0;  // 0 means 4 * d_model
    std::size_t num_slots = 64;
    std::size_t slot_dim = 128;
    std::size_t iterations = 1;
    std::size_t max_len = 128;
    SlotInit init = SlotInit::PerSlotMu;
    double sigma_constant = 0.5;
    double delta = 1e-8;
    GateConfig gate;
    double dropout = 0.1;
    // Exclude closed (g = 0) slots from decoder cross-attention instead of
    // attending to them as zero vectors.
    bool mask_closed_slots = false;

    std::size_t ff() const { return ff_dim ? ff_dim : 4 * d_model; }
    SlotAttentionConfig slot_attention() const;
    void validate() const;

    KeyValues to_kv() const;
    static ModelConfig from_kv(const KeyValues& kv);
};

enum class Mode { Train, Eval };

template <typename T>
ParamSet<T> init_model(const ModelConfig& cfg, std::uint64_t seed);

// Self-attention key mask [B*heads, W, W] hiding PAD positions.
template <typename T>
Tensor<T> encoder_key_mask(const Batch& batch, std::size_t heads);
// Lower-triangular mask [rows, W, W].
template <typename T>
Tensor<T> causal_mask(std::size_t rows, std::size_t width);

// Pre-LN Transformer layers. `dropout_rng` null disables dropout.
template <typename T>
Var<T> encoder_layer(const Binding<T>& p, const ModelConfig& cfg, std::size_t layer, Var<T> x,
                     const Tensor<T>& key_mask, Rng* dropout_rng);

template <typename T>
struct DecoderLayerOut {
    Var<T> out;
    Var<T> cross_attn;  // [B*heads, W, K]
};

// `slots` [B, K, D_slots]; cross_mask [B*heads, W, K] or null.
template <typename T>
DecoderLayerOut<T> decoder_layer(const Binding<T>& p, const ModelConfig& cfg, std::size_t layer, Var<T> y,
                                 Var<T> slots, const Tensor<T>& causal, const Tensor<T>* cross_mask, Rng* dropout_rng);

// [B, W, d_model]. Positions past each sequence's EOS are masked in
// self-attention. `rng` drives dropout in Train mode.
template <typename T>
Var<T> encode(const Binding<T>& p, const ModelConfig& cfg, const Batch& batch, Mode mode, Rng* rng);

template <typename T>
struct BottleneckResult {
    Var<T> initial_slots;
    SlotAttentionResult<T> attention;
    GateResult<T> gates;
};

// Train mode samples slot noise and gates from `rng`; Eval uses the slot
// distribution mean and expected gates, so it is deterministic.
template <typename T>
BottleneckResult<T> bottleneck(const Binding<T>& p, const ModelConfig& cfg, Var<T> encoded,
                               const std::vector<std::uint8_t>& mask, Mode mode, Rng* rng);

template <typename T>
struct DecodeResult {
    Var<T> logits;      // [B, W, V]
    Var<T> cross_attn;  // [B, W, K], last decoder layer, first cross head
};

// decoder_inputs holds B*W ids (BOS-prefixed). `gates` ([B, K]) is only read
// when mask_closed_slots is set.
template <typename T>
DecodeResult<T> decode(const Binding<T>& p, const ModelConfig& cfg, const std::vector<int>& decoder_inputs,
                       std::size_t batch, std::size_t width, Var<T> slots, const Tensor<T>* gates, Mode mode,
                       Rng* rng);

// Mean cross-entropy over non-PAD target positions.
template <typename T>
Var<T> reconstruction_loss(Var<T> logits, const Batch& batch);

template <typename T>
struct ForwardResult {
    Var<T> encoded;
    BottleneckResult<T> bottleneck;
    DecodeResult<T> decoded;
    Var<T> rec_loss;
    Var<T> l0;  // expected open gates per sentence, batch mean
    Var<T> total;
};

template <typename T>
ForwardResult<T> forward(const Binding<T>& p, const ModelConfig& cfg, const Batch& batch, Mode mode, Rng* rng,
                         double lambda);

// Count of gates with a nonzero expected value, per sentence.
std::vector<std::size_t> open_gate_counts(const Tensor<float>& log_alpha, const GateConfig& cfg);
std::vector<std::size_t> open_gate_counts(const Tensor<double>& log_alpha, const GateConfig& cfg);

struct CharAccuracy {
    std::size_t correct = 0;
    std::size_t total = 0;
    double value() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

template <typename T>
CharAccuracy teacher_forced_accuracy(const Tensor<T>& logits, const Batch& batch);

// Argmax decoding from BOS until EOS or max_len characters. `slots` holds the
// gated slots of one sentence, [K, D_slots].
template <typename T>
std::vector<int> greedy_reconstruct(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<T>& slots,
                                    std::size_t max_len);

}  // namespace slotmorph
