#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slotmorph/nn.hpp"

namespace slotmorph {

// How the K initial slots are drawn.
//   Shared:     slot_i ~ N(mu, sigma), mu and sigma learned and shared
//   PerSlotMu:  slot_i ~ N(mu_i, sigma_constant), one learned mu per slot
//   Positional: slot_i ~ N(mu + PE(pos_i), sigma), pos_i = round(i * max_len / K)
enum class SlotInit { Shared, PerSlotMu, Positional };

std::string to_string(SlotInit mode);
SlotInit parse_slot_init(const std::string& name);

struct SlotAttentionConfig {
    std::size_t num_slots = 64;
    std::size_t slot_dim = 128;
    std::size_t input_dim = 256;
    std::size_t iterations = 1;
    double delta = 1e-8;
    SlotInit init = SlotInit::PerSlotMu;
    double sigma_constant = 0.5;
    std::size_t max_len = 128;
    std::size_t mlp_hidden = 128;

    void validate() const;
};

// Position a slot is anchored at in Positional mode.
std::size_t slot_position(std::size_t slot, const SlotAttentionConfig& cfg);

template <typename T>
void init_slot_attention(ParamSet<T>& ps, const SlotAttentionConfig& cfg, Rng& rng);

// Initial slots [B, K, D_slots]. With a null rng no noise is added and the
// result is the distribution mean.
template <typename T>
Var<T> init_slots(const Binding<T>& p, const SlotAttentionConfig& cfg, std::size_t batch, Rng* rng);

template <typename T>
struct SlotAttentionResult {
    Var<T> slots;  // [B, K, D_slots]
    Var<T> attn;   // [B, N, K], softmax over slots; zero rows at masked positions
    // Per-slot weighted-mean weights of the last iteration, [B, K, N].
    Var<T> weights;
};

// inputs [B, N, D_in]; mask has B*N entries, 1 on valid positions.
template <typename T>
SlotAttentionResult<T> slot_attention(const Binding<T>& p, const SlotAttentionConfig& cfg, Var<T> inputs,
                                      const std::vector<std::uint8_t>& mask, Var<T> slots);

}  // namespace slotmorph
