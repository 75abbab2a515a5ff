#include "slotmorph/slot_attention.hpp"

#include <cmath>
#include <stdexcept>

namespace slotmorph {

std::string to_string(SlotInit mode)
{
    switch (mode) {
        case SlotInit::Shared: return "shared";
        case SlotInit::PerSlotMu: return "per_slot_mu";
        case SlotInit::Positional: return "positional";
    }
    return "?";
}

SlotInit parse_slot_init(const std::string& name)
{
    if (name == "shared") return SlotInit::Shared;
    if (name == "per_slot_mu") return SlotInit::PerSlotMu;
    if (name == "positional") return SlotInit::Positional;
    throw std::invalid_argument("unknown slot init mode '" + name + "' (shared | per_slot_mu | positional)");
}

void SlotAttentionConfig::validate() const
{
    if (num_slots == 0 || slot_dim == 0 || input_dim == 0 || mlp_hidden == 0)
        throw std::invalid_argument("slot attention: dimensions must be positive");
    if (iterations == 0) throw std::invalid_argument("slot attention: iterations must be >= 1");
    if (!(delta > 0)) throw std::invalid_argument("slot attention: delta must be positive");
    if (init == SlotInit::PerSlotMu && !(sigma_constant >= 0))
        throw std::invalid_argument("slot attention: sigma_constant must be non-negative");
}

std::size_t slot_position(std::size_t slot, const SlotAttentionConfig& cfg)
{
    return static_cast<std::size_t>(
        std::llround(static_cast<double>(slot) * static_cast<double>(cfg.max_len) / static_cast<double>(cfg.num_slots)));
}

template <typename T>
void init_slot_attention(ParamSet<T>& ps, const SlotAttentionConfig& cfg, Rng& rng)
{
    cfg.validate();
    const auto k = cfg.num_slots, ds = cfg.slot_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(ds));
    switch (cfg.init) {
        case SlotInit::PerSlotMu: ps.add_normal("slots.mu", {k, ds}, scale, rng); break;
        case SlotInit::Shared:
        case SlotInit::Positional:
            ps.add_normal("slots.mu", {1, ds}, scale, rng);
            ps.add_const("slots.log_sigma", {ds}, static_cast<T>(std::log(0.5)));
            break;
    }
    nn::init_layer_norm(ps, "sa.ln_in", cfg.input_dim);
    nn::init_layer_norm(ps, "sa.ln_slots", ds);
    nn::init_layer_norm(ps, "sa.ln_mlp", ds);
    ps.add_glorot("sa.q.w", ds, ds, rng);
    ps.add_glorot("sa.k.w", cfg.input_dim, ds, rng);
    ps.add_glorot("sa.v.w", cfg.input_dim, ds, rng);
    nn::init_gru(ps, "sa.gru", ds, ds, rng);
    nn::init_mlp(ps, "sa.mlp", ds, cfg.mlp_hidden, ds, rng);
}

template <typename T>
Var<T> init_slots(const Binding<T>& p, const SlotAttentionConfig& cfg, std::size_t batch, Rng* rng)
{
    auto& g = p.graph();
    const auto k = cfg.num_slots, ds = cfg.slot_dim;
    std::vector<int> rows(batch * k);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = cfg.init == SlotInit::PerSlotMu ? static_cast<int>(i % k) : 0;
    Var<T> mu = op::embedding(p("slots.mu"), rows);  // [B*K, Ds]
    if (cfg.init == SlotInit::Positional) {
        Tensor<T> pe({batch * k, ds});
        for (std::size_t s = 0; s < k; ++s) {
            const auto enc = nn::sinusoid(static_cast<double>(slot_position(s, cfg)), ds);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t j = 0; j < ds; ++j) pe.at(b * k + s, j) = static_cast<T>(enc[j]);
        }
        mu = op::add(mu, g.constant(std::move(pe)));
    }
    Var<T> slots = mu;
    if (rng) {
        Tensor<T> noise({batch * k, ds});
        for (auto& v : noise.vec()) v = static_cast<T>(rng->normal());
        if (cfg.init == SlotInit::PerSlotMu) {
            if (cfg.sigma_constant > 0)
                slots = op::add(mu, op::scale(g.constant(std::move(noise)), static_cast<T>(cfg.sigma_constant)));
        } else {
            slots = op::add(mu, op::mul_bias(g.constant(std::move(noise)), op::exp(p("slots.log_sigma"))));
        }
    }
    return op::reshape(slots, {batch, k, ds});
}

template <typename T>
SlotAttentionResult<T> slot_attention(const Binding<T>& p, const SlotAttentionConfig& cfg, Var<T> inputs,
                                      const std::vector<std::uint8_t>& mask, Var<T> slots)
{
    auto& g = p.graph();
    const auto& in = inputs.value();
    if (in.rank() != 3 || in.dim(2) != cfg.input_dim)
        throw ShapeError("slot_attention: inputs " + shape_str(in.dims()) + ", expected [B, N, " +
                         std::to_string(cfg.input_dim) + "]");
    const std::size_t batch = in.dim(0), n = in.dim(1), k = cfg.num_slots, ds = cfg.slot_dim;
    if (slots.value().dims() != Shape{batch, k, ds})
        throw ShapeError("slot_attention: slots " + shape_str(slots.dims()) + " vs batch " + std::to_string(batch));
    if (mask.size() != batch * n) throw ShapeError("slot_attention: mask size does not match inputs");

    // Row mask broadcast over the slot axis; masked input rows get zero weight.
    Tensor<T> row_mask({batch, n, k});
    for (std::size_t b = 0; b < batch; ++b) {
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            const T m = mask[b * n + i] ? T{1} : T{0};
            any = any || mask[b * n + i];
            for (std::size_t j = 0; j < k; ++j) row_mask[(b * n + i) * k + j] = m;
        }
        if (!any) throw std::invalid_argument("slot_attention: sequence " + std::to_string(b) + " is fully masked");
    }
    auto rmask = g.constant(std::move(row_mask));

    auto x = nn::layer_norm(p, "sa.ln_in", inputs);
    auto keys = op::matmul(x, p("sa.k.w"));    // [B, N, D]
    auto values = op::matmul(x, p("sa.v.w"));  // [B, N, D]
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ds)));

    SlotAttentionResult<T> out{slots, slots, slots};
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        auto prev = slots;
        auto q = op::matmul(nn::layer_norm(p, "sa.ln_slots", slots), p("sa.q.w"));  // [B, K, D]
        auto attn = op::softmax(op::scale(op::bmm(keys, q, true), inv_sqrt_d));    // [B, N, K]
        auto weighted = op::mul(op::add_scalar(attn, static_cast<T>(cfg.delta)), rmask);
        auto weights = op::normalize(op::permute(weighted, {0, 2, 1}));  // [B, K, N]
        auto updates = op::bmm(weights, values);                         // [B, K, D]
        auto h = nn::gru_cell(p, "sa.gru", op::reshape(prev, {batch * k, ds}), op::reshape(updates, {batch * k, ds}));
        h = op::add(h, nn::mlp(p, "sa.mlp", nn::layer_norm(p, "sa.ln_mlp", h)));
        slots = op::reshape(h, {batch, k, ds});
        out.attn = op::mul(attn, rmask);
        out.weights = weights;
    }
    out.slots = slots;
    return out;
}

#define SLOTMORPH_INSTANTIATE_SA(T)                                                                          \
    template void init_slot_attention<T>(ParamSet<T>&, const SlotAttentionConfig&, Rng&);                    \
    template Var<T> init_slots<T>(const Binding<T>&, const SlotAttentionConfig&, std::size_t, Rng*);         \
    template SlotAttentionResult<T> slot_attention<T>(const Binding<T>&, const SlotAttentionConfig&, Var<T>, \
                                                      const std::vector<std::uint8_t>&, Var<T>);

SLOTMORPH_INSTANTIATE_SA(float)
SLOTMORPH_INSTANTIATE_SA(double)

}  // namespace slotmorph
