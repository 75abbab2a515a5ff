#include "slotmorph/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace slotmorph {

SlotAttentionConfig ModelConfig::slot_attention() const
{
    SlotAttentionConfig sa;
    sa.num_slots = num_slots;
    sa.slot_dim = slot_dim;
    sa.input_dim = d_model;
    sa.iterations = iterations;
    sa.delta = delta;
    sa.init = init;
    sa.sigma_constant = sigma_constant;
    sa.max_len = max_len;
    sa.mlp_hidden = slot_dim;
    return sa;
}

void ModelConfig::validate() const
{
    if (vocab_size <= CharVocab::kNumSpecials) throw std::invalid_argument("model: vocab_size too small");
    if (d_model == 0 || enc_layers == 0 || dec_layers == 0 || num_slots == 0 || slot_dim == 0 || max_len == 0)
        throw std::invalid_argument("model: dimensions must be positive");
    for (auto heads : {enc_heads, dec_self_heads, dec_cross_heads})
        if (heads == 0 || d_model % heads != 0)
            throw std::invalid_argument("model: head count must divide d_model");
    if (num_slots > max_len) throw std::invalid_argument("model: num_slots must not exceed max_len");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model: dropout must be in [0, 1)");
    gate.validate();
    slot_attention().validate();
}

KeyValues ModelConfig::to_kv() const
{
    return {
        {"model.vocab_size", std::to_string(vocab_size)},
        {"model.d_model", std::to_string(d_model)},
        {"model.enc_layers", std::to_string(enc_layers)},
        {"model.enc_heads", std::to_string(enc_heads)},
        {"model.dec_layers", std::to_string(dec_layers)},
        {"model.dec_self_heads", std::to_string(dec_self_heads)},
        {"model.dec_cross_heads", std::to_string(dec_cross_heads)},
        {"model.ff_dim", std::to_string(ff())},
        {"model.num_slots", std::to_string(num_slots)},
        {"model.slot_dim", std::to_string(slot_dim)},
        {"model.iterations", std::to_string(iterations)},
        {"model.max_len", std::to_string(max_len)},
        {"model.init", to_string(init)},
        {"model.sigma_constant", format_double(sigma_constant)},
        {"model.delta", format_double(delta)},
        {"model.gate_beta", format_double(gate.beta)},
        {"model.gate_epsilon", format_double(gate.epsilon)},
        {"model.dropout", format_double(dropout)},
        {"model.mask_closed_slots", mask_closed_slots ? "true" : "false"},
    };
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv)
{
    ModelConfig c;
    c.vocab_size = kv_size(kv, "model.vocab_size");
    c.d_model = kv_size(kv, "model.d_model");
    c.enc_layers = kv_size(kv, "model.enc_layers");
    c.enc_heads = kv_size(kv, "model.enc_heads");
    c.dec_layers = kv_size(kv, "model.dec_layers");
    c.dec_self_heads = kv_size(kv, "model.dec_self_heads");
    c.dec_cross_heads = kv_size(kv, "model.dec_cross_heads");
    c.ff_dim = kv_size(kv, "model.ff_dim");
    c.num_slots = kv_size(kv, "model.num_slots");
    c.slot_dim = kv_size(kv, "model.slot_dim");
    c.iterations = kv_size(kv, "model.iterations");
    c.max_len = kv_size(kv, "model.max_len");
    c.init = parse_slot_init(kv_string(kv, "model.init"));
    c.sigma_constant = kv_double(kv, "model.sigma_constant");
    c.delta = kv_double(kv, "model.delta");
    c.gate.beta = kv_double(kv, "model.gate_beta");
    c.gate.epsilon = kv_double(kv, "model.gate_epsilon");
    c.dropout = kv_double(kv, "model.dropout");
    c.mask_closed_slots = kv_bool(kv, "model.mask_closed_slots");
    c.validate();
    return c;
}

namespace {

template <typename T>
void init_attention(ParamSet<T>& ps, const std::string& prefix, std::size_t q_dim, std::size_t kv_dim,
                    std::size_t d_model, Rng& rng)
{
    nn::init_linear(ps, prefix + ".q", q_dim, d_model, rng);
    nn::init_linear(ps, prefix + ".k", kv_dim, d_model, rng);
    nn::init_linear(ps, prefix + ".v", kv_dim, d_model, rng);
    nn::init_linear(ps, prefix + ".o", d_model, d_model, rng);
}

template <typename T>
struct AttentionOut {
    Var<T> out;
    Var<T> weights;  // [B*H, Nq, Nk]
};

template <typename T>
AttentionOut<T> attention(const Binding<T>& p, const std::string& prefix, Var<T> q_in, Var<T> kv_in,
                          std::size_t heads, std::size_t d_model, const Tensor<T>* mask)
{
    const std::size_t batch = q_in.value().dim(0), nq = q_in.value().dim(1), nk = kv_in.value().dim(1);
    const std::size_t dh = d_model / heads;
    auto split = [&](Var<T> x, std::size_t n) {
        if (heads == 1) return x;
        x = op::permute(op::reshape(x, {batch, n, heads, dh}), {0, 2, 1, 3});
        return op::reshape(x, {batch * heads, n, dh});
    };
    auto q = split(nn::linear(p, prefix + ".q", q_in), nq);
    auto k = split(nn::linear(p, prefix + ".k", kv_in), nk);
    auto v = split(nn::linear(p, prefix + ".v", kv_in), nk);
    auto scores = op::scale(op::bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto w = op::softmax(scores, mask);
    auto o = op::bmm(w, v);
    if (heads > 1) o = op::reshape(op::permute(op::reshape(o, {batch, heads, nq, dh}), {0, 2, 1, 3}), {batch, nq, d_model});
    return {nn::linear(p, prefix + ".o", o), w};
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng* rng)
{
    if (!rng || rate <= 0.0) return x;
    Tensor<T> keep(x.dims());
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& v : keep.vec()) v = rng->uniform_open() < rate ? T{0} : scale;
    return op::mul(x, x.graph->constant(std::move(keep)));
}

template <typename T>
Var<T> feed_forward(const Binding<T>& p, const std::string& prefix, Var<T> x)
{
    return nn::linear(p, prefix + ".fc2", op::relu(nn::linear(p, prefix + ".fc1", x)));
}

template <typename T>
Var<T> embed(const Binding<T>& p, const std::string& table, const std::vector<int>& ids, std::size_t batch,
             std::size_t width, std::size_t d_model)
{
    auto& g = p.graph();
    auto e = op::scale(op::embedding(p(table), ids), static_cast<T>(std::sqrt(static_cast<double>(d_model))));
    Tensor<T> pe({batch * width, d_model});
    const auto table_pe = nn::sinusoid_table<T>(width, d_model);
    for (std::size_t b = 0; b < batch; ++b)
        std::copy(table_pe.vec().begin(), table_pe.vec().end(), pe.data() + b * width * d_model);
    return op::reshape(op::add(e, g.constant(std::move(pe))), {batch, width, d_model});
}

}  // namespace

template <typename T>
ParamSet<T> init_model(const ModelConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    Rng rng(seed);
    ParamSet<T> ps;
    const auto d = cfg.d_model;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    ps.add_normal("enc.embed", {cfg.vocab_size, d}, emb_std, rng);
    for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
        const auto pre = "enc.l" + std::to_string(l);
        nn::init_layer_norm(ps, pre + ".ln1", d);
        init_attention(ps, pre + ".attn", d, d, d, rng);
        nn::init_layer_norm(ps, pre + ".ln2", d);
        nn::init_mlp(ps, pre + ".ff", d, cfg.ff(), d, rng);
    }
    nn::init_layer_norm(ps, "enc.ln_f", d);
    init_slot_attention(ps, cfg.slot_attention(), rng);
    init_gates(ps, cfg.slot_dim, rng);
    ps.add_normal("dec.embed", {cfg.vocab_size, d}, emb_std, rng);
    for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
        const auto pre = "dec.l" + std::to_string(l);
        nn::init_layer_norm(ps, pre + ".ln1", d);
        init_attention(ps, pre + ".self", d, d, d, rng);
        nn::init_layer_norm(ps, pre + ".ln2", d);
        init_attention(ps, pre + ".cross", d, cfg.slot_dim, d, rng);
        nn::init_layer_norm(ps, pre + ".ln3", d);
        nn::init_mlp(ps, pre + ".ff", d, cfg.ff(), d, rng);
    }
    nn::init_layer_norm(ps, "dec.ln_f", d);
    nn::init_linear(ps, "dec.out", d, cfg.vocab_size, rng);
    return ps;
}

template <typename T>
Tensor<T> encoder_key_mask(const Batch& batch, std::size_t heads)
{
    const auto b = batch.size, w = batch.width;
    Tensor<T> key_mask({b * heads, w, w});
    for (std::size_t s = 0; s < b; ++s)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < w; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    key_mask[((s * heads + h) * w + i) * w + j] = batch.mask[s * w + j] ? T{1} : T{0};
    return key_mask;
}

template <typename T>
Tensor<T> causal_mask(std::size_t rows, std::size_t width)
{
    Tensor<T> causal({rows, width, width});
    for (std::size_t s = 0; s < rows; ++s)
        for (std::size_t i = 0; i < width; ++i)
            for (std::size_t j = 0; j <= i; ++j) causal[(s * width + i) * width + j] = T{1};
    return causal;
}

template <typename T>
Var<T> encoder_layer(const Binding<T>& p, const ModelConfig& cfg, std::size_t layer, Var<T> x,
                     const Tensor<T>& key_mask, Rng* dropout_rng)
{
    const auto pre = "enc.l" + std::to_string(layer);
    auto h = nn::layer_norm(p, pre + ".ln1", x);
    auto a = attention(p, pre + ".attn", h, h, cfg.enc_heads, cfg.d_model, &key_mask);
    x = op::add(x, dropout(a.out, cfg.dropout, dropout_rng));
    return op::add(x, dropout(feed_forward(p, pre + ".ff", nn::layer_norm(p, pre + ".ln2", x)), cfg.dropout,
                              dropout_rng));
}

template <typename T>
DecoderLayerOut<T> decoder_layer(const Binding<T>& p, const ModelConfig& cfg, std::size_t layer, Var<T> y,
                                 Var<T> slots, const Tensor<T>& causal, const Tensor<T>* cross_mask, Rng* dropout_rng)
{
    const auto pre = "dec.l" + std::to_string(layer);
    const auto d = cfg.d_model;
    auto h1 = nn::layer_norm(p, pre + ".ln1", y);
    auto sa = attention(p, pre + ".self", h1, h1, cfg.dec_self_heads, d, &causal);
    y = op::add(y, dropout(sa.out, cfg.dropout, dropout_rng));
    auto ca = attention(p, pre + ".cross", nn::layer_norm(p, pre + ".ln2", y), slots, cfg.dec_cross_heads, d,
                        cross_mask);
    y = op::add(y, dropout(ca.out, cfg.dropout, dropout_rng));
    y = op::add(y, dropout(feed_forward(p, pre + ".ff", nn::layer_norm(p, pre + ".ln3", y)), cfg.dropout,
                           dropout_rng));
    return {y, ca.weights};
}

template <typename T>
Var<T> encode(const Binding<T>& p, const ModelConfig& cfg, const Batch& batch, Mode mode, Rng* rng)
{
    if (batch.width > cfg.max_len + 1)
        throw std::invalid_argument("encode: sequence of " + std::to_string(batch.width - 1) +
                                    " characters exceeds max_len " + std::to_string(cfg.max_len));
    Rng* drop = mode == Mode::Train ? rng : nullptr;
    const auto b = batch.size, w = batch.width, d = cfg.d_model, heads = cfg.enc_heads;
    for (int id : batch.tokens)
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
            throw std::invalid_argument("encode: token id " + std::to_string(id) + " outside vocabulary");
    const auto key_mask = encoder_key_mask<T>(batch, heads);
    auto x = dropout(embed(p, "enc.embed", batch.tokens, b, w, d), cfg.dropout, drop);
    for (std::size_t l = 0; l < cfg.enc_layers; ++l) x = encoder_layer(p, cfg, l, x, key_mask, drop);
    return nn::layer_norm(p, "enc.ln_f", x);
}

template <typename T>
BottleneckResult<T> bottleneck(const Binding<T>& p, const ModelConfig& cfg, Var<T> encoded,
                               const std::vector<std::uint8_t>& mask, Mode mode, Rng* rng)
{
    const auto sa_cfg = cfg.slot_attention();
    Rng* noise = mode == Mode::Train ? rng : nullptr;
    if (mode == Mode::Train && !rng) throw std::invalid_argument("bottleneck: train mode needs an rng");
    auto init = init_slots(p, sa_cfg, encoded.value().dim(0), noise);
    auto sa = slot_attention(p, sa_cfg, encoded, mask, init);
    auto gates = gate_forward(p, cfg.gate, sa.slots,
                              mode == Mode::Train ? GateMode::TrainSample : GateMode::EvalExpectation, noise);
    return {init, sa, gates};
}

template <typename T>
DecodeResult<T> decode(const Binding<T>& p, const ModelConfig& cfg, const std::vector<int>& decoder_inputs,
                       std::size_t batch, std::size_t width, Var<T> slots, const Tensor<T>* gates, Mode mode, Rng* rng)
{
    Rng* drop = mode == Mode::Train ? rng : nullptr;
    const auto d = cfg.d_model, k = cfg.num_slots;
    if (decoder_inputs.size() != batch * width) throw ShapeError("decode: decoder_inputs size mismatch");
    if (slots.value().dims() != Shape{batch, k, cfg.slot_dim})
        throw ShapeError("decode: slots " + shape_str(slots.dims()));

    const auto causal = causal_mask<T>(batch * cfg.dec_self_heads, width);

    Tensor<T> cross_mask;
    if (cfg.mask_closed_slots) {
        if (!gates || gates->size() != batch * k) throw ShapeError("decode: gate values required for slot masking");
        cross_mask = Tensor<T>({batch * cfg.dec_cross_heads, width, k});
        for (std::size_t b = 0; b < batch; ++b) {
            bool any = false;
            for (std::size_t j = 0; j < k; ++j) any = any || (*gates)[b * k + j] > T{0};
            for (std::size_t h = 0; h < cfg.dec_cross_heads; ++h)
                for (std::size_t i = 0; i < width; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        cross_mask[(((b * cfg.dec_cross_heads + h) * width) + i) * k + j] =
                            (!any || (*gates)[b * k + j] > T{0}) ? T{1} : T{0};
        }
    }

    auto y = dropout(embed(p, "dec.embed", decoder_inputs, batch, width, d), cfg.dropout, drop);
    Var<T> cross_w;
    for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
        auto out = decoder_layer(p, cfg, l, y, slots, causal, cfg.mask_closed_slots ? &cross_mask : nullptr, drop);
        y = out.out;
        cross_w = out.cross_attn;
    }
    auto logits = nn::linear(p, "dec.out", nn::layer_norm(p, "dec.ln_f", y));
    if (cfg.dec_cross_heads > 1) {
        // first head of [B*H, W, K]
        auto& g = p.graph();
        const auto& w = cross_w.value();
        Tensor<T> head0({batch, width, k});
        for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(w.data() + b * cfg.dec_cross_heads * width * k, width * k, head0.data() + b * width * k);
        cross_w = g.constant(std::move(head0));
    }
    return {logits, cross_w};
}

template <typename T>
Var<T> reconstruction_loss(Var<T> logits, const Batch& batch)
{
    std::vector<int> targets(batch.tokens.size());
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = batch.mask[i] ? batch.tokens[i] : -1;
    const auto v = logits.value().cols();
    return op::cross_entropy(op::reshape(logits, {targets.size(), v}), std::span<const int>(targets));
}

template <typename T>
ForwardResult<T> forward(const Binding<T>& p, const ModelConfig& cfg, const Batch& batch, Mode mode, Rng* rng,
                         double lambda)
{
    ForwardResult<T> r;
    r.encoded = encode(p, cfg, batch, mode, rng);
    r.bottleneck = bottleneck(p, cfg, r.encoded, batch.mask, mode, rng);
    const auto& gates = r.bottleneck.gates.gates.value();
    r.decoded = decode(p, cfg, batch.decoder_inputs, batch.size, batch.width, r.bottleneck.gates.slots, &gates, mode, rng);
    r.rec_loss = reconstruction_loss(r.decoded.logits, batch);
    r.l0 = op::scale(l0_penalty(r.bottleneck.gates.log_alpha, cfg.gate), static_cast<T>(1.0 / static_cast<double>(batch.size)));
    r.total = lambda != 0.0 ? op::add(r.rec_loss, op::scale(r.l0, static_cast<T>(lambda))) : r.rec_loss;
    return r;
}

namespace {

template <typename T>
std::vector<std::size_t> open_counts(const Tensor<T>& log_alpha, const GateConfig& cfg)
{
    const std::size_t k = log_alpha.cols();
    std::vector<std::size_t> out(log_alpha.rows(), 0);
    for (std::size_t i = 0; i < log_alpha.size(); ++i)
        if (eval_gate(static_cast<double>(log_alpha[i]), cfg) > 0.0) ++out[i / k];
    return out;
}

}  // namespace

std::vector<std::size_t> open_gate_counts(const Tensor<float>& log_alpha, const GateConfig& cfg)
{
    return open_counts(log_alpha, cfg);
}
std::vector<std::size_t> open_gate_counts(const Tensor<double>& log_alpha, const GateConfig& cfg)
{
    return open_counts(log_alpha, cfg);
}

template <typename T>
CharAccuracy teacher_forced_accuracy(const Tensor<T>& logits, const Batch& batch)
{
    CharAccuracy acc;
    const std::size_t v = logits.cols();
    for (std::size_t i = 0; i < batch.tokens.size(); ++i) {
        if (!batch.mask[i]) continue;
        const T* row = logits.data() + i * v;
        const auto best = static_cast<int>(std::max_element(row, row + v) - row);
        acc.correct += best == batch.tokens[i];
        ++acc.total;
    }
    return acc;
}

template <typename T>
std::vector<int> greedy_reconstruct(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<T>& slots,
                                    std::size_t max_len)
{
    const auto k = cfg.num_slots, ds = cfg.slot_dim;
    if (slots.size() != k * ds) throw ShapeError("greedy_reconstruct: slots " + shape_str(slots.dims()));
    Tensor<T> gates({1, k});
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < ds; ++c)
            if (slots[j * ds + c] != T{0}) gates[j] = T{1};
    Tensor<T> slot_batch = slots;
    slot_batch.reshape({1, k, ds});
    std::vector<int> prefix{CharVocab::kBos};
    std::vector<int> out;
    while (out.size() < max_len) {
        Graph<T> g;
        Binding<T> p(g, params, false);
        auto dec = decode(p, cfg, prefix, 1, prefix.size(), g.constant(slot_batch), &gates, Mode::Eval, nullptr);
        const auto& logits = dec.logits.value();
        const std::size_t v = logits.cols();
        const T* row = logits.data() + (prefix.size() - 1) * v;
        // never emit PAD/BOS
        int best = CharVocab::kUnk;
        for (std::size_t c = CharVocab::kUnk; c < v; ++c)
            if (c != CharVocab::kBos && row[c] > row[best]) best = static_cast<int>(c);
        if (best == CharVocab::kEos) break;
        out.push_back(best);
        prefix.push_back(best);
    }
    return out;
}

#define SLOTMORPH_INSTANTIATE_MODEL(T)                                                                             \
    template ParamSet<T> init_model<T>(const ModelConfig&, std::uint64_t);                                         \
    template Tensor<T> encoder_key_mask<T>(const Batch&, std::size_t);                                             \
    template Tensor<T> causal_mask<T>(std::size_t, std::size_t);                                                   \
    template Var<T> encoder_layer<T>(const Binding<T>&, const ModelConfig&, std::size_t, Var<T>, const Tensor<T>&, \
                                     Rng*);                                                                        \
    template DecoderLayerOut<T> decoder_layer<T>(const Binding<T>&, const ModelConfig&, std::size_t, Var<T>,       \
                                                 Var<T>, const Tensor<T>&, const Tensor<T>*, Rng*);                \
    template Var<T> encode<T>(const Binding<T>&, const ModelConfig&, const Batch&, Mode, Rng*);                    \
    template BottleneckResult<T> bottleneck<T>(const Binding<T>&, const ModelConfig&, Var<T>,                      \
                                               const std::vector<std::uint8_t>&, Mode, Rng*);                      \
    template DecodeResult<T> decode<T>(const Binding<T>&, const ModelConfig&, const std::vector<int>&, std::size_t, \
                                       std::size_t, Var<T>, const Tensor<T>*, Mode, Rng*);                         \
    template Var<T> reconstruction_loss<T>(Var<T>, const Batch&);                                                  \
    template ForwardResult<T> forward<T>(const Binding<T>&, const ModelConfig&, const Batch&, Mode, Rng*, double); \
    template CharAccuracy teacher_forced_accuracy<T>(const Tensor<T>&, const Batch&);                              \
    template std::vector<int> greedy_reconstruct<T>(const ParamSet<T>&, const ModelConfig&, const Tensor<T>&,      \
                                                    std::size_t);

SLOTMORPH_INSTANTIATE_MODEL(float)
SLOTMORPH_INSTANTIATE_MODEL(double)

}  // namespace slotmorph
