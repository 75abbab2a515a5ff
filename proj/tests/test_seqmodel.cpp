#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "slotmorph/adam.hpp"
#include "slotmorph/gradcheck.hpp"
#include "slotmorph/model.hpp"

using namespace slotmorph;

namespace {

const std::vector<std::string> kLines{"the cat", "a dog ran", "cats", "the dog sat on a mat"};

ModelConfig tiny_config(std::size_t vocab)
{
    ModelConfig c;
    c.vocab_size = vocab;
    c.d_model = 16;
    c.enc_heads = 2;
    c.ff_dim = 24;
    c.num_slots = 5;
    c.slot_dim = 8;
    c.max_len = 24;
    c.dropout = 0.0;
    return c;
}

struct Fixture {
    CharVocab vocab = CharVocab::build(kLines, 0);
    std::vector<CharSequence> seqs = encode_lines(kLines, vocab, 24).sequences;
    ModelConfig cfg = tiny_config(vocab.size());
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "config round trip and validation")
{
    cfg.init = SlotInit::Positional;
    cfg.mask_closed_slots = true;
    auto back = ModelConfig::from_kv(cfg.to_kv());
    CHECK(back.to_kv() == cfg.to_kv());
    auto bad = cfg;
    bad.num_slots = 30;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.enc_heads = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE_FIXTURE(Fixture, "encoder shapes and masking")
{
    auto params = init_model<double>(cfg, 1);
    auto run = [&](const std::vector<std::size_t>& idx) {
        Graph<double> g;
        Binding<double> p(g, params);
        auto batch = make_batch(seqs, idx);
        return std::make_pair(encode(p, cfg, batch, Mode::Eval, nullptr).value(), batch.width);
    };
    auto [alone, w_alone] = run({2});
    CHECK(w_alone == 5);
    CHECK(alone.dims() == Shape{1, 5, 16});
    auto [padded, w_pad] = run({2, 3});
    REQUIRE(w_pad > w_alone);
    for (std::size_t t = 0; t < w_alone; ++t)
        for (std::size_t d = 0; d < 16; ++d) CHECK(padded[t * 16 + d] == doctest::Approx(alone[t * 16 + d]).epsilon(1e-12));

    auto [twice, _] = run({1, 1});
    for (std::size_t i = 0; i < twice.size() / 2; ++i) CHECK(twice[i] == twice[i + twice.size() / 2]);

    auto small = cfg;
    small.max_len = 4;
    Graph<double> g;
    Binding<double> p(g, params);
    CHECK_THROWS_AS(encode(p, small, make_batch(seqs, {3}), Mode::Eval, nullptr), std::invalid_argument);
}

TEST_CASE("bottleneck shape under defaults")
{
    ModelConfig cfg;
    cfg.vocab_size = 10;
    cfg.max_len = 128;
    auto params = init_model<float>(cfg, 0);
    auto vocab = CharVocab::build({"abcdef"}, 0);
    auto seqs = encode_lines({"abc fed"}, vocab, 128).sequences;
    Graph<float> g;
    Binding<float> p(g, params);
    auto batch = make_batch(seqs, {0});
    auto bn = bottleneck(p, cfg, encode(p, cfg, batch, Mode::Eval, nullptr), batch.mask, Mode::Eval, nullptr);
    CHECK(bn.gates.slots.dims() == Shape{1, 64, 128});
}

TEST_CASE_FIXTURE(Fixture, "closed gates and eval determinism")
{
    auto params = init_model<double>(cfg, 2);
    for (auto& v : params.at("gate.w").vec()) v *= 200.0;
    auto batch = make_batch(seqs, {0, 1, 2, 3});
    auto run = [&] {
        Graph<double> g;
        Binding<double> p(g, params);
        auto bn = bottleneck(p, cfg, encode(p, cfg, batch, Mode::Eval, nullptr), batch.mask, Mode::Eval, nullptr);
        return std::make_pair(bn.gates.gates.value(), bn.gates.slots.value());
    };
    auto [gates, slots] = run();
    std::size_t closed = 0;
    for (std::size_t i = 0; i < gates.size(); ++i) {
        if (gates[i] != 0.0) continue;
        ++closed;
        for (std::size_t d = 0; d < cfg.slot_dim; ++d) CHECK(slots[i * cfg.slot_dim + d] == 0.0);
    }
    CHECK(closed > 0);
    CHECK(run().second.vec() == slots.vec());
}

TEST_CASE_FIXTURE(Fixture, "decoder causality and cross-attention rows")
{
    auto params = init_model<double>(cfg, 3);
    auto batch = make_batch(seqs, {3});
    Rng rng(4);
    Tensor<double> slots({1, cfg.num_slots, cfg.slot_dim});
    for (auto& v : slots.vec()) v = rng.normal();
    auto run = [&](const std::vector<int>& inputs, const Tensor<double>& s) {
        Graph<double> g;
        Binding<double> p(g, params);
        auto out = decode<double>(p, cfg, inputs, 1, batch.width, g.constant(s), nullptr, Mode::Eval, nullptr);
        return std::make_pair(out.logits.value(), out.cross_attn.value());
    };
    auto [logits, cross] = run(batch.decoder_inputs, slots);
    const std::size_t v = cfg.vocab_size;
    for (std::size_t t = 0; t + 1 < batch.width; ++t) {
        auto perturbed = batch.decoder_inputs;
        for (std::size_t u = t + 1; u < batch.width; ++u) perturbed[u] = static_cast<int>((perturbed[u] + 3) % v);
        auto [l2, _] = run(perturbed, slots);
        for (std::size_t s = 0; s <= t; ++s)
            for (std::size_t c = 0; c < v; ++c) CHECK(l2[s * v + c] == logits[s * v + c]);
    }
    for (std::size_t t = 0; t < batch.width; ++t) {
        double sum = 0;
        for (std::size_t j = 0; j < cfg.num_slots; ++j) sum += cross[t * cfg.num_slots + j];
        CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
    auto [zero_logits, _] = run(batch.decoder_inputs, Tensor<double>(slots.dims()));
    for (double x : zero_logits.vec()) CHECK(std::isfinite(x));
}

TEST_CASE_FIXTURE(Fixture, "reconstruction loss")
{
    cfg.vocab_size = 30;
    auto batch = make_batch(seqs, {0, 3});
    Graph<double> g;
    auto uniform = g.constant(Tensor<double>({2, batch.width, 30}));
    CHECK(reconstruction_loss(uniform, batch).value().item() == doctest::Approx(std::log(30.0)));

    Tensor<double> sharp({2, batch.width, 30});
    for (std::size_t i = 0; i < batch.tokens.size(); ++i) sharp[i * 30 + static_cast<std::size_t>(batch.tokens[i])] = 60.0;
    CHECK(reconstruction_loss(g.constant(sharp), batch).value().item() < 1e-20);

    // Extra PAD columns leave the loss unchanged.
    Batch wide = batch;
    wide.width = batch.width + 2;
    wide.tokens.assign(2 * wide.width, CharVocab::kPad);
    wide.mask.assign(2 * wide.width, 0);
    Tensor<double> logits({2, batch.width, 30}), wide_logits({2, wide.width, 30});
    Rng rng(1);
    for (auto& x : logits.vec()) x = rng.normal();
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < batch.width; ++t) {
            wide.tokens[b * wide.width + t] = batch.tokens[b * batch.width + t];
            wide.mask[b * wide.width + t] = batch.mask[b * batch.width + t];
            for (std::size_t c = 0; c < 30; ++c) wide_logits[(b * wide.width + t) * 30 + c] = logits[(b * batch.width + t) * 30 + c];
        }
    CHECK(reconstruction_loss(g.constant(wide_logits), wide).value().item() ==
          doctest::Approx(reconstruction_loss(g.constant(logits), batch).value().item()).epsilon(1e-14));
}

TEST_CASE_FIXTURE(Fixture, "every parameter group receives gradient")
{
    cfg.init = SlotInit::Shared;
    auto params = init_model<double>(cfg, 5);
    auto batch = make_batch(seqs, {0, 1, 2, 3});
    Graph<double> g;
    Binding<double> p(g, params);
    Rng rng(6);
    auto fw = forward(p, cfg, batch, Mode::Train, &rng, 0.01);
    g.backward(fw.total);
    const auto grads = p.grads();
    CHECK(grads.size() == params.all().size());
    for (const auto& [name, gr] : grads) {
        double mx = 0;
        for (double x : gr.vec()) mx = std::max(mx, std::abs(x));
        CHECK_MESSAGE(mx > 0.0, name);
    }
}

TEST_CASE_FIXTURE(Fixture, "lambda zero leaves gradients untouched")
{
    auto params = init_model<double>(cfg, 7);
    auto batch = make_batch(seqs, {0, 1});
    auto grads_of = [&](bool use_total) {
        Graph<double> g;
        Binding<double> p(g, params);
        Rng rng(8);
        auto fw = forward(p, cfg, batch, Mode::Train, &rng, 0.0);
        g.backward(use_total ? fw.total : fw.rec_loss);
        return p.grads();
    };
    auto a = grads_of(true), b = grads_of(false);
    for (const auto& [name, gr] : a) CHECK(gr.vec() == b.at(name).vec());
}

TEST_CASE_FIXTURE(Fixture, "full model gradient check")
{
    cfg.d_model = 8;
    cfg.ff_dim = 8;
    cfg.num_slots = 3;
    cfg.slot_dim = 4;
    cfg.init = SlotInit::Shared;
    auto params = init_model<double>(cfg, 9);
    auto batch = make_batch(seqs, {0, 2});
    GradCheckOptions opts;
    opts.max_coords = 6;
    auto rep = grad_check_params(
        [&](const Binding<double>& p, const std::vector<Var<double>>&) {
            Rng rng(10);
            return forward(p, cfg, batch, Mode::Train, &rng, 0.05).total;
        },
        params, {}, opts);
    CHECK_MESSAGE(rep.passed, rep.worst << " " << rep.max_rel_error);
}

TEST_CASE_FIXTURE(Fixture, "greedy decoding terminates and is deterministic")
{
    auto params = init_model<float>(cfg, 11);
    Tensor<float> closed({cfg.num_slots, cfg.slot_dim});
    auto out = greedy_reconstruct(params, cfg, closed, 10);
    CHECK(out.size() <= 10);
    Rng rng(1);
    Tensor<float> slots({cfg.num_slots, cfg.slot_dim});
    for (auto& v : slots.vec()) v = static_cast<float>(rng.normal());
    CHECK(greedy_reconstruct(params, cfg, slots, 20) == greedy_reconstruct(params, cfg, slots, 20));
}

TEST_CASE("memorises a small corpus")
{
    std::vector<std::string> lines;
    const std::vector<std::string> words{"ab", "cd", "efg", "hi", "jkl", "mn"};
    Rng pick(3);
    for (int i = 0; i < 50; ++i) {
        std::string s;
        const auto n = 2 + pick.below(3);
        for (std::size_t j = 0; j < n; ++j) s += (j ? " " : "") + words[pick.below(words.size())];
        lines.push_back(s);
    }
    auto vocab = CharVocab::build(lines, 0);
    auto seqs = encode_lines(lines, vocab, 16).sequences;
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = 32;
    cfg.ff_dim = 64;
    cfg.num_slots = 16;
    cfg.slot_dim = 16;
    cfg.max_len = 16;
    cfg.dropout = 0.0;
    auto params = init_model<float>(cfg, 1);
    auto m = zeros_like(params), v = zeros_like(params);
    AdamConfig adam;
    adam.lr = 3e-3;
    adam.clip_norm = 1.0;
    std::size_t step = 0;
    double last = 0;
    for (std::size_t epoch = 0; epoch < 200; ++epoch) {
        double sum = 0;
        std::size_t chars = 0;
        for (const auto& batch : make_batches(seqs, 25, epoch)) {
            Graph<float> g;
            Binding<float> p(g, params);
            Rng rng = Rng::derive(1, 2, step);
            auto fw = forward(p, cfg, batch, Mode::Train, &rng, 0.0);
            std::size_t n = 0;
            for (auto x : batch.mask) n += x;
            sum += static_cast<double>(fw.rec_loss.value().item()) * static_cast<double>(n);
            chars += n;
            g.backward(fw.total);
            adam_step(params, m, v, p.grads(), step++, adam);
        }
        last = sum / static_cast<double>(chars);
        if (last < 0.1) break;
    }
    CHECK(last < 0.1);

    Graph<float> g;
    Binding<float> p(g, params, false);
    auto batch = make_batch(seqs, {0});
    auto bn = bottleneck(p, cfg, encode(p, cfg, batch, Mode::Eval, nullptr), batch.mask, Mode::Eval, nullptr);
    Tensor<float> slots({cfg.num_slots, cfg.slot_dim}, bn.gates.slots.value().vec());
    CHECK(vocab.decode(greedy_reconstruct(params, cfg, slots, 16)) == lines[0]);
}
