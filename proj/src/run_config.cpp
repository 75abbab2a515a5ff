#include "slotmorph/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

namespace slotmorph {

namespace {

ConfigKey entry(std::string key, std::string flag, ValueKind kind, std::string def, std::string help,
                std::vector<std::string> choices = {})
{
    return {std::move(key), std::move(flag), kind, std::move(def), std::move(choices), std::move(help)};
}

std::vector<ConfigKey> build_schema()
{
    const ModelConfig m;
    const TrainSchedule t;
    const ProbeConfig p;
    const auto d = [](double v) { return format_double(v); };
    const auto z = [](std::size_t v) { return std::to_string(v); };
    using K = ValueKind;
    return {
        entry("data.corpus", "corpus", K::String, "", "training corpus, one sentence per line"),
        entry("data.min_char_count", "min-char-count", K::Size, "25",
              "characters seen at most this often map to UNK"),

        entry("model.d_model", "d-model", K::Size, z(m.d_model), "Transformer width"),
        entry("model.enc_layers", "enc-layers", K::Size, z(m.enc_layers), "encoder layers"),
        entry("model.enc_heads", "enc-heads", K::Size, z(m.enc_heads), "encoder attention heads"),
        entry("model.dec_layers", "dec-layers", K::Size, z(m.dec_layers), "decoder layers"),
        entry("model.dec_self_heads", "dec-self-heads", K::Size, z(m.dec_self_heads), "decoder self-attention heads"),
        entry("model.dec_cross_heads", "dec-cross-heads", K::Size, z(m.dec_cross_heads),
              "decoder cross-attention heads"),
        entry("model.ff_dim", "ff-dim", K::Size, "0", "feed-forward width, 0 for 4 * d_model"),
        entry("model.num_slots", "num-slots", K::Size, z(m.num_slots), "number of slots K"),
        entry("model.slot_dim", "slot-dim", K::Size, z(m.slot_dim), "slot width"),
        entry("model.iterations", "iterations", K::Size, z(m.iterations), "slot attention iterations"),
        entry("model.max_len", "max-len", K::Size, z(m.max_len), "longest sentence in characters; longer are skipped"),
        entry("model.init", "init", K::Choice, to_string(m.init), "slot initialisation",
              {"shared", "per_slot_mu", "positional"}),
        entry("model.sigma_constant", "sigma-constant", K::Double, d(m.sigma_constant),
              "fixed slot noise scale"),
        entry("model.delta", "delta", K::Double, d(m.delta), "weighted-mean stabiliser"),
        entry("model.gate_beta", "gate-beta", K::Double, d(m.gate.beta), "hard-concrete temperature"),
        entry("model.gate_epsilon", "gate-epsilon", K::Double, d(m.gate.epsilon), "hard-concrete stretch"),
        entry("model.dropout", "dropout", K::Double, d(m.dropout), "dropout rate"),
        entry("model.mask_closed_slots", "mask-closed-slots", K::Bool, m.mask_closed_slots ? "true" : "false",
              "hide closed slots from decoder cross-attention"),

        entry("train.lambda0", "lambda0", K::Double, d(t.lambda0), "initial sparsity weight"),
        entry("train.multiplier", "multiplier", K::Double, d(t.multiplier), "sparsity weight growth factor"),
        entry("train.period_epochs", "period-epochs", K::Size, z(t.period_epochs), "epochs between growth steps"),
        entry("train.lambda_max", "lambda-max", K::Double, d(t.lambda_max), "sparsity weight cap"),
        entry("train.gate_target", "gate-target", K::Double, d(t.gate_target),
              "latch the cap once mean open gates reach this count, 0 disables"),
        entry("train.epochs", "epochs", K::Size, z(t.epochs), "training epochs"),
        entry("train.lr", "lr", K::Double, d(t.lr), "Adam learning rate"),
        entry("train.adam_beta1", "adam-beta1", K::Double, d(t.adam_beta1), "Adam beta1"),
        entry("train.adam_beta2", "adam-beta2", K::Double, d(t.adam_beta2), "Adam beta2"),
        entry("train.adam_eps", "adam-eps", K::Double, d(t.adam_eps), "Adam epsilon"),
        entry("train.clip_norm", "clip-norm", K::Double, d(t.clip_norm), "global gradient norm clip, 0 disables"),
        entry("train.batch_size", "batch-size", K::Size, z(t.batch_size), "sentences per batch"),
        entry("train.seed", "seed", K::Size, z(t.seed), "training seed"),
        entry("train.checkpoint_every", "checkpoint-every", K::Size, "10",
              "epochs between checkpoints, 0 for final only"),

        entry("bpe.vocab_size", "bpe-vocab-size", K::Size, "5000", "BPE vocabulary size including base symbols"),

        entry("probe.task", "task", K::Choice, "bpe", "probe targets", {"bpe", "seg"}),
        entry("probe.segments", "segments", K::String, "", "segmentation file for task seg"),
        entry("probe.test_corpus", "test-corpus", K::String, "", "held-out probe sentences"),
        entry("probe.test_fraction", "test-fraction", K::Double, "0.2",
              "tail fraction of the corpus held out when no test corpus is given"),
        entry("probe.hidden", "probe-hidden", K::Size, "128", "probe hidden width"),
        entry("probe.epochs", "probe-epochs", K::Size, z(p.epochs), "probe training epochs"),
        entry("probe.lr", "probe-lr", K::Double, d(p.lr), "probe learning rate"),
        entry("probe.batch_size", "probe-batch-size", K::Size, z(p.batch_size), "probe batch size"),
        entry("probe.seed", "probe-seed", K::Size, z(p.seed), "probe and baseline seed"),
    };
}

void check_value(const ConfigKey& k, const std::string& v)
{
    const auto fail = [&](const std::string& what) {
        throw ConfigError("config key '" + k.key + "': expected " + what + ", got '" + v + "'");
    };
    switch (k.kind) {
    case ValueKind::Size: {
        std::uint64_t x = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (v.empty() || ec != std::errc() || p != v.data() + v.size()) fail("a non-negative integer");
        break;
    }
    case ValueKind::Double: {
        double x = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (v.empty() || ec != std::errc() || p != v.data() + v.size() || std::isnan(x)) fail("a number");
        break;
    }
    case ValueKind::Bool:
        if (v != "true" && v != "false" && v != "1" && v != "0") fail("true or false");
        break;
    case ValueKind::Choice:
        if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) {
            std::string all;
            for (const auto& c : k.choices) all += (all.empty() ? "" : "|") + c;
            fail("one of " + all);
        }
        break;
    case ValueKind::String:
        break;
    }
}

}  // namespace

std::string ConfigKey::env_name() const
{
    std::string out = "SLOTMORPH_";
    for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

const std::vector<ConfigKey>& config_schema()
{
    static const std::vector<ConfigKey> schema = build_schema();
    return schema;
}

const ConfigKey* find_config_key(const std::string& key)
{
    for (const auto& k : config_schema())
        if (k.key == key) return &k;
    return nullptr;
}

RunConfig::RunConfig()
{
    for (const auto& k : config_schema()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value)
{
    const auto* k = find_config_key(key);
    if (!k) throw ConfigError("unknown config key '" + key + "'");
    check_value(*k, value);
    values_[key] = value;
}

void RunConfig::merge(const KeyValues& kv)
{
    for (const auto& [k, v] : kv) set(k, v);
}

void RunConfig::merge_file(const std::string& path)
{
    try {
        merge(read_key_values(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void RunConfig::merge_env(const std::function<std::optional<std::string>(const std::string&)>& getenv)
{
    for (const auto& k : config_schema())
        if (auto v = getenv(k.env_name())) {
            try {
                set(k.key, *v);
            } catch (const ConfigError& e) {
                throw ConfigError(k.env_name() + ": " + e.what());
            }
        }
}

const std::string& RunConfig::get(const std::string& key) const
{
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

std::string RunConfig::snapshot() const
{
    std::string out;
    for (const auto& k : config_schema()) out += k.key + " = " + values_.at(k.key) + "\n";
    return out;
}

ModelConfig RunConfig::model() const
{
    KeyValues kv;
    for (const auto& [k, v] : values_)
        if (k.rfind("model.", 0) == 0) kv[k] = v;
    kv["model.vocab_size"] = std::to_string(CharVocab::kNumSpecials + 1);
    auto m = ModelConfig::from_kv(kv);
    m.vocab_size = 0;
    return m;
}

TrainSchedule RunConfig::schedule() const
{
    return TrainSchedule::from_kv(values_);
}

ProbeConfig RunConfig::probe() const
{
    ProbeConfig p;
    p.hidden = kv_size(values_, "probe.hidden");
    p.epochs = kv_size(values_, "probe.epochs");
    p.lr = kv_double(values_, "probe.lr");
    p.batch_size = kv_size(values_, "probe.batch_size");
    p.seed = kv_size(values_, "probe.seed");
    return p;
}

std::size_t RunConfig::min_char_count() const
{
    return kv_size(values_, "data.min_char_count");
}

std::size_t RunConfig::bpe_vocab_size() const
{
    return kv_size(values_, "bpe.vocab_size");
}

void RunConfig::validate() const
{
    auto m = model();
    m.vocab_size = CharVocab::kNumSpecials + 1;
    m.validate();
    schedule().validate();
    const double f = kv_double(values_, "probe.test_fraction");
    if (!(f > 0 && f < 1)) throw ConfigError("config key 'probe.test_fraction': must be in (0, 1)");
    if (probe().batch_size == 0) throw ConfigError("config key 'probe.batch_size': must be positive");
}

}  // namespace slotmorph
