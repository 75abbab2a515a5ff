#include "slotmorph/trainer.hpp"

#include <cmath>
#include <sstream>

#include "slotmorph/adam.hpp"

namespace slotmorph {

namespace {

constexpr std::uint64_t kStepStream = 0x57e9;
constexpr std::uint64_t kShuffleStream = 0x5f1e;

std::string encode_chars(const std::u32string& chars)
{
    std::string out;
    char buf[16];
    for (char32_t c : chars) {
        std::snprintf(buf, sizeof buf, "%s%X", out.empty() ? "" : ",", static_cast<unsigned>(c));
        out += buf;
    }
    return out;
}

std::u32string decode_chars(const std::string& s)
{
    std::u32string out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        auto next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        out.push_back(static_cast<char32_t>(std::stoul(s.substr(pos, next - pos), nullptr, 16)));
        pos = next + 1;
    }
    return out;
}

}  // namespace

void TrainSchedule::validate() const
{
    if (!(lambda0 >= 0)) throw std::invalid_argument("schedule: lambda0 must be non-negative");
    if (!(multiplier >= 1)) throw std::invalid_argument("schedule: multiplier must be >= 1");
    if (period_epochs == 0) throw std::invalid_argument("schedule: period_epochs must be positive");
    if (!(lambda_max >= 0)) throw std::invalid_argument("schedule: lambda_max must be non-negative");
    if (!(lr > 0)) throw std::invalid_argument("schedule: lr must be positive");
    if (batch_size == 0) throw std::invalid_argument("schedule: batch_size must be positive");
    if (!(clip_norm >= 0)) throw std::invalid_argument("schedule: clip_norm must be non-negative");
}

KeyValues TrainSchedule::to_kv() const
{
    return {
        {"train.lambda0", format_double(lambda0)},
        {"train.multiplier", format_double(multiplier)},
        {"train.period_epochs", std::to_string(period_epochs)},
        {"train.lambda_max", format_double(lambda_max)},
        {"train.gate_target", format_double(gate_target)},
        {"train.epochs", std::to_string(epochs)},
        {"train.lr", format_double(lr)},
        {"train.adam_beta1", format_double(adam_beta1)},
        {"train.adam_beta2", format_double(adam_beta2)},
        {"train.adam_eps", format_double(adam_eps)},
        {"train.clip_norm", format_double(clip_norm)},
        {"train.batch_size", std::to_string(batch_size)},
        {"train.seed", std::to_string(seed)},
    };
}

TrainSchedule TrainSchedule::from_kv(const KeyValues& kv)
{
    TrainSchedule s;
    s.lambda0 = kv_double(kv, "train.lambda0");
    s.multiplier = kv_double(kv, "train.multiplier");
    s.period_epochs = kv_size(kv, "train.period_epochs");
    s.lambda_max = kv_double(kv, "train.lambda_max");
    s.gate_target = kv_double(kv, "train.gate_target");
    s.epochs = kv_size(kv, "train.epochs");
    s.lr = kv_double(kv, "train.lr");
    s.adam_beta1 = kv_double(kv, "train.adam_beta1");
    s.adam_beta2 = kv_double(kv, "train.adam_beta2");
    s.adam_eps = kv_double(kv, "train.adam_eps");
    s.clip_norm = kv_double(kv, "train.clip_norm");
    s.batch_size = kv_size(kv, "train.batch_size");
    s.seed = kv_size(kv, "train.seed");
    s.validate();
    return s;
}

double lambda_at(std::size_t epoch, const TrainSchedule& schedule)
{
    const double grown =
        schedule.lambda0 * std::pow(schedule.multiplier, static_cast<double>(epoch / schedule.period_epochs));
    return std::min(schedule.lambda_max, grown);
}

std::string metrics_header()
{
    return "epoch\tstep\tL_rec\tL0\tlambda\topen_gates_mean";
}

std::string metrics_row(const EpochMetrics& m)
{
    return std::to_string(m.epoch) + "\t" + std::to_string(m.step) + "\t" + format_double(m.rec_loss) + "\t" +
           format_double(m.l0) + "\t" + format_double(m.lambda) + "\t" + format_double(m.open_gates);
}

TrainState init_train_state(const ModelConfig& model, const TrainSchedule& schedule, const CharVocab& vocab)
{
    schedule.validate();
    TrainState s;
    s.model = model;
    s.model.vocab_size = vocab.size();
    s.schedule = schedule;
    s.vocab = vocab;
    s.params = init_model<float>(s.model, schedule.seed);
    s.adam_m = zeros_like(s.params);
    s.adam_v = zeros_like(s.params);
    s.lambda_cap = schedule.lambda_max;
    return s;
}

Checkpoint to_checkpoint(const TrainState& state)
{
    Checkpoint c;
    c.config = state.model.to_kv();
    for (const auto& [k, v] : state.schedule.to_kv()) c.config[k] = v;
    c.config["vocab.chars"] = encode_chars(state.vocab.chars());
    c.config["state.epoch"] = std::to_string(state.epoch);
    c.config["state.step"] = std::to_string(state.step);
    c.config["state.lambda_cap"] = format_double(state.lambda_cap);
    for (const auto& [k, v] : state.params.all()) c.tensors.emplace_back("param." + k, v);
    for (const auto& [k, v] : state.adam_m.all()) c.tensors.emplace_back("adam_m." + k, v);
    for (const auto& [k, v] : state.adam_v.all()) c.tensors.emplace_back("adam_v." + k, v);
    return c;
}

LoadedModel model_from_checkpoint(const Checkpoint& ckpt)
{
    LoadedModel m;
    m.config = ModelConfig::from_kv(ckpt.config);
    m.vocab = CharVocab::from_chars(decode_chars(kv_string(ckpt.config, "vocab.chars")));
    if (m.vocab.size() != m.config.vocab_size) throw CheckpointError("checkpoint vocabulary size mismatch");
    const auto reference = init_model<float>(m.config, 0);
    for (const auto& [name, t] : ckpt.tensors)
        if (name.rfind("param.", 0) == 0) m.params.add(name.substr(6), t);
    for (const auto& [name, t] : reference.all()) {
        if (!m.params.contains(name)) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
        if (m.params.at(name).dims() != t.dims())
            throw CheckpointError("parameter '" + name + "' has dims " + shape_str(m.params.at(name).dims()) +
                                  ", expected " + shape_str(t.dims()));
    }
    return m;
}

TrainState from_checkpoint(const Checkpoint& ckpt)
{
    auto m = model_from_checkpoint(ckpt);
    TrainState s;
    s.model = m.config;
    s.vocab = std::move(m.vocab);
    s.params = std::move(m.params);
    s.schedule = TrainSchedule::from_kv(ckpt.config);
    s.epoch = kv_size(ckpt.config, "state.epoch");
    s.step = kv_size(ckpt.config, "state.step");
    s.lambda_cap = kv_double(ckpt.config, "state.lambda_cap");
    s.adam_m = zeros_like(s.params);
    s.adam_v = zeros_like(s.params);
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("adam_m.", 0) == 0) s.adam_m.at(name.substr(7)) = t;
        if (name.rfind("adam_v.", 0) == 0) s.adam_v.at(name.substr(7)) = t;
    }
    return s;
}

void Trainer::adam_update(const std::map<std::string, Tensor<float>>& grads)
{
    const auto& sch = state_.schedule;
    adam_step(state_.params, state_.adam_m, state_.adam_v, grads, state_.step,
              {sch.lr, sch.adam_beta1, sch.adam_beta2, sch.adam_eps, sch.clip_norm});
    ++state_.step;
}

EpochMetrics Trainer::run_epoch(const std::vector<CharSequence>& sequences)
{
    const auto& sch = state_.schedule;
    TrainSchedule capped = sch;
    capped.lambda_max = std::min(sch.lambda_max, state_.lambda_cap);
    const double lambda = lambda_at(state_.epoch, capped);

    const auto batches =
        make_batches(sequences, sch.batch_size, Rng::derive(sch.seed, kShuffleStream, state_.epoch).next());
    EpochMetrics em;
    em.epoch = state_.epoch;
    em.lambda = lambda;
    double rec_sum = 0, l0_sum = 0, open_sum = 0;
    std::size_t sentences = 0;
    for (const auto& batch : batches) {
        Rng rng = Rng::derive(sch.seed, kStepStream, state_.step);
        Graph<float> g;
        Binding<float> p(g, state_.params);
        auto fw = forward(p, state_.model, batch, Mode::Train, &rng, lambda);
        const float rec = fw.rec_loss.value().item(), l0 = fw.l0.value().item(), total = fw.total.value().item();
        if (!std::isfinite(rec) || !std::isfinite(l0) || !std::isfinite(total)) {
            std::ostringstream os;
            os << "non-finite loss at epoch " << state_.epoch << " step " << state_.step << " (L_rec=" << rec
               << ", L0=" << l0 << ", lambda=" << lambda << "); offending batch:";
            for (auto i : batch.indices) os << "\n  [" << i << "] " << sequences[i].raw;
            throw TrainingAborted(os.str());
        }
        g.backward(fw.total);
        adam_update(p.grads());

        const auto open = open_gate_counts(fw.bottleneck.gates.log_alpha.value(), state_.model.gate);
        for (auto c : open) open_sum += static_cast<double>(c);
        rec_sum += static_cast<double>(rec) * static_cast<double>(batch.size);
        l0_sum += static_cast<double>(l0) * static_cast<double>(batch.size);
        sentences += batch.size;
    }
    em.rec_loss = rec_sum / static_cast<double>(sentences);
    em.l0 = l0_sum / static_cast<double>(sentences);
    em.open_gates = open_sum / static_cast<double>(sentences);
    em.step = state_.step;
    if (sch.gate_target > 0 && !std::isfinite(state_.lambda_cap) && em.open_gates <= sch.gate_target)
        state_.lambda_cap = lambda;
    ++state_.epoch;
    return em;
}

std::vector<EpochMetrics> Trainer::train(const std::vector<CharSequence>& sequences, const EpochHook& hook)
{
    if (sequences.empty()) throw CorpusError("training corpus is empty");
    std::vector<EpochMetrics> log;
    while (state_.epoch < state_.schedule.epochs) {
        log.push_back(run_epoch(sequences));
        if (hook) hook(log.back(), state_);
    }
    return log;
}

EvalMetrics evaluate(const ParamSet<float>& params, const ModelConfig& cfg, const std::vector<CharSequence>& sequences,
                     std::size_t batch_size)
{
    EvalMetrics em;
    CharAccuracy acc;
    double loss_sum = 0, open_sum = 0;
    for (const auto& batch : make_batches(sequences, batch_size, std::nullopt)) {
        Graph<float> g;
        Binding<float> p(g, params, false);
        auto fw = forward(p, cfg, batch, Mode::Eval, nullptr, 0.0);
        const auto a = teacher_forced_accuracy(fw.decoded.logits.value(), batch);
        loss_sum += static_cast<double>(fw.rec_loss.value().item()) * static_cast<double>(a.total);
        acc.correct += a.correct;
        acc.total += a.total;
        for (auto c : open_gate_counts(fw.bottleneck.gates.log_alpha.value(), cfg.gate)) open_sum += static_cast<double>(c);
        em.sentences += batch.size;
    }
    em.rec_loss = acc.total ? loss_sum / static_cast<double>(acc.total) : 0.0;
    em.char_accuracy = acc.value();
    em.open_gates = em.sentences ? open_sum / static_cast<double>(em.sentences) : 0.0;
    return em;
}

}  // namespace slotmorph
