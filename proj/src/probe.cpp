#include "slotmorph/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "slotmorph/adam.hpp"

namespace slotmorph {

namespace {
constexpr std::uint64_t kProbeInitStream = 0x9b0e;
constexpr std::uint64_t kProbeShuffleStream = 0x9b5f;
}  // namespace

Assignment hungarian(const std::vector<std::vector<double>>& cost)
{
    const std::size_t n = cost.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (cost[i].size() != n)
            throw ProbeError("hungarian: cost matrix is not square (" + std::to_string(n) + " rows, row " +
                             std::to_string(i) + " has " + std::to_string(cost[i].size()) + " columns)");
        for (double c : cost[i])
            if (!std::isfinite(c)) throw ProbeError("hungarian: non-finite cost in row " + std::to_string(i));
    }
    // 1-based arrays; column 0 is a virtual start column.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> row_of_col(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        row_of_col[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = row_of_col[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (row_of_col[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
        } while (j0);
    }
    Assignment a;
    a.col_of_row.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) a.col_of_row[row_of_col[j] - 1] = j - 1;
    for (std::size_t i = 0; i < n; ++i) a.cost += cost[i][a.col_of_row[i]];
    return a;
}

template <typename T>
ParamSet<T> init_probe(std::size_t slot_dim, std::size_t hidden, std::size_t num_outputs, std::uint64_t seed)
{
    Rng rng = Rng::derive(seed, kProbeInitStream, 0);
    ParamSet<T> ps;
    const std::size_t h = hidden ? hidden : slot_dim;
    nn::init_mlp(ps, "probe", slot_dim, h, num_outputs, rng);
    // Pruned slots arrive as zero vectors. A random EMPTY column lets the
    // matching hand real labels to those indistinguishable zero slots and
    // train every live slot towards EMPTY, a state the probe never leaves.
    // Starting the EMPTY logit as a decreasing function of the hidden
    // activations makes zero inputs the most EMPTY-like from the first step.
    auto& w = ps.at("probe.fc2.w");
    const auto bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(h + num_outputs)));
    for (std::size_t r = 0; r < w.rows(); ++r) w.at(r, num_outputs - 1) = -bound;
    return ps;
}

template <typename T>
Var<T> probe_logits(const Binding<T>& p, Var<T> slots)
{
    const auto& d = slots.value().dims();
    if (d.size() != 3) throw ShapeError("probe_logits: slots " + shape_str(d) + ", expected [N, K, D]");
    return nn::mlp(p, "probe", op::reshape(slots, {d[0] * d[1], d[2]}));
}

template <typename T>
std::vector<std::vector<double>> probe_cost(const Tensor<T>& logits, std::size_t sentence, std::size_t num_slots,
                                            const std::vector<int>& targets)
{
    if (targets.size() != num_slots)
        throw ProbeError("probe: expected " + std::to_string(num_slots) + " padded targets, got " +
                         std::to_string(targets.size()));
    const std::size_t c = logits.cols();
    std::vector<std::vector<double>> cost(num_slots, std::vector<double>(num_slots));
    for (std::size_t i = 0; i < num_slots; ++i) {
        const T* row = logits.data() + (sentence * num_slots + i) * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(row[k]));
        double z = 0.0;
        for (std::size_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < num_slots; ++j) {
            const auto y = static_cast<std::size_t>(targets[j]);
            if (y >= c) throw ProbeError("probe: target id " + std::to_string(targets[j]) + " out of range");
            cost[i][j] = lse - static_cast<double>(row[y]);
        }
    }
    return cost;
}

template <typename T>
ProbeLoss<T> probe_loss(const Binding<T>& p, Var<T> slots, const std::vector<std::vector<int>>& targets)
{
    const auto& d = slots.value().dims();
    if (d.size() != 3 || d[0] != targets.size())
        throw ShapeError("probe_loss: slots " + shape_str(d) + " vs " + std::to_string(targets.size()) + " targets");
    const std::size_t n = d[0], k = d[1];
    auto logits = probe_logits(p, slots);
    ProbeLoss<T> out{logits, {}};
    std::vector<int> matched(n * k);
    for (std::size_t s = 0; s < n; ++s) {
        out.matching.push_back(hungarian(probe_cost(logits.value(), s, k, targets[s])));
        for (std::size_t i = 0; i < k; ++i) matched[s * k + i] = targets[s][out.matching.back().col_of_row[i]];
    }
    out.loss = op::cross_entropy(logits, std::span<const int>(matched), {}, Reduction::Sum);
    return out;
}

double ProbeMetrics::precision() const
{
    return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
}

double ProbeMetrics::recall() const
{
    return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
}

double ProbeMetrics::f1() const
{
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

void score_matching(const std::vector<int>& predicted, const std::vector<int>& targets, const Assignment& match,
                    const LabelVocab& labels, ProbeMetrics& into)
{
    const int empty = labels.empty(), other = labels.other();
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int pred = predicted[i], gold = targets[match.col_of_row[i]];
        if (pred != empty) {
            if (gold != empty && gold != other && pred == gold)
                ++into.tp;
            else
                ++into.fp;
        } else if (gold != empty) {
            ++into.fn;
        } else {
            ++into.tn;
        }
    }
}

Tensor<float> select_sentences(const Tensor<float>& slots, const std::vector<std::size_t>& indices)
{
    const std::size_t k = slots.dim(1), d = slots.dim(2), stride = k * d;
    Tensor<float> out({indices.size(), k, d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= slots.dim(0)) throw std::out_of_range("select_sentences: index out of range");
        std::copy_n(slots.data() + indices[r] * stride, stride, out.data() + r * stride);
    }
    return out;
}

ProbeRun train_probe(const Tensor<float>& slots, const ProbeTargets& targets, const LabelVocab& labels,
                     const ProbeConfig& cfg)
{
    if (slots.rank() != 3 || slots.dim(0) != targets.targets.size())
        throw ShapeError("train_probe: slots " + shape_str(slots.dims()) + " vs " +
                         std::to_string(targets.targets.size()) + " target rows");
    if (targets.targets.empty()) throw ProbeError("train_probe: no probe sentences");
    if (cfg.batch_size == 0) throw std::invalid_argument("probe: batch_size must be positive");
    ProbeRun run;
    run.params = init_probe<float>(slots.dim(2), cfg.hidden, labels.size() + 1, cfg.seed);
    auto m = zeros_like(run.params), v = zeros_like(run.params);
    const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, 0.0};
    const std::size_t n = slots.dim(0);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng rng = Rng::derive(cfg.seed, kProbeShuffleStream, epoch);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch_size)));
            std::vector<std::vector<int>> batch_targets;
            for (auto i : idx) batch_targets.push_back(targets.targets[i]);
            Graph<float> g;
            Binding<float> p(g, run.params);
            auto pl = probe_loss(p, g.constant(select_sentences(slots, idx)), batch_targets);
            total += static_cast<double>(pl.loss.value().item());
            auto mean = op::scale(pl.loss, 1.0f / static_cast<float>(idx.size()));
            g.backward(mean);
            adam_step(run.params, m, v, p.grads(), step++, adam);
        }
        run.epoch_loss.push_back(total / static_cast<double>(n));
    }
    return run;
}

ProbeMetrics evaluate_probe(const ParamSet<float>& probe, const Tensor<float>& slots, const ProbeTargets& targets,
                            const LabelVocab& labels, std::vector<SentencePrediction>* predictions)
{
    if (slots.rank() != 3 || slots.dim(0) != targets.targets.size())
        throw ShapeError("evaluate_probe: slots " + shape_str(slots.dims()) + " vs " +
                         std::to_string(targets.targets.size()) + " target rows");
    ProbeMetrics total;
    const std::size_t n = slots.dim(0), k = slots.dim(1);
    double f1_sum = 0.0;
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < n; start += kChunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
        Graph<float> g;
        Binding<float> p(g, probe, false);
        const auto logits = probe_logits(p, g.constant(select_sentences(slots, idx))).value();
        const std::size_t c = logits.cols();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto& tgt = targets.targets[idx[r]];
            const auto match = hungarian(probe_cost(logits, r, k, tgt));
            std::vector<int> pred(k);
            for (std::size_t i = 0; i < k; ++i) {
                const float* row = logits.data() + (r * k + i) * c;
                pred[i] = static_cast<int>(std::max_element(row, row + c) - row);
            }
            ProbeMetrics one;
            score_matching(pred, tgt, match, labels, one);
            f1_sum += one.f1();
            total.tp += one.tp;
            total.fp += one.fp;
            total.fn += one.fn;
            total.tn += one.tn;
            if (predictions) {
                SentencePrediction sp{targets.sentence_index[idx[r]], pred, std::vector<int>(k)};
                for (std::size_t i = 0; i < k; ++i) sp.matched[i] = tgt[match.col_of_row[i]];
                predictions->push_back(std::move(sp));
            }
        }
    }
    total.sentences = n;
    total.sentence_f1 = n ? f1_sum / static_cast<double>(n) : 0.0;
    return total;
}

Tensor<float> extract_slots(const ParamSet<float>& params, const ModelConfig& cfg,
                            const std::vector<CharSequence>& sequences, std::size_t batch_size)
{
    Tensor<float> out({sequences.size(), cfg.num_slots, cfg.slot_dim});
    const std::size_t stride = cfg.num_slots * cfg.slot_dim;
    for (const auto& batch : make_batches(sequences, batch_size, std::nullopt)) {
        Graph<float> g;
        Binding<float> p(g, params, false);
        auto enc = encode(p, cfg, batch, Mode::Eval, nullptr);
        auto bn = bottleneck(p, cfg, enc, batch.mask, Mode::Eval, nullptr);
        const auto& s = bn.gates.slots.value();
        for (std::size_t b = 0; b < batch.size; ++b)
            std::copy_n(s.data() + b * stride, stride, out.data() + batch.indices[b] * stride);
    }
    return out;
}

Tensor<float> baseline_slots(const ModelConfig& cfg, std::uint64_t seed, const std::vector<CharSequence>& sequences,
                             std::size_t batch_size)
{
    return extract_slots(init_model<float>(cfg, seed), cfg, sequences, batch_size);
}

std::string probe_report_header()
{
    return "task\tsplit\tP\tR\tF1\tsentences\tskipped\tmodel\tF1_sentence_mean";
}

std::string probe_report_row(const ProbeReportRow& row)
{
    const auto& m = row.metrics;
    return row.task + "\t" + row.split + "\t" + format_double(m.precision()) + "\t" + format_double(m.recall()) +
           "\t" + format_double(m.f1()) + "\t" + std::to_string(m.sentences) + "\t" + std::to_string(row.skipped) +
           "\t" + row.model + "\t" + format_double(m.sentence_f1);
}

void write_predictions(std::ostream& os, const std::vector<SentencePrediction>& predictions,
                       const std::vector<std::string>& sentences, const LabelVocab& labels)
{
    os << "sentence\tslot\tpredicted\tmatched_target\n";
    for (const auto& sp : predictions) {
        os << "# " << sp.sentence << "\t" << (sp.sentence < sentences.size() ? sentences[sp.sentence] : "") << "\n";
        for (std::size_t i = 0; i < sp.predicted.size(); ++i) {
            if (sp.predicted[i] == labels.empty() && sp.matched[i] == labels.empty()) continue;
            os << sp.sentence << "\t" << i << "\t" << labels.label(sp.predicted[i]) << "\t"
               << labels.label(sp.matched[i]) << "\n";
        }
    }
}

#define SLOTMORPH_INSTANTIATE_PROBE(T)                                                                           \
    template ParamSet<T> init_probe<T>(std::size_t, std::size_t, std::size_t, std::uint64_t);                    \
    template Var<T> probe_logits<T>(const Binding<T>&, Var<T>);                                                  \
    template std::vector<std::vector<double>> probe_cost<T>(const Tensor<T>&, std::size_t, std::size_t,          \
                                                            const std::vector<int>&);                            \
    template ProbeLoss<T> probe_loss<T>(const Binding<T>&, Var<T>, const std::vector<std::vector<int>>&);

SLOTMORPH_INSTANTIATE_PROBE(float)
SLOTMORPH_INSTANTIATE_PROBE(double)

}  // namespace slotmorph
