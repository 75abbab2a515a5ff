#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "slotmorph/bpe.hpp"
#include "slotmorph/calibrate.hpp"
#include "slotmorph/probe.hpp"
#include "slotmorph/run_config.hpp"
#include "slotmorph/trainer.hpp"
#include "slotmorph/viz.hpp"

namespace fs = std::filesystem;
using namespace slotmorph;

namespace {

class CliError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Options shared by every subcommand.
struct Common {
    std::string config_file;
    std::string run_dir = "run";
    std::map<std::string, std::string> flag_values;
    std::map<std::string, CLI::Option*> flag_options;
};

void add_common(CLI::App* sub, Common& c)
{
    sub->add_option("--config", c.config_file, "key = value configuration file");
    sub->add_option("--run-dir", c.run_dir, "output directory")->capture_default_str();
    for (const auto& k : config_schema()) {
        std::string help = k.help + " [" + k.key + ", env " + k.env_name() + ", default '" + k.default_value + "']";
        auto* opt = sub->add_option("--" + k.flag, c.flag_values[k.key], help);
        c.flag_options[k.key] = opt;
    }
}

RunConfig resolve(const Common& c)
{
    RunConfig cfg;
    if (!c.config_file.empty()) cfg.merge_file(c.config_file);
    cfg.merge_env([](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str())) return std::string(v);
        return std::nullopt;
    });
    for (const auto& [key, opt] : c.flag_options)
        if (opt->count()) cfg.set(key, c.flag_values.at(key));
    cfg.validate();
    return cfg;
}

fs::path prepare_run_dir(const Common& c, const RunConfig& cfg)
{
    const fs::path dir(c.run_dir);
    fs::create_directories(dir);
    std::ofstream(dir / "config.snapshot") << cfg.snapshot();
    return dir;
}

std::vector<std::string> corpus_lines(const RunConfig& cfg, const std::string& key = "data.corpus")
{
    const auto& path = cfg.get(key);
    if (path.empty()) throw CliError("no corpus given (--" + find_config_key(key)->flag + ")");
    if (!fs::exists(path)) throw CliError("corpus file not found: " + path);
    return read_lines(path);
}

std::vector<std::string> lowered(const std::vector<std::string>& lines)
{
    std::vector<std::string> out;
    out.reserve(lines.size());
    for (const auto& l : lines) out.push_back(utf8::lower(l));
    return out;
}

double mean_tokens(const std::vector<std::string>& lines, const MergeTable& merges)
{
    if (lines.empty()) return 0.0;
    double total = 0;
    for (const auto& l : lines) total += static_cast<double>(tokenize(l, merges).size());
    return total / static_cast<double>(lines.size());
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream os(path);
    if (!(os << text)) throw CliError("cannot write " + path.string());
}

// ---- vocab --------------------------------------------------------------

int cmd_vocab(const Common& c)
{
    const auto cfg = resolve(c);
    const auto dir = prepare_run_dir(c, cfg);
    const auto lines = corpus_lines(cfg);
    const auto vocab = CharVocab::build(lines, cfg.min_char_count());
    const auto enc = encode_lines(lines, vocab, cfg.model().max_len);
    vocab.save((dir / "vocab.txt").string());
    std::cout << "vocab_size\t" << vocab.size() << "\nlines\t" << enc.stats.lines() << "\naccepted\t"
              << enc.stats.accepted << "\nskipped_empty\t" << enc.stats.skipped_empty << "\nskipped_long\t"
              << enc.stats.skipped_long << "\n";
    return 0;
}

// ---- bpe ----------------------------------------------------------------

int cmd_bpe_train(const Common& c)
{
    const auto cfg = resolve(c);
    const auto dir = prepare_run_dir(c, cfg);
    const auto lines = lowered(corpus_lines(cfg));
    const auto merges = train_bpe(lines, cfg.bpe_vocab_size());
    save_merges(merges, (dir / "bpe.merges").string());
    std::cout << "merges\t" << merges.merges.size() << "\nmean_tokens\t" << format_double(mean_tokens(lines, merges))
              << "\n";
    return 0;
}

int cmd_bpe_apply(const Common& c, const std::string& merges_path)
{
    const auto cfg = resolve(c);
    const auto dir = prepare_run_dir(c, cfg);
    const auto merges = load_merges(merges_path);
    std::string out;
    for (const auto& line : lowered(corpus_lines(cfg))) {
        const auto toks = tokenize(line, merges);
        for (std::size_t i = 0; i < toks.size(); ++i) out += (i ? " " : "") + toks[i];
        out += "\n";
    }
    write_text(dir / "bpe.tokens", out);
    return 0;
}

// ---- train --------------------------------------------------------------

int cmd_train(const Common& c, const std::string& resume)
{
    const auto cfg = resolve(c);
    const auto dir = prepare_run_dir(c, cfg);
    fs::create_directories(dir / "checkpoints");
    const auto lines = corpus_lines(cfg);

    TrainState state;
    if (!resume.empty()) {
        state = from_checkpoint(load_checkpoint(resume));
        state.schedule.epochs = cfg.schedule().epochs;
    } else {
        const auto vocab = CharVocab::build(lines, cfg.min_char_count());
        state = init_train_state(cfg.model(), cfg.schedule(), vocab);
    }
    state.vocab.save((dir / "vocab.txt").string());
    const auto enc = encode_lines(lines, state.vocab, state.model.max_len);
    if (enc.sequences.empty()) throw CliError("no usable sentences in corpus");
    std::cerr << "sentences " << enc.stats.accepted << " (skipped " << enc.stats.skipped_empty << " empty, "
              << enc.stats.skipped_long << " too long)\n";

    const auto metrics_path = dir / "metrics.tsv";
    std::ofstream metrics(metrics_path, resume.empty() ? std::ios::trunc : std::ios::app);
    if (resume.empty()) metrics << metrics_header() << "\n";
    const std::size_t every = kv_size(cfg.values(), "train.checkpoint_every");
    const auto save = [&](const TrainState& st, const std::string& name) {
        save_checkpoint(to_checkpoint(st), (dir / "checkpoints" / name).string());
    };

    Trainer trainer(std::move(state));
    try {
        trainer.train(enc.sequences, [&](const EpochMetrics& m, const TrainState& st) {
            metrics << metrics_row(m) << "\n" << std::flush;
            std::cerr << metrics_row(m) << "\n";
            if (every && st.epoch % every == 0) {
                char name[32];
                std::snprintf(name, sizeof name, "epoch-%04zu.ckpt", st.epoch);
                save(st, name);
            }
        });
    } catch (const TrainingAborted& e) {
        write_text(dir / "abort.txt", std::string(e.what()) + "\n");
        throw CliError(std::string(e.what()).substr(0, std::string(e.what()).find(';')) + " (batch dump in " +
                       (dir / "abort.txt").string() + ")");
    }
    save(trainer.state(), "last.ckpt");
    const auto ev = evaluate(trainer.state().params, trainer.state().model, enc.sequences);
    std::cout << "char_accuracy\t" << format_double(ev.char_accuracy) << "\nrec_loss\t" << format_double(ev.rec_loss)
              << "\nopen_gates\t" << format_double(ev.open_gates) << "\n";
    return 0;
}

// ---- probe --------------------------------------------------------------

struct ProbeSplit {
    std::vector<CharSequence> sequences;
    std::vector<std::vector<std::string>> tokens;
};

ProbeSplit encode_split(const std::vector<std::string>& lines, const std::vector<std::vector<std::string>>& tokens,
                        const LoadedModel& model)
{
    const auto enc = encode_lines(lines, model.vocab, model.config.max_len);
    ProbeSplit out;
    out.sequences = enc.sequences;
    for (auto i : enc.line_index) out.tokens.push_back(tokens[i]);
    return out;
}

int cmd_probe(const Common& c, const std::string& checkpoint, bool baseline)
{
    const auto cfg = resolve(c);
    const auto dir = prepare_run_dir(c, cfg);
    fs::create_directories(dir / "probe");
    if (checkpoint.empty()) throw CliError("probe needs --checkpoint");
    const auto model = model_from_checkpoint(load_checkpoint(checkpoint));

    auto train_lines = lowered(corpus_lines(cfg));
    std::vector<std::string> test_lines;
    if (!cfg.get("probe.test_corpus").empty()) {
        test_lines = lowered(corpus_lines(cfg, "probe.test_corpus"));
    } else {
        const double f = kv_double(cfg.values(), "probe.test_fraction");
        const auto cut = train_lines.size() - static_cast<std::size_t>(f * static_cast<double>(train_lines.size()));
        test_lines.assign(train_lines.begin() + static_cast<std::ptrdiff_t>(cut), train_lines.end());
        train_lines.resize(cut);
    }
    if (train_lines.empty() || test_lines.empty()) throw CliError("probe needs non-empty train and test splits");

    const bool bpe = cfg.get("probe.task") == "bpe";
    std::vector<std::vector<std::string>> train_tokens, test_tokens;
    if (bpe) {
        const auto merges = train_bpe(train_lines, cfg.bpe_vocab_size());
        save_merges(merges, (dir / "probe" / "bpe.merges").string());
        for (const auto& l : train_lines) train_tokens.push_back(tokenize(l, merges));
        for (const auto& l : test_lines) test_tokens.push_back(tokenize(l, merges));
    } else {
        if (cfg.get("probe.segments").empty()) throw CliError("task seg needs --segments");
        if (!cfg.get("probe.test_corpus").empty())
            throw CliError("task seg splits the segmented corpus itself; drop --test-corpus");
        auto all = train_lines;
        all.insert(all.end(), test_lines.begin(), test_lines.end());
        auto segs = load_external_segments(cfg.get("probe.segments"), all);
        test_tokens.assign(segs.begin() + static_cast<std::ptrdiff_t>(train_lines.size()), segs.end());
        segs.resize(train_lines.size());
        train_tokens = std::move(segs);
    }

    const auto train = encode_split(train_lines, train_tokens, model);
    const auto test = encode_split(test_lines, test_tokens, model);
    const auto labels = LabelVocab::build(train.tokens);
    const std::size_t k = model.config.num_slots;
    const auto train_targets = make_probe_targets(train.tokens, labels, k);
    const auto test_targets = make_probe_targets(test.tokens, labels, k);
    if (train_targets.targets.empty() || test_targets.targets.empty())
        throw CliError("no probe sentences fit within " + std::to_string(k) + " slots");
    if (train_targets.skipped + test_targets.skipped)
        std::cerr << "warning: skipped " << train_targets.skipped + test_targets.skipped
                  << " sentences with more targets than slots\n";

    const std::string task = bpe ? "BPE" : "SEG";
    const auto probe_cfg = cfg.probe();
    std::string report = probe_report_header() + "\n";
    const auto run_one = [&](const std::string& name, const Tensor<float>& train_slots, const Tensor<float>& test_slots) {
        const auto tr = select_sentences(train_slots, train_targets.sentence_index);
        const auto te = select_sentences(test_slots, test_targets.sentence_index);
        const auto run = train_probe(tr, train_targets, labels, probe_cfg);
        const auto m_train = evaluate_probe(run.params, tr, train_targets, labels);
        std::vector<SentencePrediction> preds;
        const auto m_test = evaluate_probe(run.params, te, test_targets, labels, &preds);
        report += probe_report_row({task, "train", name, m_train, train_targets.skipped}) + "\n";
        report += probe_report_row({task, "test", name, m_test, test_targets.skipped}) + "\n";
        std::vector<std::string> sentences;
        for (const auto& seq : test.sequences) sentences.push_back(seq.raw);
        std::ofstream os(dir / "probe" / ("predictions-" + name + ".tsv"));
        write_predictions(os, preds, sentences, labels);
    };
    run_one("trained", extract_slots(model.params, model.config, train.sequences),
            extract_slots(model.params, model.config, test.sequences));
    if (baseline)
        run_one("untrained", baseline_slots(model.config, probe_cfg.seed, train.sequences),
                baseline_slots(model.config, probe_cfg.seed, test.sequences));
    write_text(dir / "probe" / "report.tsv", report);
    std::cout << report;
    return 0;
}

// ---- attn-export --------------------------------------------------------

int cmd_attn_export(const Common& c, const std::string& checkpoint, const std::string& format, std::size_t limit,
                    bool baseline)
{
    const auto cfg = resolve(c);
    const auto dir = prepare_run_dir(c, cfg);
    fs::create_directories(dir / "attn");
    if (checkpoint.empty()) throw CliError("attn-export needs --checkpoint");
    const auto model = model_from_checkpoint(load_checkpoint(checkpoint));
    const auto enc = encode_lines(corpus_lines(cfg), model.vocab, model.config.max_len);
    if (enc.sequences.empty()) throw CliError("no usable sentences in corpus");
    const bool tsv = format != "svg", svg = format != "tsv";
    const auto emit = [&](const AttnMap& m, const std::string& stem) {
        if (tsv) write_tsv(m, (dir / "attn" / (stem + ".tsv")).string());
        if (svg) write_svg(m, (dir / "attn" / (stem + ".svg")).string());
    };

    const auto maps = capture_maps(model.params, model.config, model.vocab, enc.sequences);
    for (std::size_t i = 0; i < std::min(limit, maps.size()); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "sentence-%05zu", enc.line_index[i]);
        emit(maps[i], stem);
    }
    emit(average_maps(maps), "average");
    std::cout << "model\tentropy\tcontiguity\n";
    std::cout << "trained\t" << format_double(mean_row_entropy(maps)) << "\t" << format_double(contiguity_score(maps))
              << "\n";
    if (baseline) {
        const auto base = capture_maps(init_model<float>(model.config, cfg.probe().seed), model.config, model.vocab,
                                       enc.sequences);
        emit(average_maps(base), "average-untrained");
        std::cout << "untrained\t" << format_double(mean_row_entropy(base)) << "\t"
                  << format_double(contiguity_score(base)) << "\n";
    }
    return 0;
}

// ---- calibrate-lambda ---------------------------------------------------

int cmd_calibrate(const Common& c, const std::string& checkpoint, std::size_t epochs)
{
    const auto cfg = resolve(c);
    const auto dir = prepare_run_dir(c, cfg);
    const auto lines = corpus_lines(cfg);
    const auto low = lowered(lines);
    const auto merges = train_bpe(low, cfg.bpe_vocab_size());
    const double target = mean_tokens(low, merges);
    std::cout << "mean_bpe_tokens\t" << format_double(target) << "\n";
    if (checkpoint.empty()) {
        std::cout << "suggested_lambda_max\t(pass --checkpoint to search)\n";
        return 0;
    }
    auto state = from_checkpoint(load_checkpoint(checkpoint));
    const auto enc = encode_lines(lines, state.vocab, state.model.max_len);
    if (enc.sequences.empty()) throw CliError("no usable sentences in corpus");
    CalibrationConfig cc;
    cc.target = target;
    cc.epochs = epochs;
    const auto result = calibrate_lambda(state, enc.sequences, cc, [](const CalibrationProbe& p) {
        std::cerr << "lambda " << format_double(p.lambda) << " open " << format_double(p.open_gates) << "\n";
    });
    std::string log = "lambda\topen_gates\n";
    for (const auto& p : result.probes) log += format_double(p.lambda) + "\t" + format_double(p.open_gates) + "\n";
    write_text(dir / "calibration.tsv", log);
    std::cout << "suggested_lambda_max\t" << format_double(result.lambda) << "\n";
    return 0;
}

std::string one_line(std::string s)
{
    for (auto& ch : s)
        if (ch == '\n' || ch == '\r') ch = ' ';
    return s;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"slotmorph: slot-attention character autoencoder with L0 gates"};
    app.require_subcommand(1);

    Common vocab_c, bpe_c, apply_c, train_c, probe_c, attn_c, calib_c;
    auto* vocab = app.add_subcommand("vocab", "build the character vocabulary");
    add_common(vocab, vocab_c);

    auto* bpe = app.add_subcommand("bpe-train", "learn BPE merges from the corpus");
    add_common(bpe, bpe_c);

    std::string merges_path;
    auto* apply = app.add_subcommand("bpe-apply", "tokenize the corpus with learned merges");
    add_common(apply, apply_c);
    apply->add_option("--merges", merges_path, "merge file from bpe-train")->required();

    std::string resume;
    auto* train = app.add_subcommand("train", "train the autoencoder");
    add_common(train, train_c);
    train->add_option("--resume", resume, "continue from a checkpoint");

    std::string probe_ckpt;
    bool probe_baseline = false;
    auto* probe = app.add_subcommand("probe", "probe frozen slots against BPE or segment targets");
    add_common(probe, probe_c);
    probe->add_option("--checkpoint", probe_ckpt, "trained model")->required();
    probe->add_flag("--untrained-baseline", probe_baseline, "also probe a freshly initialised model");

    std::string attn_ckpt, format = "both";
    std::size_t limit = 20;
    bool attn_baseline = false;
    auto* attn = app.add_subcommand("attn-export", "export decoder attention over slots");
    add_common(attn, attn_c);
    attn->add_option("--checkpoint", attn_ckpt, "trained model")->required();
    attn->add_option("--format", format, "tsv, svg or both")
        ->check(CLI::IsMember({"tsv", "svg", "both"}))
        ->capture_default_str();
    attn->add_option("--limit", limit, "sentences exported individually")->capture_default_str();
    attn->add_flag("--untrained-baseline", attn_baseline, "also report a freshly initialised model");

    std::string calib_ckpt;
    std::size_t calib_epochs = 3;
    auto* calib = app.add_subcommand("calibrate-lambda", "estimate the gate target and a lambda cap");
    add_common(calib, calib_c);
    calib->add_option("--checkpoint", calib_ckpt, "model to fine-tune while searching lambda");
    calib->add_option("--search-epochs", calib_epochs, "fine-tuning epochs per candidate")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*vocab) return cmd_vocab(vocab_c);
        if (*bpe) return cmd_bpe_train(bpe_c);
        if (*apply) return cmd_bpe_apply(apply_c, merges_path);
        if (*train) return cmd_train(train_c, resume);
        if (*probe) return cmd_probe(probe_c, probe_ckpt, probe_baseline);
        if (*attn) return cmd_attn_export(attn_c, attn_ckpt, format, limit, attn_baseline);
        if (*calib) return cmd_calibrate(calib_c, calib_ckpt, calib_epochs);
    } catch (const std::exception& e) {
        std::cerr << "slotmorph: error: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 1;
}
