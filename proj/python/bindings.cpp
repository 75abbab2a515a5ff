// Python bindings for the slotmorph core.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "slotmorph/bpe.hpp"
#include "slotmorph/checkpoint.hpp"
#include "slotmorph/gates.hpp"
#include "slotmorph/probe.hpp"
#include "slotmorph/run_config.hpp"
#include "slotmorph/toy.hpp"
#include "slotmorph/trainer.hpp"
#include "slotmorph/viz.hpp"

namespace py = pybind11;
using namespace slotmorph;

namespace {

RunConfig make_config(const std::map<std::string, std::string>& overrides)
{
    RunConfig cfg;
    cfg.merge(overrides);
    cfg.validate();
    return cfg;
}

py::dict metrics_dict(const EpochMetrics& m)
{
    py::dict d;
    d["epoch"] = m.epoch;
    d["step"] = m.step;
    d["rec_loss"] = m.rec_loss;
    d["l0"] = m.l0;
    d["lambda"] = m.lambda;
    d["open_gates"] = m.open_gates;
    return d;
}

// A trained or loaded model with its optimizer state.
class Model {
public:
    explicit Model(TrainState state) : state_(std::move(state)) {}

    static Model create(const std::vector<std::string>& lines, const std::map<std::string, std::string>& overrides)
    {
        const auto cfg = make_config(overrides);
        return Model(init_train_state(cfg.model(), cfg.schedule(), CharVocab::build(lines, cfg.min_char_count())));
    }

    static Model load(const std::string& path) { return Model(from_checkpoint(load_checkpoint(path))); }
    void save(const std::string& path) const { save_checkpoint(to_checkpoint(state_), path); }

    // Trains up to `epochs` total epochs; returns the new epochs' metrics.
    py::list train(const std::vector<std::string>& lines, std::size_t epochs)
    {
        state_.schedule.epochs = epochs;
        const auto seqs = sequences(lines);
        std::vector<EpochMetrics> out;
        {
            py::gil_scoped_release release;
            Trainer trainer(std::move(state_));
            out = trainer.train(seqs);
            state_ = std::move(trainer.state());
        }
        py::list l;
        for (const auto& m : out) l.append(metrics_dict(m));
        return l;
    }

    py::dict evaluate(const std::vector<std::string>& lines) const
    {
        const auto m = slotmorph::evaluate(state_.params, state_.model, sequences(lines));
        py::dict d;
        d["rec_loss"] = m.rec_loss;
        d["char_accuracy"] = m.char_accuracy;
        d["open_gates"] = m.open_gates;
        d["sentences"] = m.sentences;
        return d;
    }

    // Eval-mode gated slots, [N, K, D].
    py::array_t<float> slots(const std::vector<std::string>& lines) const
    {
        const auto t = extract_slots(state_.params, state_.model, sequences(lines));
        py::array_t<float> a(std::vector<py::ssize_t>(t.dims().begin(), t.dims().end()));
        std::copy(t.vec().begin(), t.vec().end(), a.mutable_data());
        return a;
    }

    // Per sentence: (row labels, [rows, K] cross-attention).
    py::list attention(const std::vector<std::string>& lines) const
    {
        py::list out;
        for (const auto& m : capture_maps(state_.params, state_.model, state_.vocab, sequences(lines)))
            out.append(py::make_tuple(m.row_labels, map_array(m)));
        return out;
    }

    static py::array_t<double> map_array(const AttnMap& m)
    {
        py::array_t<double> a({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols)});
        std::copy(m.values.begin(), m.values.end(), a.mutable_data());
        return a;
    }

    std::size_t epoch() const { return state_.epoch; }
    std::size_t num_slots() const { return state_.model.num_slots; }
    std::size_t vocab_size() const { return state_.vocab.size(); }

private:
    std::vector<CharSequence> sequences(const std::vector<std::string>& lines) const
    {
        return encode_lines(lines, state_.vocab, state_.model.max_len).sequences;
    }

    TrainState state_;
};

}  // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Slot-attention character autoencoder with sparse gates";

    py::register_exception<BpeError>(m, "BpeError", PyExc_ValueError);
    py::register_exception<ProbeError>(m, "ProbeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<TrainingAborted>(m, "TrainingAborted", PyExc_RuntimeError);

    m.def(
        "hungarian",
        [](const std::vector<std::vector<double>>& cost) {
            const auto a = hungarian(cost);
            return py::make_tuple(a.col_of_row, a.cost);
        },
        py::arg("cost"), "Minimum-cost assignment of a square matrix: (column per row, total cost).");

    py::class_<MergeTable>(m, "MergeTable")
        .def_readonly("merges", &MergeTable::merges)
        .def_readonly("vocab_size", &MergeTable::vocab_size)
        .def("tokenize", [](const MergeTable& t, const std::string& s) { return tokenize(s, t); })
        .def("tokenize_words", [](const MergeTable& t, const std::string& s) { return tokenize_words(s, t); })
        .def("dumps", &format_merges)
        .def_static("loads", &parse_merges)
        .def("__eq__", &MergeTable::operator==)
        .def("__len__", [](const MergeTable& t) { return t.merges.size(); });
    m.def("train_bpe", &train_bpe, py::arg("lines"), py::arg("vocab_size") = 5000);

    m.def(
        "toy_corpus",
        [](std::size_t sentences, std::uint64_t seed) {
            ToyCorpusConfig cfg;
            cfg.sentences = sentences;
            cfg.seed = seed;
            const auto c = make_toy_corpus(cfg);
            py::dict d;
            d["units"] = c.units;
            d["lines"] = c.lines;
            d["composition"] = c.composition;
            return d;
        },
        py::arg("sentences") = 2000, py::arg("seed") = 0);

    const GateConfig gate;
    m.def(
        "eval_gate", [](double log_alpha, double beta, double epsilon) {
            return eval_gate(log_alpha, GateConfig{beta, epsilon});
        },
        py::arg("log_alpha"), py::arg("beta") = gate.beta, py::arg("epsilon") = gate.epsilon);
    m.def(
        "open_probability", [](double log_alpha, double beta, double epsilon) {
            return open_probability(log_alpha, GateConfig{beta, epsilon});
        },
        py::arg("log_alpha"), py::arg("beta") = gate.beta, py::arg("epsilon") = gate.epsilon);

    m.def("lambda_at", [](std::size_t epoch, const std::map<std::string, std::string>& overrides) {
        return lambda_at(epoch, make_config(overrides).schedule());
    });
    m.def(
        "config_snapshot",
        [](const std::map<std::string, std::string>& overrides) { return make_config(overrides).snapshot(); },
        py::arg("overrides") = std::map<std::string, std::string>{});

    py::class_<Model>(m, "Model")
        .def_static("create", &Model::create, py::arg("lines"), py::arg("config") = std::map<std::string, std::string>{},
                    "Fresh model; `config` maps keys such as 'model.num_slots' to values.")
        .def_static("load", &Model::load)
        .def("save", &Model::save)
        .def("train", &Model::train, py::arg("lines"), py::arg("epochs"))
        .def("evaluate", &Model::evaluate)
        .def("slots", &Model::slots)
        .def("attention", &Model::attention)
        .def_property_readonly("epoch", &Model::epoch)
        .def_property_readonly("num_slots", &Model::num_slots)
        .def_property_readonly("vocab_size", &Model::vocab_size);

    m.def("read_attention_tsv", [](const std::string& path) {
        const auto map = read_tsv(path);
        return py::make_tuple(map.row_labels, Model::map_array(map));
    });
}
