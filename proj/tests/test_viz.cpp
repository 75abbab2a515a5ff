#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "slotmorph/viz.hpp"

using namespace slotmorph;

namespace {

AttnMap make_map(std::vector<std::string> labels, std::size_t cols, Rng& rng)
{
    AttnMap m{std::move(labels), cols, {}};
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double total = 0;
        std::vector<double> row(cols);
        for (auto& v : row) total += (v = rng.uniform(0.01, 1.0));
        for (auto v : row) m.values.push_back(v / total);
    }
    return m;
}

double row_sum(const AttnMap& m, std::size_t r)
{
    double s = 0;
    for (std::size_t c = 0; c < m.cols; ++c) s += m.at(r, c);
    return s;
}

struct TinyModel {
    CharVocab vocab;
    std::vector<std::string> lines{"abc", "ba", "cab ab", "a"};
    std::vector<CharSequence> seqs;
    ModelConfig cfg;
    ParamSet<float> params;

    TinyModel()
    {
        vocab = CharVocab::build(lines, 0);
        seqs = encode_lines(lines, vocab, 16).sequences;
        cfg.vocab_size = vocab.size();
        cfg.d_model = 16;
        cfg.ff_dim = 16;
        cfg.num_slots = 5;
        cfg.slot_dim = 8;
        cfg.max_len = 16;
        params = init_model<float>(cfg, 2);
    }
};

}  // namespace

TEST_CASE("captured maps are row stochastic")
{
    TinyModel t;
    auto maps = capture_maps(t.params, t.cfg, t.vocab, t.seqs, 3);
    REQUIRE(maps.size() == t.lines.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
        CHECK(maps[i].rows() == t.lines[i].size() + 1);
        CHECK(maps[i].cols == 5);
        CHECK(maps[i].row_labels.back() == kEosLabel);
        CHECK(maps[i].row_labels.front() == std::string(1, t.lines[i][0]));
        for (std::size_t r = 0; r < maps[i].rows(); ++r) CHECK(std::abs(row_sum(maps[i], r) - 1.0) < 1e-6);
    }
    // Batch size does not change the maps.
    auto single = capture_maps(t.params, t.cfg, t.vocab, t.seqs, 1);
    for (std::size_t i = 0; i < maps.size(); ++i)
        for (std::size_t j = 0; j < maps[i].values.size(); ++j)
            CHECK(maps[i].values[j] == doctest::Approx(single[i].values[j]).epsilon(1e-5));
}

TEST_CASE("average maps")
{
    Rng rng(4);
    auto a = make_map({"a", "b", "c"}, 3, rng);
    auto avg_same = average_maps({a, a});
    CHECK(avg_same.values == a.values);
    CHECK(avg_same.row_labels == std::vector<std::string>{"1", "2", "3"});

    auto b = make_map({"v", "w", "x", "y", "z"}, 3, rng);
    auto avg = average_maps({a, b});
    REQUIRE(avg.rows() == 5);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(avg.at(0, c) == doctest::Approx((a.at(0, c) + b.at(0, c)) / 2));
        CHECK(avg.at(2, c) == doctest::Approx((a.at(2, c) + b.at(2, c)) / 2));
        CHECK(avg.at(3, c) == b.at(3, c));
        CHECK(avg.at(4, c) == b.at(4, c));
    }
    for (std::size_t r = 0; r < avg.rows(); ++r) CHECK(std::abs(row_sum(avg, r) - 1.0) < 1e-6);

    CHECK_THROWS(average_maps({}));
    auto narrow = make_map({"a"}, 2, rng);
    CHECK_THROWS(average_maps({a, narrow}));
}

TEST_CASE("tsv round trip")
{
    Rng rng(5);
    auto m = make_map({"a", "\xc3\xa9", "\xe3\x81\x82", "tab\there", "back\\slash", kEosLabel}, 4, rng);
    std::stringstream ss;
    write_tsv(m, ss);
    CHECK(ss.str().rfind("char\t0\t1\t2\t3\n", 0) == 0);
    auto back = read_tsv(ss);
    CHECK(back.row_labels == m.row_labels);
    REQUIRE(back.cols == m.cols);
    // Half a unit in the ninth significant digit.
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        const double unit = std::pow(10.0, std::floor(std::log10(m.values[i])) - 8);
        CHECK(std::abs(back.values[i] - m.values[i]) <= 0.5 * unit * (1 + 1e-6));
    }
    for (std::size_t r = 0; r < back.rows(); ++r) CHECK(std::abs(row_sum(back, r) - 1.0) < 1e-6);

    const auto path = std::filesystem::temp_directory_path() / "slotmorph_viz_test.tsv";
    write_tsv(m, path.string());
    CHECK(read_tsv(path.string()).row_labels == m.row_labels);
    std::filesystem::remove(path);
    CHECK_THROWS(write_tsv(m, "/nonexistent-dir/x.tsv"));

    std::istringstream bad("char\t0\t1\na\t0.5\n");
    CHECK_THROWS(read_tsv(bad));
}

TEST_CASE("svg export")
{
    AttnMap m{{"a", "b"}, 2, {0.9, 0.1, 0.0, 1.0}};
    std::ostringstream os;
    write_svg(m, os);
    const auto svg = os.str();
    std::size_t cells = 0;
    for (auto pos = svg.find("class=\"cell\""); pos != std::string::npos; pos = svg.find("class=\"cell\"", pos + 1))
        ++cells;
    CHECK(cells == 4);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("rgb(0,0,0)") != std::string::npos);
    CHECK(svg.find("rgb(255,255,255)") != std::string::npos);

    AttnMap utf{{"\xc3\xa9"}, 1, {1.0}};
    std::ostringstream os2;
    write_svg(utf, os2);
    CHECK(os2.str().find("\xc3\xa9") != std::string::npos);
}

TEST_CASE("entropy and contiguity")
{
    AttnMap sharp{{"a", "b", "c", kEosLabel}, 2, {1, 0, 1, 0, 0, 1, 0.5, 0.5}};
    AttnMap flat{{"a", "b", "c", kEosLabel}, 2, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}};
    CHECK(mean_row_entropy({sharp}) == doctest::Approx(std::log(2.0) / 4));
    CHECK(mean_row_entropy({flat}) == doctest::Approx(std::log(2.0)));
    // Pairs (a,b) share slot 0; (b,c) differ; the EOS row is excluded.
    CHECK(contiguity_score({sharp}) == doctest::Approx(0.5));
    AttnMap single{{"a", kEosLabel}, 2, {1, 0, 0, 1}};
    CHECK(contiguity_score({sharp, single}) == doctest::Approx(0.5));
}
