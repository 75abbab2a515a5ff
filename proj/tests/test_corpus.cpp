#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>
#include <thread>

#include "slotmorph/corpus.hpp"
#include "slotmorph/rng.hpp"

using namespace slotmorph;

TEST_CASE("vocab threshold is strict")
{
    std::vector<std::string> lines{std::string(25, 'q'), std::string(26, 'z')};
    auto v = CharVocab::build(lines, 25);
    CHECK(v.id(U'q') == CharVocab::kUnk);
    CHECK(v.id(U'z') >= CharVocab::kNumSpecials);
}

TEST_CASE("vocab basics")
{
    auto v = CharVocab::build({"aaa"}, 0);
    CHECK(v.size() == CharVocab::kNumSpecials + 1);
    CHECK(v.chars() == U"a");

    auto w = CharVocab::build({"ABC abc"}, 0);
    CHECK(w.size() == CharVocab::kNumSpecials + 4);
    for (char32_t c : std::u32string(U"abc ")) CHECK(w.id(c) >= CharVocab::kNumSpecials);
    CHECK(encode_line("A", w, 8).sequence->ids[0] == w.id(U'a'));

    CHECK_THROWS_AS(CharVocab::build({}, 0), CorpusError);
    CHECK_THROWS_AS(CharVocab::build({"", ""}, 0), CorpusError);
}

TEST_CASE("vocab ids by frequency then codepoint")
{
    auto v = CharVocab::build({"bbbaaccd"}, 0);
    CHECK(v.chars() == U"bacd");
}

TEST_CASE("vocab lowercases non-ascii")
{
    auto v = CharVocab::build({"ÄÖä"}, 0);
    CHECK(v.id(U'ä') >= CharVocab::kNumSpecials);
    CHECK(encode_line("Ä", v, 8).sequence->ids[0] == v.id(U'ä'));
    CHECK(v.counts().at(U'ä') == 2);
}

TEST_CASE("vocab save and load")
{
    auto v = CharVocab::build({"héllo wörld\t!"}, 0);
    std::stringstream ss;
    v.save(ss);
    CHECK(ss.str().rfind("<pad>\t0\n", 0) == 0);
    auto back = CharVocab::load(ss);
    CHECK(back == v);
    for (char32_t c : v.chars()) CHECK(back.id(c) == v.id(c));
}

TEST_CASE("invalid utf8 is rejected")
{
    CHECK_THROWS_AS(utf8::decode("\xff\xfe"), CorpusError);
    CHECK_THROWS_AS(utf8::decode("\xc3"), CorpusError);
}

TEST_CASE("encode_line length bound")
{
    auto v = CharVocab::build({"a"}, 0);
    auto ok = encode_line(std::string(127, 'a'), v, 128);
    REQUIRE(ok.sequence);
    CHECK(ok.sequence->ids.size() == 127);
    auto too_long = encode_line(std::string(128, 'a'), v, 128);
    CHECK_FALSE(too_long.sequence);
    CHECK(too_long.skipped == SkipReason::TooLong);
    auto empty = encode_line("", v, 128);
    CHECK_FALSE(empty.sequence);
    CHECK(empty.skipped == SkipReason::Empty);
}

TEST_CASE("length counts characters, not bytes")
{
    auto v = CharVocab::build({"é"}, 0);
    CHECK(encode_line("ééé", v, 4).sequence);
    CHECK_FALSE(encode_line("éééé", v, 4).sequence);
}

TEST_CASE("decode round trip with unk glyph")
{
    auto v = CharVocab::build({"hello world"}, 0);
    auto r = encode_line("Hello, World", v, 128);
    REQUIRE(r.sequence);
    CHECK(v.decode(r.sequence->ids) == "hello\xEF\xBF\xBD world");

    Rng rng(4);
    const std::string alphabet = "abcdefghij ";
    auto big = CharVocab::build({alphabet}, 0);
    for (int rep = 0; rep < 200; ++rep) {
        std::string s;
        const auto n = 1 + rng.below(40);
        for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.below(alphabet.size())];
        auto e = encode_line(s, big, 128);
        REQUIRE(e.sequence);
        CHECK(big.decode(e.sequence->ids) == s);
    }
}

TEST_CASE("encode_lines accounting")
{
    auto v = CharVocab::build({"abc"}, 0);
    std::vector<std::string> lines{"abc", "", "aaaaaaa", "b", "cc"};
    auto enc = encode_lines(lines, v, 5);
    CHECK(enc.stats.accepted == 3);
    CHECK(enc.stats.skipped_empty == 1);
    CHECK(enc.stats.skipped_long == 1);
    CHECK(enc.stats.lines() == lines.size());
    CHECK(enc.line_index == std::vector<std::size_t>{0, 3, 4});
    for (const auto& s : enc.sequences) CHECK(s.ids.size() < 5);
}

namespace {
std::vector<CharSequence> make_seqs(const std::vector<std::string>& lines, const CharVocab& v)
{
    return encode_lines(lines, v, 128).sequences;
}
}  // namespace

TEST_CASE("batch sizes and padding")
{
    auto v = CharVocab::build({"abcdefg"}, 0);
    auto seqs = make_seqs({"a", "ab", "abc", "abcd", "abcde"}, v);
    auto batches = make_batches(seqs, 2, 1);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size == 2);
    CHECK(batches[1].size == 2);
    CHECK(batches[2].size == 1);
    CHECK_THROWS_AS(make_batches(seqs, 0, 1), std::invalid_argument);

    auto two = make_seqs({"abc", "abcdefg"}, v);
    auto b = make_batch(two, {0, 1});
    CHECK(b.width == 8);
    CHECK(b.token(0, 3) == CharVocab::kEos);
    CHECK(b.token(0, 4) == CharVocab::kPad);
    CHECK(b.token(1, 7) == CharVocab::kEos);
    CHECK(b.decoder_inputs[0] == CharVocab::kBos);
    CHECK(b.decoder_inputs[1] == b.tokens[0]);
    for (std::size_t i = 0; i < b.tokens.size(); ++i) CHECK((b.mask[i] != 0) == (b.tokens[i] != CharVocab::kPad));
}

TEST_CASE("batch order is deterministic per seed")
{
    auto v = CharVocab::build({"abcdefghij"}, 0);
    std::vector<std::string> lines;
    for (int i = 1; i <= 10; ++i) lines.push_back(std::string(static_cast<std::size_t>(i), 'a'));
    auto seqs = make_seqs(lines, v);
    auto order = [&](std::uint64_t seed) {
        std::vector<std::size_t> out;
        for (const auto& b : make_batches(seqs, 3, seed)) out.insert(out.end(), b.indices.begin(), b.indices.end());
        return out;
    };
    CHECK(order(9) == order(9));
    CHECK(order(9) != order(10));
    auto plain = make_batches(seqs, 4, std::nullopt);
    CHECK(plain[0].indices == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("batch queue hands off in order")
{
    auto v = CharVocab::build({"abc"}, 0);
    auto seqs = make_seqs({"a", "b", "c", "ab", "bc", "ca", "abc"}, v);
    auto batches = make_batches(seqs, 2, 3);
    BatchQueue q(2);
    std::thread producer([&] {
        for (const auto& b : batches) q.push(b);
        q.close();
    });
    std::vector<std::vector<std::size_t>> got;
    while (auto b = q.pop()) got.push_back(b->indices);
    producer.join();
    REQUIRE(got.size() == batches.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == batches[i].indices);
}
