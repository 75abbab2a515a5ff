#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "slotmorph/bpe.hpp"
#include "slotmorph/corpus.hpp"
#include "slotmorph/rng.hpp"

using namespace slotmorph;

namespace {

// Straightforward recount-every-step trainer used as the oracle.
MergeTable reference_bpe(const std::vector<std::string>& lines, std::size_t vocab_size)
{
    std::map<std::string, long> freq;
    for (const auto& l : lines)
        for (const auto& w : split_words(l)) ++freq[w];
    std::vector<std::pair<std::vector<std::string>, long>> words;
    std::set<std::string> base{kEndOfWord};
    for (const auto& [w, f] : freq) {
        std::vector<std::string> syms;
        for (char32_t c : utf8::decode(w)) syms.push_back(utf8::encode(c));
        syms.emplace_back(kEndOfWord);
        base.insert(syms.begin(), syms.end());
        words.emplace_back(syms, f);
    }
    MergeTable t;
    while (base.size() + t.merges.size() < vocab_size) {
        std::map<std::pair<std::string, std::string>, long> counts;
        for (const auto& [syms, f] : words)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += f;
        std::pair<std::string, std::string> best;
        long best_count = 0;
        for (const auto& [p, c] : counts)
            if (c > best_count) {
                best = p;
                best_count = c;
            }
        if (best_count < 2) break;
        t.merges.push_back(best);
        for (auto& [syms, f] : words) {
            std::vector<std::string> out;
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
                    out.push_back(syms[i] + syms[i + 1]);
                    ++i;
                } else {
                    out.push_back(syms[i]);
                }
            }
            syms = out;
        }
    }
    return t;
}

std::string join(const std::vector<std::string>& v, const std::string& sep = "")
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
    return out;
}

}  // namespace

TEST_CASE("merge trace on low low lower")
{
    auto t = train_bpe({"low low lower"}, 100);
    REQUIRE(t.merges.size() >= 2);
    CHECK(t.merges[0] == std::make_pair(std::string("l"), std::string("o")));
    CHECK(t.merges[1] == std::make_pair(std::string("lo"), std::string("w")));
}

TEST_CASE("single character corpus")
{
    auto t = train_bpe({"aaaa"}, 100);
    REQUIRE_FALSE(t.merges.empty());
    CHECK(t.merges[0] == std::make_pair(std::string("a"), std::string("a")));
    CHECK(t == reference_bpe({"aaaa"}, 100));
    CHECK(train_bpe({"aaaa aaaa"}, 100) == reference_bpe({"aaaa aaaa"}, 100));
}

TEST_CASE("vocab size bounds")
{
    // base = {l, o, w, e, r, </w>}
    CHECK(train_bpe({"low low lower"}, 6).merges.empty());
    CHECK(train_bpe({"low low lower"}, 7).merges.size() == 1);
    CHECK_THROWS_AS(train_bpe({"low low lower"}, 5), BpeError);
}

TEST_CASE("matches the reference trainer on random corpora")
{
    Rng rng(17);
    const std::string alphabet = "abcde";
    for (int rep = 0; rep < 60; ++rep) {
        std::vector<std::string> lines;
        const auto n = 1 + rng.below(8);
        for (std::size_t i = 0; i < n; ++i) {
            std::string line;
            const auto words = 1 + rng.below(5);
            for (std::size_t w = 0; w < words; ++w) {
                if (w) line += ' ';
                const auto len = 1 + rng.below(6);
                for (std::size_t c = 0; c < len; ++c) line += alphabet[rng.below(alphabet.size())];
            }
            lines.push_back(line);
        }
        const auto vs = 6 + rng.below(40);
        CHECK(train_bpe(lines, vs) == reference_bpe(lines, vs));
    }
}

TEST_CASE("tokenize")
{
    const std::vector<std::string> corpus{"the cooking cook is cooking", "a cooking book"};
    auto t = train_bpe(corpus, 1000);
    CHECK(tokenize("", t).empty());
    CHECK(tokenize("cooking", t) == std::vector<std::string>{"cooking"});
    auto unk = tokenize("zq", t);
    CHECK(unk == std::vector<std::string>{"z", "q"});

    Rng rng(2);
    const std::string alphabet = "cokingteab";
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<std::string> words;
        for (std::size_t w = 0, n = 1 + rng.below(4); w < n; ++w) {
            std::string word;
            for (std::size_t c = 0, len = 1 + rng.below(8); c < len; ++c) word += alphabet[rng.below(alphabet.size())];
            words.push_back(word);
        }
        const auto sentence = join(words, " ");
        std::vector<std::string> rebuilt;
        for (const auto& w : tokenize_words(sentence, t)) rebuilt.push_back(join(w));
        CHECK(join(rebuilt, " ") == sentence);
    }
}

TEST_CASE("training is deterministic")
{
    const std::vector<std::string> corpus{"ab ba ab abab", "ba ba baba", "abba"};
    CHECK(train_bpe(corpus, 30) == train_bpe(corpus, 30));
}

TEST_CASE("merge file round trip")
{
    auto t = train_bpe({"héllo hello hélium", "low lower lowest"}, 40);
    const auto text = format_merges(t);
    CHECK(text.rfind("#version 1\n", 0) == 0);
    CHECK(parse_merges(text) == t);
    CHECK_THROWS_AS(parse_merges("l o\n"), BpeError);
    CHECK_THROWS_AS(parse_merges("#version 1\nlo\n"), BpeError);
}

TEST_CASE("external segments")
{
    auto segs = parse_external_segments({"cooking|cook ing", "a|a"}, {"cooking", "a"});
    CHECK(segs[0] == std::vector<std::string>{"cook", "ing"});
    CHECK(segs[1] == std::vector<std::string>{"a"});
    auto multi = parse_external_segments({"i|i was|was cooking|cook ing"}, {"i was cooking"});
    CHECK(multi[0] == std::vector<std::string>{"i", "was", "cook", "ing"});

    std::vector<std::string> sentences(10, "a"), nine(9, "a|a");
    CHECK_THROWS_WITH_AS(parse_external_segments(nine, sentences), doctest::Contains("line 10"), BpeError);
    CHECK_THROWS_WITH_AS(parse_external_segments({"a|a", "b|b"}, {"a", "c"}), doctest::Contains("line 2"), BpeError);
}

TEST_CASE("probe targets")
{
    auto labels = LabelVocab::build({{"cook", "ing"}, {"a"}});
    CHECK(labels.size() == 4);
    CHECK(labels.empty() == 4);
    CHECK(labels.id("zzz") == labels.other());
    CHECK(labels.label(labels.empty()) == kEmptyLabel);
    auto t = make_probe_targets({{"cook", "ing"}, {"a", "a", "a", "a"}, {"new"}}, labels, 3);
    CHECK(t.skipped == 1);
    REQUIRE(t.targets.size() == 2);
    CHECK(t.targets[0] == std::vector<int>{labels.id("cook"), labels.id("ing"), labels.empty()});
    CHECK(t.targets[1] == std::vector<int>{labels.other(), labels.empty(), labels.empty()});
    CHECK(t.sentence_index == std::vector<std::size_t>{0, 2});
    for (const auto& row : t.targets) CHECK(row.size() == 3);
}
