#include "slotmorph/bpe.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "slotmorph/corpus.hpp"

namespace slotmorph {

namespace {

using Pair = std::pair<std::string, std::string>;
using Symbols = std::vector<std::string>;

Symbols word_symbols(const std::string& word)
{
    Symbols out;
    for (char32_t c : utf8::decode(word)) out.push_back(utf8::encode(c));
    out.emplace_back(kEndOfWord);
    return out;
}

void merge_in_place(Symbols& syms, const Pair& p)
{
    Symbols out;
    out.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == p.first && syms[i + 1] == p.second) {
            out.push_back(syms[i] + syms[i + 1]);
            ++i;
        } else {
            out.push_back(syms[i]);
        }
    }
    syms = std::move(out);
}

class PairCounter {
public:
    void add(const Pair& p, long delta, std::size_t word)
    {
        auto& c = counts_[p];
        if (c) ranked_.erase({-c, p});
        c += delta;
        if (c > 0) {
            ranked_.insert({-c, p});
            if (delta > 0) where_[p].insert(word);
        } else {
            counts_.erase(p);
        }
    }
    bool empty() const { return ranked_.empty(); }
    long best_count() const { return -ranked_.begin()->first; }
    Pair best() const { return ranked_.begin()->second; }
    std::set<std::size_t> take_words(const Pair& p)
    {
        auto it = where_.find(p);
        if (it == where_.end()) return {};
        auto words = std::move(it->second);
        where_.erase(it);
        return words;
    }

private:
    std::map<Pair, long> counts_;
    std::set<std::pair<long, Pair>> ranked_;
    std::map<Pair, std::set<std::size_t>> where_;
};

}  // namespace

std::vector<std::string> split_words(const std::string& sentence)
{
    std::vector<std::string> out;
    std::istringstream is(sentence);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

MergeTable train_bpe(const std::vector<std::string>& lines, std::size_t vocab_size)
{
    std::map<std::string, long> word_freq;
    for (const auto& line : lines)
        for (auto& w : split_words(line)) ++word_freq[w];

    std::vector<Symbols> words;
    std::vector<long> freq;
    std::set<std::string> base{kEndOfWord};
    for (const auto& [w, f] : word_freq) {
        words.push_back(word_symbols(w));
        freq.push_back(f);
        base.insert(words.back().begin(), words.back().end());
    }
    if (vocab_size < base.size())
        throw BpeError("bpe vocab size " + std::to_string(vocab_size) + " is below the base symbol count " +
                       std::to_string(base.size()));

    PairCounter counter;
    for (std::size_t w = 0; w < words.size(); ++w)
        for (std::size_t i = 0; i + 1 < words[w].size(); ++i) counter.add({words[w][i], words[w][i + 1]}, freq[w], w);

    MergeTable table;
    table.vocab_size = vocab_size;
    while (base.size() + table.merges.size() < vocab_size && !counter.empty() && counter.best_count() >= 2) {
        const Pair p = counter.best();
        table.merges.push_back(p);
        for (auto w : counter.take_words(p)) {
            auto& syms = words[w];
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) counter.add({syms[i], syms[i + 1]}, -freq[w], w);
            merge_in_place(syms, p);
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) counter.add({syms[i], syms[i + 1]}, freq[w], w);
        }
    }
    return table;
}

std::vector<std::vector<std::string>> tokenize_words(const std::string& sentence, const MergeTable& table)
{
    std::map<Pair, std::size_t> rank;
    for (std::size_t i = 0; i < table.merges.size(); ++i) rank.emplace(table.merges[i], i);

    std::vector<std::vector<std::string>> out;
    for (const auto& word : split_words(sentence)) {
        auto syms = word_symbols(word);
        for (;;) {
            std::size_t best = table.merges.size();
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = rank.find({syms[i], syms[i + 1]});
                if (it != rank.end() && it->second < best) best = it->second;
            }
            if (best == table.merges.size()) break;
            merge_in_place(syms, table.merges[best]);
        }
        std::vector<std::string> tokens;
        const std::string eow = kEndOfWord;
        for (auto& s : syms) {
            if (s.size() >= eow.size() && s.compare(s.size() - eow.size(), eow.size(), eow) == 0)
                s.resize(s.size() - eow.size());
            if (!s.empty()) tokens.push_back(std::move(s));
        }
        out.push_back(std::move(tokens));
    }
    return out;
}

std::vector<std::string> tokenize(const std::string& sentence, const MergeTable& table)
{
    std::vector<std::string> out;
    for (auto& word : tokenize_words(sentence, table))
        for (auto& t : word) out.push_back(std::move(t));
    return out;
}

std::string format_merges(const MergeTable& table)
{
    std::string out = "#version 1\n";
    for (const auto& [l, r] : table.merges) out += l + " " + r + "\n";
    return out;
}

MergeTable parse_merges(const std::string& text)
{
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "#version 1") throw BpeError("merge file: missing '#version 1' header");
    MergeTable table;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 == line.size() || line.find(' ', sp + 1) != std::string::npos)
            throw BpeError("merge file line " + std::to_string(lineno) + ": expected 'left right'");
        table.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return table;
}

void save_merges(const MergeTable& table, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw BpeError("cannot write merge file '" + path + "'");
    os << format_merges(table);
    if (!os) throw BpeError("failed writing merge file '" + path + "'");
}

MergeTable load_merges(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw BpeError("cannot open merge file '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_merges(ss.str());
}

std::vector<std::vector<std::string>> parse_external_segments(const std::vector<std::string>& segment_lines,
                                                              const std::vector<std::string>& sentences)
{
    std::vector<std::vector<std::string>> out;
    const auto n = std::max(segment_lines.size(), sentences.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto lineno = std::to_string(i + 1);
        if (i >= segment_lines.size() || i >= sentences.size())
            throw BpeError("segment file has " + std::to_string(segment_lines.size()) + " lines but the corpus has " +
                           std::to_string(sentences.size()) + "; first unmatched line " + lineno);
        std::vector<std::string> words, segs;
        for (const auto& tok : split_words(segment_lines[i])) {
            const auto bar = tok.find('|');
            if (bar != std::string::npos) {
                words.push_back(tok.substr(0, bar));
                if (bar + 1 < tok.size()) segs.push_back(tok.substr(bar + 1));
            } else {
                if (words.empty()) throw BpeError("segment file line " + lineno + ": segment before any 'word|' record");
                segs.push_back(tok);
            }
        }
        if (words != split_words(sentences[i]))
            throw BpeError("segment file line " + lineno + " does not match corpus sentence " + lineno);
        out.push_back(std::move(segs));
    }
    return out;
}

std::vector<std::vector<std::string>> load_external_segments(const std::string& path,
                                                             const std::vector<std::string>& sentences)
{
    return parse_external_segments(read_lines(path), sentences);
}

LabelVocab LabelVocab::build(const std::vector<std::vector<std::string>>& token_lists)
{
    std::set<std::string> seen;
    for (const auto& tl : token_lists) seen.insert(tl.begin(), tl.end());
    LabelVocab v;
    for (const auto& s : seen) {
        v.index_.emplace(s, static_cast<int>(v.labels_.size()));
        v.labels_.push_back(s);
    }
    v.labels_.emplace_back(kOtherLabel);
    return v;
}

int LabelVocab::id(const std::string& token) const
{
    auto it = index_.find(token);
    return it == index_.end() ? other() : it->second;
}

const std::string& LabelVocab::label(int id) const
{
    static const std::string empty = kEmptyLabel;
    if (id == this->empty()) return empty;
    return labels_.at(static_cast<std::size_t>(id));
}

ProbeTargets make_probe_targets(const std::vector<std::vector<std::string>>& token_lists, const LabelVocab& labels,
                                std::size_t num_slots)
{
    ProbeTargets out;
    for (std::size_t i = 0; i < token_lists.size(); ++i) {
        if (token_lists[i].size() > num_slots) {
            ++out.skipped;
            continue;
        }
        std::vector<int> t(num_slots, labels.empty());
        for (std::size_t j = 0; j < token_lists[i].size(); ++j) t[j] = labels.id(token_lists[i][j]);
        out.targets.push_back(std::move(t));
        out.sentence_index.push_back(i);
    }
    return out;
}

}  // namespace slotmorph
