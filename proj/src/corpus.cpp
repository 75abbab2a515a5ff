#include "slotmorph/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <locale>
#include <numeric>
#include <sstream>

#include "slotmorph/rng.hpp"

namespace slotmorph {

namespace utf8 {

std::u32string decode(std::string_view text)
{
    std::u32string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (c < 0x80) {
            len = 1;
            cp = c;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            throw CorpusError("invalid UTF-8 lead byte at offset " + std::to_string(i));
        }
        if (i + len > text.size()) throw CorpusError("truncated UTF-8 sequence at offset " + std::to_string(i));
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xC0) != 0x80) throw CorpusError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
            cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr char32_t min_for_len[] = {0, 0, 0x80, 0x800, 0x10000};
        if (cp < min_for_len[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
            throw CorpusError("invalid UTF-8 code point at offset " + std::to_string(i));
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string encode(char32_t cp)
{
    std::string out;
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    return out;
}

std::string encode(std::u32string_view cps)
{
    std::string out;
    out.reserve(cps.size());
    for (char32_t c : cps) out += encode(c);
    return out;
}

std::u32string lower(std::u32string_view cps)
{
    static const std::locale loc = [] {
        try {
            return std::locale("C.UTF-8");
        } catch (const std::runtime_error&) {
            return std::locale::classic();
        }
    }();
    const auto& facet = std::use_facet<std::ctype<wchar_t>>(loc);
    std::u32string out(cps);
    for (auto& c : out) {
        if (c < 0x80) {
            if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
        } else {
            c = static_cast<char32_t>(facet.tolower(static_cast<wchar_t>(c)));
        }
    }
    return out;
}

std::string lower(std::string_view text)
{
    return encode(lower(decode(text)));
}

}  // namespace utf8

namespace {

std::string_view strip_cr(std::string_view s)
{
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

}  // namespace

CharVocab CharVocab::build(const std::vector<std::string>& lines, std::size_t min_count)
{
    std::map<char32_t, std::size_t> counts;
    std::size_t total = 0;
    for (const auto& line : lines) {
        for (char32_t c : utf8::lower(utf8::decode(strip_cr(line)))) {
            ++counts[c];
            ++total;
        }
    }
    if (total == 0) throw CorpusError("empty corpus: no characters to build a vocabulary from");
    std::vector<std::pair<char32_t, std::size_t>> kept;
    for (const auto& [c, n] : counts)
        if (n > min_count) kept.emplace_back(c, n);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::u32string chars;
    for (const auto& [c, _] : kept) chars.push_back(c);
    CharVocab v = from_chars(chars);
    v.counts_ = std::move(counts);
    return v;
}

CharVocab CharVocab::from_chars(const std::u32string& chars)
{
    CharVocab v;
    v.chars_ = chars;
    for (std::size_t i = 0; i < chars.size(); ++i) {
        if (!v.index_.emplace(chars[i], static_cast<int>(kNumSpecials + i)).second)
            throw CorpusError("duplicate character in vocabulary");
    }
    return v;
}

int CharVocab::id(char32_t c) const
{
    auto it = index_.find(c);
    return it == index_.end() ? kUnk : it->second;
}

char32_t CharVocab::symbol(int id) const
{
    if (id == kUnk) return kUnkGlyph;
    if (id < kNumSpecials || static_cast<std::size_t>(id) >= size()) return 0;
    return chars_[static_cast<std::size_t>(id - kNumSpecials)];
}

std::string CharVocab::decode(const std::vector<int>& ids) const
{
    std::u32string out;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        out.push_back(symbol(id));
    }
    return utf8::encode(out);
}

void CharVocab::save(std::ostream& os) const
{
    os << "<pad>\t" << kPad << "\n<unk>\t" << kUnk << "\n<bos>\t" << kBos << "\n<eos>\t" << kEos << "\n";
    char buf[16];
    for (std::size_t i = 0; i < chars_.size(); ++i) {
        std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(chars_[i]));
        os << buf << '\t' << kNumSpecials + i << '\n';
    }
}

CharVocab CharVocab::load(std::istream& is)
{
    std::string line;
    std::vector<std::pair<int, char32_t>> entries;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = std::string(strip_cr(line));
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw CorpusError("vocab line " + std::to_string(lineno) + ": missing tab");
        const std::string key = line.substr(0, tab);
        const int id = std::stoi(line.substr(tab + 1));
        if (key.front() == '<') {
            static const std::map<std::string, int> specials{
                {"<pad>", kPad}, {"<unk>", kUnk}, {"<bos>", kBos}, {"<eos>", kEos}};
            auto it = specials.find(key);
            if (it == specials.end() || it->second != id)
                throw CorpusError("vocab line " + std::to_string(lineno) + ": bad special '" + key + "'");
            continue;
        }
        if (key.size() < 3 || key.compare(0, 2, "U+") != 0)
            throw CorpusError("vocab line " + std::to_string(lineno) + ": expected U+XXXX");
        entries.emplace_back(id, static_cast<char32_t>(std::stoul(key.substr(2), nullptr, 16)));
    }
    std::sort(entries.begin(), entries.end());
    std::u32string chars;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != static_cast<int>(kNumSpecials + i))
            throw CorpusError("vocab ids are not dense");
        chars.push_back(entries[i].second);
    }
    return from_chars(chars);
}

void CharVocab::save(const std::string& path) const
{
    std::ofstream os(path);
    if (!os) throw CorpusError("cannot write vocabulary file " + path);
    save(os);
}

CharVocab CharVocab::load(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw CorpusError("cannot read vocabulary file " + path);
    return load(is);
}

EncodeResult encode_line(std::string_view text, const CharVocab& vocab, std::size_t max_len)
{
    const auto cps = utf8::lower(utf8::decode(strip_cr(text)));
    if (cps.empty()) return {std::nullopt, SkipReason::Empty};
    if (cps.size() >= max_len) return {std::nullopt, SkipReason::TooLong};
    CharSequence seq;
    seq.raw = std::string(strip_cr(text));
    seq.ids.reserve(cps.size());
    for (char32_t c : cps) seq.ids.push_back(vocab.id(c));
    seq.mask.assign(seq.ids.size(), 1);
    return {std::move(seq), SkipReason::None};
}

EncodedCorpus encode_lines(const std::vector<std::string>& lines, const CharVocab& vocab, std::size_t max_len)
{
    EncodedCorpus out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto r = encode_line(lines[i], vocab, max_len);
        switch (r.skipped) {
            case SkipReason::None:
                out.sequences.push_back(std::move(*r.sequence));
                out.line_index.push_back(i);
                ++out.stats.accepted;
                break;
            case SkipReason::Empty: ++out.stats.skipped_empty; break;
            case SkipReason::TooLong: ++out.stats.skipped_long; break;
        }
    }
    return out;
}

std::vector<std::string> read_lines(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw CorpusError("cannot read " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.emplace_back(strip_cr(line));
    return lines;
}

Batch make_batch(const std::vector<CharSequence>& sequences, const std::vector<std::size_t>& indices)
{
    Batch b;
    b.size = indices.size();
    b.indices = indices;
    std::size_t longest = 0;
    for (auto i : indices) longest = std::max(longest, sequences.at(i).ids.size());
    b.width = longest + 1;
    b.tokens.assign(b.size * b.width, CharVocab::kPad);
    b.decoder_inputs.assign(b.size * b.width, CharVocab::kPad);
    b.mask.assign(b.size * b.width, 0);
    for (std::size_t r = 0; r < b.size; ++r) {
        const auto& ids = sequences[indices[r]].ids;
        b.lengths.push_back(ids.size());
        b.decoder_inputs[r * b.width] = CharVocab::kBos;
        for (std::size_t t = 0; t < ids.size(); ++t) {
            b.tokens[r * b.width + t] = ids[t];
            b.decoder_inputs[r * b.width + t + 1] = ids[t];
        }
        b.tokens[r * b.width + ids.size()] = CharVocab::kEos;
        for (std::size_t t = 0; t <= ids.size(); ++t) b.mask[r * b.width + t] = 1;
    }
    return b;
}

std::vector<Batch> make_batches(const std::vector<CharSequence>& sequences, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed)
{
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (sequences.empty()) throw CorpusError("no sequences to batch");
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const auto end = std::min(order.size(), start + batch_size);
        out.push_back(make_batch(sequences, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                                     order.begin() + static_cast<std::ptrdiff_t>(end))));
    }
    return out;
}

void BatchQueue::push(Batch batch)
{
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(batch));
    cv_.notify_all();
}

std::optional<Batch> BatchQueue::pop()
{
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    Batch b = std::move(items_.front());
    items_.pop_front();
    cv_.notify_all();
    return b;
}

void BatchQueue::close()
{
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
}

}  // namespace slotmorph
