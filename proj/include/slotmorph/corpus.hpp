#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace slotmorph {

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace utf8 {

// Throws CorpusError on malformed input.
std::u32string decode(std::string_view text);
std::string encode(std::u32string_view cps);
std::string encode(char32_t cp);
std::u32string lower(std::u32string_view cps);
std::string lower(std::string_view text);

}  // namespace utf8

inline constexpr char32_t kUnkGlyph = U'�';

class CharVocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kNumSpecials = 4;

    // Lowercases every line and keeps characters seen strictly more than
    // `min_count` times. Ids: specials, then descending frequency, ties by
    // ascending codepoint.
    static CharVocab build(const std::vector<std::string>& lines, std::size_t min_count);
    static CharVocab from_chars(const std::u32string& chars);

    int id(char32_t c) const;
    char32_t symbol(int id) const;
    std::size_t size() const { return kNumSpecials + chars_.size(); }
    const std::u32string& chars() const { return chars_; }
    const std::map<char32_t, std::size_t>& counts() const { return counts_; }

    // Drops PAD/BOS/EOS, renders UNK as U+FFFD.
    std::string decode(const std::vector<int>& ids) const;

    void save(std::ostream& os) const;
    static CharVocab load(std::istream& is);
    void save(const std::string& path) const;
    static CharVocab load(const std::string& path);

    bool operator==(const CharVocab& o) const { return chars_ == o.chars_; }

private:
    std::u32string chars_;
    std::map<char32_t, int> index_;
    std::map<char32_t, std::size_t> counts_;
};

struct CharSequence {
    std::vector<int> ids;
    std::string raw;
    std::vector<std::uint8_t> mask;
};

enum class SkipReason { None, Empty, TooLong };

struct EncodeResult {
    std::optional<CharSequence> sequence;
    SkipReason skipped = SkipReason::None;
};

// Lines with max_len or more characters are skipped, as are empty lines.
EncodeResult encode_line(std::string_view text, const CharVocab& vocab, std::size_t max_len);

struct EncodeStats {
    std::size_t accepted = 0;
    std::size_t skipped_empty = 0;
    std::size_t skipped_long = 0;
    std::size_t lines() const { return accepted + skipped_empty + skipped_long; }
};

struct EncodedCorpus {
    std::vector<CharSequence> sequences;
    // Line number (0-based) of every accepted sequence in the source.
    std::vector<std::size_t> line_index;
    EncodeStats stats;
};

EncodedCorpus encode_lines(const std::vector<std::string>& lines, const CharVocab& vocab, std::size_t max_len);

std::vector<std::string> read_lines(const std::string& path);

// Padded batch. Width is the longest sequence plus one for EOS/BOS.
//   tokens:         c1 .. cn EOS PAD...   (encoder input and decoder target)
//   decoder_inputs: BOS c1 .. cn PAD...
//   mask:           1 on non-PAD token positions
struct Batch {
    std::size_t size = 0;
    std::size_t width = 0;
    std::vector<int> tokens;
    std::vector<int> decoder_inputs;
    std::vector<std::uint8_t> mask;
    std::vector<std::size_t> lengths;  // characters, without EOS
    std::vector<std::size_t> indices;  // positions in the source sequence list

    int token(std::size_t b, std::size_t t) const { return tokens[b * width + t]; }
};

Batch make_batch(const std::vector<CharSequence>& sequences, const std::vector<std::size_t>& indices);

// Deterministic for a given seed; no shuffling when the seed is absent.
std::vector<Batch> make_batches(const std::vector<CharSequence>& sequences, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed);

// Bounded single-producer/single-consumer handoff for prepared batches.
class BatchQueue {
public:
    explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

    void push(Batch batch);
    // Empty optional once the producer has closed and the queue drained.
    std::optional<Batch> pop();
    void close();

private:
    std::size_t capacity_;
    std::deque<Batch> items_;
    bool closed_ = false;
    std::mutex mu_;
    std::condition_variable cv_;
};

}  // namespace slotmorph
