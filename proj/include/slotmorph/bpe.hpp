#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace slotmorph {

class BpeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kEndOfWord = "</w>";

// Ordered merges. Symbols are UTF-8 strings; the end-of-word marker is its
// own base symbol, so base vocabulary = distinct characters + 1.
struct MergeTable {
    std::vector<std::pair<std::string, std::string>> merges;
    std::size_t vocab_size = 0;

    bool operator==(const MergeTable& o) const { return merges == o.merges; }
};

std::vector<std::string> split_words(const std::string& sentence);

// Counts all adjacent symbol pairs inside words (weighted by word frequency)
// and merges the most frequent one until vocab_size symbols exist or no pair
// occurs at least twice. Ties go to the lexicographically smallest
// (left, right).
MergeTable train_bpe(const std::vector<std::string>& lines, std::size_t vocab_size);

// Tokens per word, with the end-of-word marker stripped.
std::vector<std::vector<std::string>> tokenize_words(const std::string& sentence, const MergeTable& table);
std::vector<std::string> tokenize(const std::string& sentence, const MergeTable& table);

// Merge file: "#version 1" header, then one "left right" pair per line.
void save_merges(const MergeTable& table, const std::string& path);
MergeTable load_merges(const std::string& path);
std::string format_merges(const MergeTable& table);
MergeTable parse_merges(const std::string& text);

// External segmentations: one line per corpus sentence holding space
// separated `word|seg1 seg2 ...` records, e.g. "i|i was|was cooking|cook ing".
// The words of line i must match the whitespace words of sentence i.
std::vector<std::vector<std::string>> parse_external_segments(const std::vector<std::string>& segment_lines,
                                                              const std::vector<std::string>& sentences);
std::vector<std::vector<std::string>> load_external_segments(const std::string& path,
                                                             const std::vector<std::string>& sentences);

// Closed label set observed in training targets plus OTHER for unseen tokens.
// Real labels are 0..S-1 (OTHER is S-1); EMPTY is S.
class LabelVocab {
public:
    static LabelVocab build(const std::vector<std::vector<std::string>>& token_lists);

    int id(const std::string& token) const;
    const std::string& label(int id) const;
    int other() const { return static_cast<int>(labels_.size()) - 1; }
    int empty() const { return static_cast<int>(labels_.size()); }
    // S, excluding EMPTY.
    std::size_t size() const { return labels_.size(); }

private:
    std::vector<std::string> labels_;
    std::map<std::string, int> index_;
};

inline constexpr const char* kOtherLabel = "<other>";
inline constexpr const char* kEmptyLabel = "<empty>";

// Target ids padded with EMPTY to K per sentence. Sentences with more than K
// tokens are dropped and counted.
struct ProbeTargets {
    std::vector<std::vector<int>> targets;
    std::vector<std::size_t> sentence_index;
    std::size_t skipped = 0;
};

ProbeTargets make_probe_targets(const std::vector<std::vector<std::string>>& token_lists, const LabelVocab& labels,
                                std::size_t num_slots);

}  // namespace slotmorph
