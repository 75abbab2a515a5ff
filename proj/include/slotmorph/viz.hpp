#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotmorph/model.hpp"

namespace slotmorph {

// Decoder attention over slots: one row per output position, one column per
// slot. Values are row-major.
struct AttnMap {
    std::vector<std::string> row_labels;
    std::size_t cols = 0;
    std::vector<double> values;

    std::size_t rows() const { return row_labels.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline constexpr const char* kEosLabel = "<eos>";

// Teacher-forced eval-mode cross-attention for each sequence; rows are the
// sequence's characters followed by EOS.
std::vector<AttnMap> capture_maps(const ParamSet<float>& params, const ModelConfig& cfg, const CharVocab& vocab,
                                  const std::vector<CharSequence>& sequences, std::size_t batch_size = 64);

// Position-aligned mean; row t averages only the maps that reach t. Row
// labels are 1-based positions.
AttnMap average_maps(const std::vector<AttnMap>& maps);

// Header "char" then slot indices; values with 9 significant digits. Tabs,
// newlines and backslashes in labels are escaped.
void write_tsv(const AttnMap& map, std::ostream& os);
AttnMap read_tsv(std::istream& is);
void write_tsv(const AttnMap& map, const std::string& path);
AttnMap read_tsv(const std::string& path);

// Grayscale heatmap, one <rect class="cell"> per entry, darker = higher.
void write_svg(const AttnMap& map, std::ostream& os);
void write_svg(const AttnMap& map, const std::string& path);

// Mean Shannon entropy (nats) of the rows.
double mean_row_entropy(const std::vector<AttnMap>& maps);

// Fraction of adjacent character pairs (EOS row excluded) whose rows share
// the same argmax slot.
double contiguity_score(const std::vector<AttnMap>& maps);

}  // namespace slotmorph
