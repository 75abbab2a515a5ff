#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace slotmorph {

struct ToyCorpusConfig {
    std::size_t sentences = 2000;
    std::size_t inventory = 30;
    std::size_t min_units = 3;
    std::size_t max_units = 6;
    std::size_t max_chars = 32;
    std::size_t min_unit_len = 2;
    std::size_t max_unit_len = 4;
    std::uint64_t seed = 0;
};

struct ToyCorpus {
    std::vector<std::string> units;
    std::vector<std::string> lines;
    // Unit indices per line.
    std::vector<std::vector<std::size_t>> composition;
};

// Synthetic sentences of space-separated units drawn from a fixed random
// inventory of distinct lowercase strings.
ToyCorpus make_toy_corpus(const ToyCorpusConfig& cfg);

}  // namespace slotmorph
