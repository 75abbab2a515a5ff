#include "slotmorph/toy.hpp"

#include <set>
#include <stdexcept>

#include "slotmorph/rng.hpp"

namespace slotmorph {

ToyCorpus make_toy_corpus(const ToyCorpusConfig& cfg)
{
    if (cfg.inventory == 0 || cfg.min_units == 0 || cfg.min_units > cfg.max_units ||
        cfg.min_unit_len == 0 || cfg.min_unit_len > cfg.max_unit_len)
        throw std::invalid_argument("toy corpus: invalid configuration");
    if (cfg.min_units * (cfg.min_unit_len + 1) - 1 > cfg.max_chars)
        throw std::invalid_argument("toy corpus: max_chars too small for min_units");

    Rng rng(cfg.seed);
    static constexpr char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
    ToyCorpus out;
    std::set<std::string> seen;
    while (out.units.size() < cfg.inventory) {
        const auto len = cfg.min_unit_len + rng.below(cfg.max_unit_len - cfg.min_unit_len + 1);
        std::string u;
        for (std::size_t i = 0; i < len; ++i) u += kLetters[rng.below(26)];
        if (seen.insert(u).second) out.units.push_back(u);
    }
    while (out.lines.size() < cfg.sentences) {
        const auto n = cfg.min_units + rng.below(cfg.max_units - cfg.min_units + 1);
        std::vector<std::size_t> parts;
        std::string line;
        for (std::size_t i = 0; i < n; ++i) {
            parts.push_back(rng.below(cfg.inventory));
            if (i) line += ' ';
            line += out.units[parts.back()];
        }
        if (line.size() > cfg.max_chars) continue;
        out.lines.push_back(std::move(line));
        out.composition.push_back(std::move(parts));
    }
    return out;
}

}  // namespace slotmorph
