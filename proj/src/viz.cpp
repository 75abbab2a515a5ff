#include "slotmorph/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace slotmorph {

namespace {

std::string escape_label(const std::string& s)
{
    std::string out;
    for (char c : s) {
        if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else if (c == '\\') out += "\\\\";
        else out += c;
    }
    return out;
}

std::string unescape_label(const std::string& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            const char n = s[++i];
            out += n == 't' ? '\t' : n == 'n' ? '\n' : n;
        } else {
            out += s[i];
        }
    }
    return out;
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::size_t argmax_row(const AttnMap& m, std::size_t r)
{
    const auto* row = m.values.data() + r * m.cols;
    return static_cast<std::size_t>(std::max_element(row, row + m.cols) - row);
}

}  // namespace

std::vector<AttnMap> capture_maps(const ParamSet<float>& params, const ModelConfig& cfg, const CharVocab& vocab,
                                  const std::vector<CharSequence>& sequences, std::size_t batch_size)
{
    std::vector<AttnMap> maps(sequences.size());
    const std::size_t k = cfg.num_slots;
    for (const auto& batch : make_batches(sequences, batch_size, std::nullopt)) {
        Graph<float> g;
        Binding<float> p(g, params, false);
        auto fw = forward(p, cfg, batch, Mode::Eval, nullptr, 0.0);
        const auto& attn = fw.decoded.cross_attn.value();
        for (std::size_t b = 0; b < batch.size; ++b) {
            auto& m = maps[batch.indices[b]];
            m.cols = k;
            const auto rows = batch.lengths[b] + 1;
            for (std::size_t t = 0; t < rows; ++t) {
                const int id = batch.token(b, t);
                m.row_labels.push_back(id == CharVocab::kEos ? kEosLabel : utf8::encode(vocab.symbol(id)));
                for (std::size_t j = 0; j < k; ++j)
                    m.values.push_back(static_cast<double>(attn[(b * batch.width + t) * k + j]));
            }
        }
    }
    return maps;
}

AttnMap average_maps(const std::vector<AttnMap>& maps)
{
    if (maps.empty()) throw std::invalid_argument("average_maps: no maps to average");
    const std::size_t cols = maps.front().cols;
    std::size_t rows = 0;
    for (const auto& m : maps) {
        if (m.cols != cols) throw ShapeError("average_maps: maps have different slot counts");
        rows = std::max(rows, m.rows());
    }
    AttnMap out;
    out.cols = cols;
    out.values.assign(rows * cols, 0.0);
    std::vector<std::size_t> count(rows, 0);
    for (const auto& m : maps) {
        for (std::size_t r = 0; r < m.rows(); ++r) {
            ++count[r];
            for (std::size_t c = 0; c < cols; ++c) out.values[r * cols + c] += m.at(r, c);
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        out.row_labels.push_back(std::to_string(r + 1));
        for (std::size_t c = 0; c < cols; ++c) out.values[r * cols + c] /= static_cast<double>(count[r]);
    }
    return out;
}

void write_tsv(const AttnMap& map, std::ostream& os)
{
    os << "char";
    for (std::size_t c = 0; c < map.cols; ++c) os << '\t' << c;
    os << '\n';
    char buf[32];
    for (std::size_t r = 0; r < map.rows(); ++r) {
        os << escape_label(map.row_labels[r]);
        for (std::size_t c = 0; c < map.cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.9g", map.at(r, c));
            os << '\t' << buf;
        }
        os << '\n';
    }
}

AttnMap read_tsv(std::istream& is)
{
    auto split = [](const std::string& line) {
        std::vector<std::string> f;
        std::size_t pos = 0;
        for (;;) {
            auto next = line.find('\t', pos);
            f.push_back(line.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        return f;
    };
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("attention tsv: missing header");
    const auto header = split(line);
    if (header.empty() || header[0] != "char") throw std::runtime_error("attention tsv: bad header");
    AttnMap m;
    m.cols = header.size() - 1;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        const auto f = split(line);
        if (f.size() != m.cols + 1)
            throw std::runtime_error("attention tsv line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(m.cols + 1) + " fields");
        m.row_labels.push_back(unescape_label(f[0]));
        for (std::size_t c = 1; c < f.size(); ++c) m.values.push_back(std::stod(f[c]));
    }
    return m;
}

void write_tsv(const AttnMap& map, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    write_tsv(map, os);
    if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

AttnMap read_tsv(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    return read_tsv(is);
}

void write_svg(const AttnMap& map, std::ostream& os)
{
    constexpr int cell = 14, left = 48, top = 20;
    const auto w = left + static_cast<int>(map.cols) * cell + 4;
    const auto h = top + static_cast<int>(map.rows()) * cell + 4;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-size=\"10\""
       << " font-family=\"monospace\">\n";
    for (std::size_t c = 0; c < map.cols; ++c)
        os << "<text x=\"" << left + static_cast<int>(c) * cell + cell / 2 << "\" y=\"" << top - 6
           << "\" text-anchor=\"middle\">" << c << "</text>\n";
    for (std::size_t r = 0; r < map.rows(); ++r) {
        const int y = top + static_cast<int>(r) * cell;
        os << "<text x=\"" << left - 4 << "\" y=\"" << y + cell - 3 << "\" text-anchor=\"end\">"
           << xml_escape(map.row_labels[r]) << "</text>\n";
        for (std::size_t c = 0; c < map.cols; ++c) {
            const double v = std::clamp(map.at(r, c), 0.0, 1.0);
            const int level = static_cast<int>(std::lround(255.0 * (1.0 - v)));
            os << "<rect class=\"cell\" x=\"" << left + static_cast<int>(c) * cell << "\" y=\"" << y
               << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << level << ',' << level << ','
               << level << ")\"/>\n";
        }
    }
    os << "</svg>\n";
}

void write_svg(const AttnMap& map, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    write_svg(map, os);
    if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

double mean_row_entropy(const std::vector<AttnMap>& maps)
{
    double sum = 0.0;
    std::size_t rows = 0;
    for (const auto& m : maps) {
        for (std::size_t r = 0; r < m.rows(); ++r) {
            double h = 0.0;
            for (std::size_t c = 0; c < m.cols; ++c) {
                const double p = m.at(r, c);
                if (p > 0) h -= p * std::log(p);
            }
            sum += h;
            ++rows;
        }
    }
    return rows ? sum / static_cast<double>(rows) : 0.0;
}

double contiguity_score(const std::vector<AttnMap>& maps)
{
    std::size_t same = 0, pairs = 0;
    for (const auto& m : maps) {
        if (m.rows() < 3) continue;
        const auto chars = m.rows() - 1;
        for (std::size_t r = 0; r + 1 < chars; ++r) {
            same += argmax_row(m, r) == argmax_row(m, r + 1);
            ++pairs;
        }
    }
    return pairs ? static_cast<double>(same) / static_cast<double>(pairs) : 0.0;
}

}  // namespace slotmorph
