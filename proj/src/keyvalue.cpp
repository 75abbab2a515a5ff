#include "slotmorph/keyvalue.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace slotmorph {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

const std::string& lookup(const KeyValues& kv, const std::string& key)
{
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

}  // namespace

KeyValues parse_key_values(const std::string& text)
{
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValues read_key_values(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_key_values(ss.str());
}

std::string format_key_values(const KeyValues& kv)
{
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

std::size_t kv_size(const KeyValues& kv, const std::string& key)
{
    const auto& s = lookup(kv, key);
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
    return v;
}

double kv_double(const KeyValues& kv, const std::string& key)
{
    const auto& s = lookup(kv, key);
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
    return v;
}

bool kv_bool(const KeyValues& kv, const std::string& key)
{
    const auto& s = lookup(kv, key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
}

std::string kv_string(const KeyValues& kv, const std::string& key)
{
    return lookup(kv, key);
}

std::string format_double(double v)
{
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace slotmorph
