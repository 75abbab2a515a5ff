#pragma once

#include <map>
#include <stdexcept>
#include <string>

namespace slotmorph {

// Flat string configuration. Text form: one `key = value` per line, `#`
// starts a comment, blank lines ignored.
using KeyValues = std::map<std::string, std::string>;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);
std::string format_key_values(const KeyValues& kv);

std::size_t kv_size(const KeyValues& kv, const std::string& key);
double kv_double(const KeyValues& kv, const std::string& key);
bool kv_bool(const KeyValues& kv, const std::string& key);
std::string kv_string(const KeyValues& kv, const std::string& key);

// Shortest round-trippable decimal form.
std::string format_double(double v);

}  // namespace slotmorph
