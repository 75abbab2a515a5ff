#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slotmorph/keyvalue.hpp"
#include "slotmorph/model.hpp"
#include "slotmorph/probe.hpp"
#include "slotmorph/trainer.hpp"

namespace slotmorph {

enum class ValueKind { Size, Double, Bool, String, Choice };

struct ConfigKey {
    std::string key;   // e.g. "train.seed"
    std::string flag;  // long flag without dashes, e.g. "seed"
    ValueKind kind = ValueKind::String;
    std::string default_value;
    std::vector<std::string> choices;  // Choice only
    std::string help;

    // SLOTMORPH_ + flag, uppercased, '-' -> '_'.
    std::string env_name() const;
};

// Every accepted configuration key, in snapshot order.
const std::vector<ConfigKey>& config_schema();
const ConfigKey* find_config_key(const std::string& key);

// Resolved configuration. Layers apply in order default < file < env < flag.
class RunConfig {
public:
    RunConfig();

    // Validates the key against the schema and the value against its kind.
    void set(const std::string& key, const std::string& value);
    void merge(const KeyValues& kv);
    void merge_file(const std::string& path);
    // `getenv` returns the variable's value if set.
    void merge_env(const std::function<std::optional<std::string>(const std::string&)>& getenv);

    const std::string& get(const std::string& key) const;
    const KeyValues& values() const { return values_; }

    // Full `key = value` listing; feeding it back through merge_file
    // reproduces this configuration.
    std::string snapshot() const;

    ModelConfig model() const;  // vocab_size left at 0
    TrainSchedule schedule() const;
    ProbeConfig probe() const;
    std::size_t min_char_count() const;
    std::size_t bpe_vocab_size() const;

    // Cross-key checks (model and schedule validity).
    void validate() const;

private:
    KeyValues values_;
};

}  // namespace slotmorph
