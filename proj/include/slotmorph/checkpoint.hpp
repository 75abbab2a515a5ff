#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slotmorph/keyvalue.hpp"
#include "slotmorph/tensor.hpp"

namespace slotmorph {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Binary layout (little-endian):
//   "SLOTM1" | u32 version | u32 config length | config (key=value lines)
//   then until EOF, per tensor:
//   u32 name length | name | u8 dtype (0 = f32) | u32 rank | u32 dims[rank] | payload
struct Checkpoint {
    static constexpr char kMagic[6] = {'S', 'L', 'O', 'T', 'M', '1'};
    static constexpr std::uint32_t kVersion = 1;

    KeyValues config;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

// Writes through a temporary file and renames, so readers never observe a
// partially written checkpoint.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace slotmorph
