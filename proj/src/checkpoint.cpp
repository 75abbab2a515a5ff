#include "slotmorph/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace slotmorph {

namespace {

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    bool done() const { return pos_ == bytes_.size(); }

    const char* take(std::size_t n, const char* what)
    {
        if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32(const char* what)
    {
        const auto* p = reinterpret_cast<const unsigned char*>(take(4, what));
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const
{
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt)
{
    std::string out(Checkpoint::kMagic, sizeof Checkpoint::kMagic);
    put_u32(out, Checkpoint::kVersion);
    const std::string cfg = format_key_values(ckpt.config);
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    for (const auto& [name, t] : ckpt.tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        out.push_back(0);  // f32
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.dims()) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.vec()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes)
{
    Reader r(bytes);
    if (std::memcmp(r.take(sizeof Checkpoint::kMagic, "magic"), Checkpoint::kMagic, sizeof Checkpoint::kMagic) != 0)
        throw CheckpointError("not a checkpoint: bad magic");
    const auto version = r.u32("version");
    if (version != Checkpoint::kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(Checkpoint::kVersion) + ")");
    Checkpoint ckpt;
    const auto cfg_len = r.u32("config length");
    ckpt.config = parse_key_values(std::string(r.take(cfg_len, "config"), cfg_len));
    while (!r.done()) {
        const auto name_len = r.u32("tensor name length");
        std::string name(r.take(name_len, "tensor name"), name_len);
        const auto dtype = static_cast<unsigned char>(*r.take(1, "dtype"));
        if (dtype != 0) throw CheckpointError("tensor '" + name + "': unsupported dtype " + std::to_string(dtype));
        const auto rank = r.u32("rank");
        Shape dims;
        for (std::uint32_t i = 0; i < rank; ++i) dims.push_back(r.u32("dims"));
        Tensor<float> t(dims);
        for (auto& v : t.vec()) v = std::bit_cast<float>(r.u32("payload"));
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path)
{
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw CheckpointError("cannot write checkpoint " + path);
        const auto bytes = serialize_checkpoint(ckpt);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw CheckpointError("write failed for checkpoint " + path);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot read checkpoint " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace slotmorph
