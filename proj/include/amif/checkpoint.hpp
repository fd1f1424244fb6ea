#ifndef AMIF_CHECKPOINT_HPP
#define AMIF_CHECKPOINT_HPP

// Model checkpoint archive (all integers little-endian):
//   "AMIFCKPT"                           8 bytes
//   format version                       u16   (currently 1)
//   header length                        u32
//   header                               UTF-8 JSON (model configuration)
//   entry count                          u32
//   per entry, in module registration order:
//     name length u16 | dotted name | rank u8 | dims u32 x rank |
//     dtype u8 (0 = float32 LE) | data
//   CRC32 of all preceding bytes         u32
//
// The model fingerprint is the first 16 bytes of SHA-256 over the same bytes
// minus the trailing CRC, so a loaded checkpoint and the model that wrote it
// share one fingerprint.

#include <openssl/evp.h>
#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "amif/binary_io.hpp"
#include "amif/key_file.hpp"

namespace amif::checkpoint {

inline constexpr char kMagic[8] = {'A', 'M', 'I', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kVersion = 1;

inline std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& m) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : m.named_parameters(true)) out.emplace_back(p.key(), p.value());
    for (const auto& b : m.named_buffers(true)) out.emplace_back(b.key(), b.value());
    return out;
}

inline io::Bytes encode_body(const torch::nn::Module& m, const std::string& header) {
    io::Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u16(kVersion);
    w.u32(static_cast<std::uint32_t>(header.size()));
    w.str(header);
    auto state = named_state(m);
    w.u32(static_cast<std::uint32_t>(state.size()));
    for (const auto& [name, t] : state) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.str(name);
        w.u8(static_cast<std::uint8_t>(t.dim()));
        for (int64_t i = 0; i < t.dim(); ++i) w.u32(static_cast<std::uint32_t>(t.size(i)));
        w.u8(0);
        w.f32_tensor(t);
    }
    return w.take();
}

inline Fingerprint fingerprint_of(const io::Bytes& body) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(body.data(), body.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 failed");
    Fingerprint fp{};
    std::copy_n(md, fp.size(), fp.begin());
    return fp;
}

inline Fingerprint fingerprint(const torch::nn::Module& m, const std::string& header) {
    return fingerprint_of(encode_body(m, header));
}

inline void save(const std::filesystem::path& path, const torch::nn::Module& m, const std::string& header) {
    io::Writer w;
    auto body = encode_body(m, header);
    w.raw(body.data(), body.size());
    w.append_crc();
    io::write_file_atomic(path, w.bytes());
}

struct Archive {
    std::string header;
    std::vector<std::pair<std::string, torch::Tensor>> entries;
    Fingerprint fingerprint{};
};

inline Archive read(const std::filesystem::path& path) {
    auto bytes = io::read_file(path);
    const std::string ctx = "checkpoint " + path.string();
    if (bytes.size() < sizeof kMagic + 2 + 4 + 4 + 4) throw ValidationError(ctx + ": truncated");
    const auto body_len = bytes.size() - 4;
    io::Reader tail(bytes.data() + body_len, 4, ctx, ErrorKind::Validation);
    if (tail.u32() != io::crc32(bytes.data(), body_len)) throw ValidationError(ctx + ": checksum mismatch");

    io::Reader r(bytes.data(), body_len, ctx, ErrorKind::Validation);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw ValidationError(ctx + ": not a checkpoint");
    if (auto v = r.u16(); v != kVersion) throw ValidationError(ctx + ": unsupported version " + std::to_string(v));
    Archive a;
    a.header = r.str(r.u32());
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = r.str(r.u16());
        std::vector<int64_t> dims(r.u8());
        for (auto& d : dims) d = r.u32();
        if (r.u8() != 0) throw ValidationError(ctx + ": unsupported dtype for " + name);
        a.entries.emplace_back(std::move(name), r.f32_tensor(dims));
    }
    if (r.remaining() != 0) throw ValidationError(ctx + ": trailing bytes");
    a.fingerprint = fingerprint_of(io::Bytes(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(body_len)));
    return a;
}

// Copies archive tensors into the module's parameters/buffers. Names must
// match one-to-one.
inline void apply(const Archive& a, torch::nn::Module& m) {
    std::map<std::string, torch::Tensor> target;
    for (auto& [name, t] : named_state(m)) target.emplace(name, t);
    if (target.size() != a.entries.size())
        throw ValidationError("checkpoint: entry count " + std::to_string(a.entries.size()) +
                              " does not match model (" + std::to_string(target.size()) + ")");
    torch::NoGradGuard g;
    for (const auto& [name, t] : a.entries) {
        auto it = target.find(name);
        if (it == target.end()) throw ValidationError("checkpoint: unknown entry " + name);
        if (it->second.sizes() != t.sizes())
            throw DimensionError("checkpoint: " + name + " has shape " + shape_str(t) + ", model expects " +
                                 shape_str(it->second));
        it->second.copy_(t);
    }
}

}  // namespace amif::checkpoint

#endif
