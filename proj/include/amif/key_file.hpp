#ifndef AMIF_KEY_FILE_HPP
#define AMIF_KEY_FILE_HPP

// Per-image authorization key.
//
// File layout (all integers little-endian):
//   "AMIFKEY1"                      8 bytes
//   format version                  u16   (currently 1)
//   checkpoint fingerprint          16 bytes
//   rank                            u8
//   dims                            u32 x rank
//   dtype code                      u8    (0 = float32 LE)
//   payload                         prod(dims) x 4 bytes, row-major
//   CRC32 of all preceding bytes    u32

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>

#include "amif/binary_io.hpp"
#include "amif/tensor_utils.hpp"

namespace amif {

using Fingerprint = std::array<std::uint8_t, 16>;

inline std::string to_hex(const Fingerprint& fp) {
    std::ostringstream os;
    for (auto b : fp) os << std::hex << std::setw(2) << std::setfill('0') << int(b);
    return os.str();
}

inline constexpr char kKeyMagic[8] = {'A', 'M', 'I', 'F', 'K', 'E', 'Y', '1'};
inline constexpr std::uint16_t kKeyVersion = 1;

struct KeyArtifact {
    FeatureMap payload;                // final watermark-side stream, wavelet-packed
    Fingerprint fingerprint{};         // checkpoint the key was issued by
    std::uint32_t checksum = 0;        // CRC32 over the encoded header + payload

    // Encoded bytes without the trailing CRC.
    io::Bytes body() const {
        io::Writer w;
        w.raw(kKeyMagic, sizeof kKeyMagic);
        w.u16(kKeyVersion);
        w.raw(fingerprint.data(), fingerprint.size());
        w.u8(static_cast<std::uint8_t>(payload.dim()));
        for (int64_t i = 0; i < payload.dim(); ++i) w.u32(static_cast<std::uint32_t>(payload.size(i)));
        w.u8(0);
        w.f32_tensor(payload);
        return w.take();
    }

    // Recomputes the checksum after payload/fingerprint changes.
    KeyArtifact& seal() {
        auto b = body();
        checksum = io::crc32(b.data(), b.size());
        return *this;
    }

    bool verify() const {
        auto b = body();
        return io::crc32(b.data(), b.size()) == checksum;
    }

    io::Bytes encode() const {
        auto b = body();
        io::Writer w;
        w.raw(b.data(), b.size());
        w.u32(io::crc32(b.data(), b.size()));
        return w.take();
    }

    // Integrity failures (short buffer, CRC, magic, inconsistent length) raise
    // AuthenticationError; a valid key in an unsupported version or dtype
    // raises KeyIncompatibleError.
    static KeyArtifact decode(const io::Bytes& bytes) {
        constexpr std::size_t kMinSize = 8 + 2 + 16 + 1 + 1 + 4;
        if (bytes.size() < kMinSize) throw AuthenticationError("key: truncated (" + std::to_string(bytes.size()) + " bytes)");
        const auto body_len = bytes.size() - 4;
        io::Reader tail(bytes.data() + body_len, 4, "key");
        const auto stored = tail.u32();
        const auto actual = io::crc32(bytes.data(), body_len);
        if (stored != actual) {
            std::ostringstream os;
            os << "key: checksum mismatch (stored " << std::hex << stored << ", computed " << actual << ")";
            throw AuthenticationError(os.str());
        }

        io::Reader r(bytes.data(), body_len, "key");
        char magic[8];
        r.raw(magic, 8);
        if (std::memcmp(magic, kKeyMagic, 8) != 0) throw AuthenticationError("key: bad magic");
        const auto version = r.u16();
        if (version != kKeyVersion)
            throw KeyIncompatibleError("key: unsupported format version " + std::to_string(version));
        KeyArtifact k;
        r.raw(k.fingerprint.data(), k.fingerprint.size());
        const auto rank = r.u8();
        std::vector<int64_t> dims(rank);
        for (auto& d : dims) d = r.u32();
        const auto dtype = r.u8();
        if (dtype != 0) throw KeyIncompatibleError("key: unsupported dtype code " + std::to_string(dtype));
        k.payload = r.f32_tensor(dims);
        if (r.remaining() != 0) throw AuthenticationError("key: trailing bytes after payload");
        k.checksum = stored;
        return k;
    }

    void save(const std::filesystem::path& path) const { io::write_file_atomic(path, encode()); }
    static KeyArtifact load(const std::filesystem::path& path) { return decode(io::read_file(path)); }
};

}  // namespace amif

#endif
