#ifndef AMIF_BINARY_IO_HPP
#define AMIF_BINARY_IO_HPP

// Little-endian byte buffers, CRC32 and atomic file replacement shared by the
// key and checkpoint formats.

#include <torch/torch.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "amif/error.hpp"

namespace amif::io {

using Bytes = std::vector<std::uint8_t>;

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for large buffers.
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = ::crc32(c, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

class Writer {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void str(std::string_view s) { raw(s.data(), s.size()); }
    template <class T>
    void le(T v) {
        static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
        std::uint8_t b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        raw(b, sizeof(T));
    }
    void u8(std::uint8_t v) { le(v); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }

    // Contiguous float32 little-endian dump of a tensor.
    void f32_tensor(const torch::Tensor& t) {
        auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
        const auto* p = c.data_ptr<float>();
        if constexpr (std::endian::native == std::endian::little) {
            raw(p, static_cast<std::size_t>(c.numel()) * sizeof(float));
        } else {
            for (int64_t i = 0; i < c.numel(); ++i) le(p[i]);
        }
    }

    void append_crc() { u32(crc32(buf_.data(), buf_.size())); }

    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

// Reader over a byte span. Running past the end throws an Error of the given
// kind, so each format decides what truncation means.
class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t n, std::string context,
           ErrorKind on_truncation = ErrorKind::Authentication)
        : p_(data), end_(data + n), ctx_(std::move(context)), kind_(on_truncation) {}

    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

    void raw(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, p_, n);
        p_ += n;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }
    template <class T>
    T le() {
        std::uint8_t b[sizeof(T)];
        raw(b, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
    std::uint8_t u8() { return le<std::uint8_t>(); }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }

    torch::Tensor f32_tensor(const std::vector<int64_t>& dims) {
        auto t = torch::empty(dims, torch::kFloat32);
        const auto n = static_cast<std::size_t>(t.numel());
        need(n * sizeof(float));
        auto* out = t.data_ptr<float>();
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out, p_, n * sizeof(float));
            p_ += n * sizeof(float);
        } else {
            for (std::size_t i = 0; i < n; ++i) out[i] = le<float>();
        }
        return t;
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw Error(kind_, ctx_ + ": truncated data");
    }
    const std::uint8_t* p_;
    const std::uint8_t* end_;
    std::string ctx_;
    ErrorKind kind_;
};

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Write to a sibling temp file, then rename over the target.
inline void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw ValidationError("short write to " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, Bytes(text.begin(), text.end()));
}

}  // namespace amif::io

#endif
