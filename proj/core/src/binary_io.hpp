#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <iterator>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "latentlm/errors.hpp"

namespace latentlm::io {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }
    void patch_u32(std::size_t at, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    std::size_t size() const { return buf_.size(); }
    void append_crc() { u32(crc(buf_.data(), buf_.size())); }
    std::vector<std::uint8_t>& bytes() { return buf_; }

    static std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
        return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
    }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; every failure names the byte offset.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size, std::string what)
        : p_(data), n_(size), what_(std::move(what)) {}

    std::uint8_t u8() { return need(1), p_[pos_++]; }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
        pos_ += n;
        return s;
    }
    std::string str() { return raw(u32()); }
    void skip(std::size_t k) {
        need(k);
        pos_ += k;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return n_ - pos_; }
    [[noreturn]] void fail(const std::string& msg) const {
        throw FormatError(what_ + ": " + msg + " at offset " + std::to_string(pos_));
    }
    void need(std::size_t k) const {
        if (k > n_ - pos_) fail("truncated (needs " + std::to_string(k) + " more bytes)");
    }

private:
    std::uint64_t le(int k) {
        need(static_cast<std::size_t>(k));
        std::uint64_t v = 0;
        for (int i = 0; i < k; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(k);
        return v;
    }
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
    std::string what_;
};

/// Checks magic, then version, then the trailing CRC. Returns a reader over
/// the payload positioned after the version field.
inline ByteReader open_container(const std::vector<std::uint8_t>& bytes, std::string_view magic,
                                 std::uint32_t version, const std::string& what) {
    ByteReader r(bytes.data(), bytes.size(), what);
    if (r.raw(magic.size()) != magic) throw FormatError(what + ": bad magic at offset 0");
    const std::size_t vpos = r.pos();
    const auto v = r.u32();
    if (v != version) {
        throw VersionError(what + ": format version " + std::to_string(v) + " at offset " + std::to_string(vpos) +
                           " is not supported (expected " + std::to_string(version) +
                           "); re-export the file with this build");
    }
    if (bytes.size() < r.pos() + 4) throw FormatError(what + ": truncated before checksum at offset " +
                                                      std::to_string(bytes.size()));
    const std::size_t body = bytes.size() - 4;
    ByteReader tail(bytes.data() + body, 4, what);
    if (tail.u32() != ByteWriter::crc(bytes.data(), body)) {
        throw CorruptionError(what + ": checksum mismatch (checksum at offset " + std::to_string(body) + ")");
    }
    ByteReader payload(bytes.data(), body, what);
    payload.skip(r.pos());
    return payload;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    // Write to a sibling and rename so a crash never leaves a half file.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write '" + path + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FormatError("short write to '" + path + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError("cannot rename into '" + path + "'");
}

}  // namespace latentlm::io
