#pragma once

// Little-endian byte buffers and atomic file replacement.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <system_error>

#include "types.hpp"

namespace bpae {

class IoError : public Error {
public:
    using Error::Error;
};

/// File carries a format version this build does not read.
class FormatVersionError : public Error {
public:
    using Error::Error;
};

/// Bad magic, truncated header or payload, or inconsistent sizes.
class CorruptFileError : public Error {
public:
    using Error::Error;
};

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(std::string_view s) { buf_.append(s); }
    void str(std::string_view s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

    [[nodiscard]] const std::string& data() const { return buf_; }

private:
    void put_le(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    std::string buf_;
};

/// Reads little-endian fields; throws E on running past the end.
template <class E>
class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    double f64() { return std::bit_cast<double>(get_le(8)); }
    std::string_view bytes(std::size_t n)
    {
        need(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::string str() { return std::string(bytes(u32())); }

    [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n) throw E("unexpected end of data");
    }
    std::uint64_t get_le(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return s;
}

/// Writes to a sibling temporary and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename to " + path.string() + " failed: " + ec.message());
}

} // namespace bpae
