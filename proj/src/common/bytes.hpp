#pragma once

#include "somnonet/errors.hpp"

#include <bit>
#include <cstring>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

namespace somnonet::detail {

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::byte>& out) : out_(out) {}

    void bytes(const char* text, std::size_t n)
    {
        for (std::size_t i = 0; i < n; ++i) {
            out_.push_back(static_cast<std::byte>(text[i]));
        }
    }

    template <class U>
    void le(U value)
    {
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            out_.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xFFu));
        }
    }

    void f32(float value) { le(std::bit_cast<std::uint32_t>(value)); }

private:
    std::vector<std::byte>& out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::byte> in) : in_(in) {}

    std::size_t offset() const { return pos_; }

    void require(std::size_t n, const char* what) const
    {
        if (in_.size() - pos_ < n) {
            throw FormatError(std::string("truncated payload while reading ") + what, in_.size());
        }
    }

    template <class U>
    U le(const char* what)
    {
        require(sizeof(U), what);
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            value |= static_cast<U>(std::to_integer<std::uint8_t>(in_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return value;
    }

    float f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }

    std::byte byte(const char* what)
    {
        require(1, what);
        return in_[pos_++];
    }

private:
    std::span<const std::byte> in_;
    std::size_t pos_ = 0;
};

inline void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

inline std::vector<std::byte> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::byte> out(raw.size());
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

} // namespace somnonet::detail
