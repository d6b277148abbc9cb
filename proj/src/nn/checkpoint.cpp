#include "somnonet/nn/checkpoint.hpp"

#include "common/bytes.hpp"
#include "somnonet/errors.hpp"

#include <cstring>
#include <limits>

namespace somnonet::nn {

using detail::ByteReader;
using detail::ByteWriter;

std::vector<std::byte> encode_snwt(const TensorMap& tensors)
{
    std::vector<std::byte> out;
    ByteWriter w(out);
    w.bytes("SNWT", 4);
    w.le<std::uint16_t>(kSnwtVersion);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw ValidationError("tensor name too long: " + name.substr(0, 40) + "...");
        }
        if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
            throw ValidationError("tensor " + name + " has too many dimensions");
        }
        if (numel(t.shape) != t.values.size()) {
            throw ValidationError("tensor " + name + " has " + std::to_string(t.values.size()) +
                                  " values for shape " + shape_string(t.shape));
        }
        w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.le<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
        for (std::size_t d : t.shape) {
            if (d > std::numeric_limits<std::uint32_t>::max()) {
                throw ValidationError("tensor " + name + " dimension exceeds u32");
            }
            w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
        }
        for (float v : t.values) {
            w.f32(v);
        }
    }
    return out;
}

TensorMap decode_snwt(std::span<const std::byte> bytes)
{
    ByteReader r(bytes);
    char magic[4];
    for (char& c : magic) {
        c = static_cast<char>(r.byte("magic"));
    }
    if (std::memcmp(magic, "SNWT", 4) != 0) {
        throw FormatError("bad magic, expected \"SNWT\"", 0);
    }
    const std::size_t version_offset = r.offset();
    const auto version = r.le<std::uint16_t>("version");
    if (version != kSnwtVersion) {
        throw FormatError("unsupported SNWT version " + std::to_string(version), version_offset);
    }
    const auto count = r.le<std::uint32_t>("tensor count");
    TensorMap out;
    std::string previous;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t name_offset = r.offset();
        const auto len = r.le<std::uint16_t>("name length");
        r.require(len, "name");
        std::string name(len, '\0');
        for (char& c : name) {
            c = static_cast<char>(r.byte("name"));
        }
        if (i > 0 && !(previous < name)) {
            throw FormatError("tensor names out of order or duplicated at \"" + name + "\"",
                              name_offset);
        }
        StoredTensor t;
        const auto rank = r.le<std::uint8_t>("rank");
        std::uint64_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const auto dim = r.le<std::uint32_t>("dims");
            t.shape.push_back(dim);
            n *= dim;
        }
        const std::size_t payload_offset = r.offset();
        if (n > (bytes.size() - payload_offset) / 4) {
            throw FormatError("truncated payload for tensor " + name, bytes.size());
        }
        t.values.resize(static_cast<std::size_t>(n));
        for (float& v : t.values) {
            v = r.f32("payload");
        }
        previous = name;
        out.emplace(std::move(name), std::move(t));
    }
    if (r.offset() != bytes.size()) {
        throw FormatError("unexpected trailing bytes", r.offset());
    }
    return out;
}

void write_snwt(const TensorMap& tensors, const std::filesystem::path& path)
{
    detail::write_file(path, encode_snwt(tensors));
}

TensorMap read_snwt(const std::filesystem::path& path)
{
    return decode_snwt(detail::read_file(path));
}

} // namespace somnonet::nn
