#include "somnonet/data/ssef.hpp"

#include "somnonet/errors.hpp"
#include "common/bytes.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace somnonet::data {

using detail::ByteReader;
using detail::ByteWriter;

namespace {

std::vector<std::vector<RhythmSpan>> parse_annotations(const std::string& text,
                                                       std::size_t n_epochs)
{
    std::vector<std::vector<RhythmSpan>> out(n_epochs);
    std::size_t line_start = 0;
    while (line_start < text.size()) {
        std::size_t line_end = text.find('\n', line_start);
        if (line_end == std::string::npos) {
            line_end = text.size();
        }
        std::string_view line(text.data() + line_start, line_end - line_start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (!line.empty()) {
            std::uint64_t fields[3] = {0, 0, 0};
            std::size_t cursor = 0;
            for (int f = 0; f < 3; ++f) {
                const std::size_t comma = line.find(',', cursor);
                if (comma == std::string_view::npos) {
                    throw FormatError("annotation line has fewer than 4 fields",
                                      line_start + cursor);
                }
                const auto* first = line.data() + cursor;
                const auto* last = line.data() + comma;
                auto [ptr, ec] = std::from_chars(first, last, fields[f]);
                if (ec != std::errc() || ptr != last) {
                    throw FormatError("annotation field is not an unsigned integer",
                                      line_start + cursor);
                }
                cursor = comma + 1;
            }
            const std::string tag(line.substr(cursor));
            if (fields[0] >= n_epochs) {
                throw FormatError("annotation references epoch " + std::to_string(fields[0]) +
                                      " beyond the recording",
                                  line_start);
            }
            out[fields[0]].push_back(RhythmSpan{static_cast<std::uint32_t>(fields[1]),
                                                static_cast<std::uint32_t>(fields[2]), tag});
        }
        line_start = line_end + 1;
    }
    return out;
}

} // namespace

std::filesystem::path annotation_path(const std::filesystem::path& ssef_path)
{
    auto p = ssef_path;
    p.replace_extension(".ann");
    return p;
}

std::vector<std::byte> encode_ssef(const Recording& rec)
{
    validate(rec);
    const std::size_t per_epoch = rec.samples_per_epoch();
    std::vector<std::byte> out;
    out.reserve(kSsefHeaderBytes + rec.size() * (1 + per_epoch * 4));
    ByteWriter w(out);
    w.bytes("SSEF", 4);
    w.le<std::uint16_t>(kSsefVersion);
    w.le<std::uint32_t>(rec.sampling_rate_hz);
    w.le<std::uint16_t>(rec.epoch_len_s);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(rec.size()));
    for (int i = 0; i < 16; ++i) {
        w.le<std::uint8_t>(0);
    }
    for (auto label : rec.labels) {
        w.le<std::uint8_t>(static_cast<std::uint8_t>(label));
    }
    for (const auto& epoch : rec.epochs) {
        for (float v : epoch) {
            w.f32(v);
        }
    }
    return out;
}

Recording decode_ssef(std::span<const std::byte> bytes)
{
    ByteReader r(bytes);
    char magic[4];
    for (char& c : magic) {
        c = static_cast<char>(r.byte("magic"));
    }
    if (std::memcmp(magic, "SSEF", 4) != 0) {
        throw FormatError("bad magic, expected \"SSEF\"", 0);
    }
    const std::size_t version_offset = r.offset();
    const auto version = r.le<std::uint16_t>("version");
    if (version != kSsefVersion) {
        throw FormatError("unsupported SSEF version " + std::to_string(version), version_offset);
    }
    Recording rec;
    const std::size_t rate_offset = r.offset();
    rec.sampling_rate_hz = r.le<std::uint32_t>("sampling rate");
    if (rec.sampling_rate_hz == 0) {
        throw FormatError("sampling rate is zero", rate_offset);
    }
    const std::size_t len_offset = r.offset();
    rec.epoch_len_s = r.le<std::uint16_t>("epoch length");
    if (rec.epoch_len_s == 0) {
        throw FormatError("epoch length is zero", len_offset);
    }
    const auto n_epochs = r.le<std::uint32_t>("epoch count");
    for (int i = 0; i < 16; ++i) {
        const std::size_t at = r.offset();
        if (r.byte("reserved") != std::byte{0}) {
            throw FormatError("reserved header byte is not zero", at);
        }
    }

    const std::size_t per_epoch = rec.samples_per_epoch();
    const std::uint64_t payload = static_cast<std::uint64_t>(n_epochs) * (1 + per_epoch * 4);
    if (bytes.size() - r.offset() < payload) {
        throw FormatError("truncated payload: " + std::to_string(n_epochs) + " epochs need " +
                              std::to_string(payload) + " bytes after the header",
                          bytes.size());
    }

    rec.labels.reserve(n_epochs);
    for (std::uint32_t i = 0; i < n_epochs; ++i) {
        const std::size_t at = r.offset();
        const auto code = r.le<std::uint8_t>("label");
        const auto stage = stage_from_code(code);
        if (!stage) {
            throw FormatError("invalid stage code " + std::to_string(code), at);
        }
        rec.labels.push_back(*stage);
    }
    rec.epochs.assign(n_epochs, std::vector<float>(per_epoch));
    for (auto& epoch : rec.epochs) {
        for (float& v : epoch) {
            v = r.f32("samples");
        }
    }
    if (r.offset() != bytes.size()) {
        throw FormatError("unexpected trailing bytes", r.offset());
    }
    return rec;
}

void write_ssef(const Recording& rec, const std::filesystem::path& path)
{
    const auto bytes = encode_ssef(rec);
    detail::write_file(path, bytes);

    const auto ann = annotation_path(path);
    if (rec.rhythm_annotations.empty()) {
        std::error_code ec;
        std::filesystem::remove(ann, ec);
        return;
    }
    std::ofstream out(ann, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + ann.string() + " for writing");
    }
    for (std::size_t i = 0; i < rec.rhythm_annotations.size(); ++i) {
        for (const auto& span : rec.rhythm_annotations[i]) {
            out << i << ',' << span.start_sample << ',' << span.end_sample << ',' << span.tag
                << '\n';
        }
    }
    if (!out) {
        throw std::runtime_error("write failed for " + ann.string());
    }
}

Recording read_ssef(const std::filesystem::path& path)
{
    const auto raw = detail::read_file(path);
    Recording rec = decode_ssef(raw);

    const auto ann = annotation_path(path);
    if (std::filesystem::exists(ann)) {
        std::ifstream ain(ann);
        std::stringstream buffer;
        buffer << ain.rdbuf();
        rec.rhythm_annotations = parse_annotations(buffer.str(), rec.size());
        try {
            validate(rec);
        } catch (const ValidationError& e) {
            throw FormatError(std::string("annotation sidecar rejected: ") + e.what(), 0);
        }
    }
    return rec;
}

} // namespace somnonet::data
