#pragma once

#include "somnonet/errors.hpp"

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace somnonet::detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

template <class Int>
Int parse_int(std::string_view key, std::string_view text)
{
    text = trim(text);
    Int value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw ConfigError("bad integer for " + std::string(key) + ": \"" + std::string(text) +
                          "\"");
    }
    return value;
}

inline double parse_double(std::string_view key, std::string_view text)
{
    text = trim(text);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw ConfigError("bad number for " + std::string(key) + ": \"" + std::string(text) +
                          "\"");
    }
    return value;
}

inline bool parse_bool(std::string_view key, std::string_view text)
{
    text = trim(text);
    if (text == "1" || text == "true") {
        return true;
    }
    if (text == "0" || text == "false") {
        return false;
    }
    throw ConfigError("bad boolean for " + std::string(key) + ": \"" + std::string(text) + "\"");
}

inline std::vector<std::string_view> split(std::string_view text, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = text.find(sep, start);
        out.push_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

template <class Int>
std::vector<Int> parse_int_list(std::string_view key, std::string_view text)
{
    std::vector<Int> out;
    for (auto part : split(trim(text), ',')) {
        out.push_back(parse_int<Int>(key, part));
    }
    return out;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double value)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

/// Calls fn(key, value) for each non-empty, non-comment key=value line.
template <class Fn>
void for_each_setting(std::string_view text, Fn&& fn)
{
    for (auto line : split(text, '\n')) {
        line = trim(line);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("expected key=value, got \"" + std::string(line) + "\"");
        }
        fn(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

} // namespace somnonet::detail
