#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace somnonet {

/// Malformed or truncated binary input. Carries the byte offset where decoding failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")")
        , offset_(offset)
    {
    }

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class MappingError : public std::invalid_argument {
public:
    MappingError(const std::string& what, int code, std::size_t index)
        : std::invalid_argument(what + ": code " + std::to_string(code) + " at index " +
                                std::to_string(index))
        , code_(code)
        , index_(index)
    {
    }

    int code() const noexcept { return code_; }
    std::size_t index() const noexcept { return index_; }

private:
    int code_;
    std::size_t index_;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace somnonet
