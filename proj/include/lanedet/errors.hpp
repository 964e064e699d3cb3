#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lanedet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or extent mismatch. The message names the offending axis.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Caller violated an operation precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class DegenerateBalanceError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class SingularSystemError : public Error {
public:
    using Error::Error;
};

class HorizonError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ColdStartError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace lanedet
