#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace opennas {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised by shape inference. `layer_index` is the offending layer.
class ShapeError : public Error {
public:
    enum class Kind { PoolUnderflow, OrderingViolation };

    ShapeError(Kind kind, std::size_t layer_index, const std::string& what)
        : Error(what), kind_(kind), layer_index_(layer_index) {}

    Kind kind() const noexcept { return kind_; }
    std::size_t layer_index() const noexcept { return layer_index_; }

private:
    Kind kind_;
    std::size_t layer_index_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t position, const std::string& what)
        : Error(what), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class EvaluatorFailure : public Error {
public:
    using Error::Error;
};

class UnknownDataset : public Error {
public:
    using Error::Error;
};

// Configuration problems: bad file, bad field, bad value.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace opennas
