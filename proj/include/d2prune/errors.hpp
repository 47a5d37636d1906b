#pragma once

#include <stdexcept>
#include <string>

namespace d2p {

/// Base for every error the toolkit reports. Callers that only need a message
/// can catch this; the subclasses exist so tests and the CLI can tell failure
/// classes apart.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Caller-supplied data violates a precondition (token ids, lengths, ...).
class InputError : public Error {
public:
    using Error::Error;
};

/// Missing or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A pivot or diagonal that must be positive was not.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Damped Hessian still not positive-definite.
class SingularHessianError : public NumericalError {
public:
    SingularHessianError(const std::string& layer, const std::string& detail)
        : NumericalError("singular Hessian in layer '" + layer + "': " + detail), layer_(layer) {}

    const std::string& layer() const noexcept { return layer_; }

private:
    std::string layer_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// D2PW container decode failure.
class FormatError : public Error {
public:
    enum class Kind { BadMagic, VersionMismatch, TruncatedTensor, Inconsistent };

    FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace d2p
