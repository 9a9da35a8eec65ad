// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ssom {

/// Coarse failure category. The CLI maps these onto process exit codes.
enum class ErrorKind {
    Usage,     // bad flags, config keys or values
    Contract,  // API misuse: shape mismatch, frozen-base violation, bad arguments
    Data,      // unreadable / malformed / inconsistent files
    Numeric,   // NaN or Inf produced at an op boundary
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error(ErrorKind::Contract, what) {}
};

class ShapeError : public ContractError {
public:
    explicit ShapeError(const std::string& what) : ContractError(what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

}  // namespace ssom
