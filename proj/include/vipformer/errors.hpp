// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <stdexcept>
#include <string>

namespace vip {

// Base class for all library errors. Subclasses map onto the CLI exit
// codes: usage/parameter problems, data/format problems, numeric failures.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreement (dimension mismatch, empty axis, ...).
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Invalid argument value (G > N, eps <= 0, infeasible few-shot spec, ...).
struct ParamError : Error {
    explicit ParamError(const std::string& msg) : Error("parameter error: " + msg) {}
};

// API contract violation (backward on non-scalar, eval before BN stats, ...).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

// Problems in user-supplied data (bad labels, empty split, ...).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

// Malformed files; carries offset/line context in the message.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

// Non-finite values where finite ones are required (NaN gradient, diverged loss).
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

}  // namespace vip
