#pragma once

#include <stdexcept>
#include <string>

namespace fjdgd {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad graph construction (too few agents, disconnected input, ...) or a
// generator that exhausted its retry budget without producing a usable graph.
struct TopologyError : Error {
    using Error::Error;
};

// Shape or value mismatch between arguments (wrong vector length, label out
// of range, non-symmetric matrix where a symmetric one is required, ...).
struct ContractError : Error {
    using Error::Error;
};

// Malformed experiment config; message carries the 1-based line number.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed data file (IDX magic/record sizes, CSV rows, edge lists, ...).
struct DataError : Error {
    using Error::Error;
};

// Filesystem-level failure: missing file, unwritable output, refusing to
// clobber an existing run directory without --force.
struct IoError : Error {
    using Error::Error;
};

} // namespace fjdgd
