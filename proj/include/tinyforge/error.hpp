// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tinyforge {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent model, graph, dataset or stream.
class ModelError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or call arguments.
class UsageError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage was invoked before the artifact it consumes exists.
class PrerequisiteError : public Error {
public:
    using Error::Error;
};

} // namespace tinyforge
