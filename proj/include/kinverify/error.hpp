#ifndef KINVERIFY_ERROR_HPP
#define KINVERIFY_ERROR_HPP

#include <stdexcept>
#include <string>

namespace kin {

/// Base class for all kinverify errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input data, bad configuration, shape mismatches. CLI exit code 1.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

/// Filesystem and stream failures. CLI exit code 2.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

} // namespace kin

#endif // KINVERIFY_ERROR_HPP
