#ifndef AMIF_ERROR_HPP
#define AMIF_ERROR_HPP

#include <stdexcept>
#include <string>

namespace amif {

// Error categories. Each maps onto one CLI exit code (see exit_code()).
enum class ErrorKind {
    Dimension,        // tensor shape / axis violations
    Configuration,    // bad sizes, empty lists, invalid config values
    Validation,       // bad user input: labels, unknown kinds, missing files
    Numeric,          // non-finite values
    Authentication,   // key integrity failure (checksum, truncation, magic)
    KeyIncompatible,  // well-formed key that belongs to another model/shape
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorKind::Dimension, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Configuration, w) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error(ErrorKind::Numeric, w) {}
};
struct AuthenticationError : Error {
    explicit AuthenticationError(const std::string& w) : Error(ErrorKind::Authentication, w) {}
};
struct KeyIncompatibleError : Error {
    explicit KeyIncompatibleError(const std::string& w) : Error(ErrorKind::KeyIncompatible, w) {}
};

// 0 success; 1 validation; 2 authentication/key; 3 numeric failure.
inline int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Authentication:
        case ErrorKind::KeyIncompatible: return 2;
        case ErrorKind::Numeric: return 3;
        default: return 1;
    }
}

}  // namespace amif

#endif
