#ifndef CHARBENCH_ERROR_HPP
#define CHARBENCH_ERROR_HPP

#include <sstream>
#include <stdexcept>
#include <string>

namespace charbench {

/// Tensor shape or dimension inconsistency (messages name the offending dims).
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid argument value (fractions out of range, bad hyperparameters, ...).
class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem / decode / serialization failure.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Builds a message from stream-formattable pieces.
template <class... Ts>
std::string cat(Ts&&... ts) {
    std::ostringstream os;
    (os << ... << ts);
    return os.str();
}

} // namespace charbench

#endif
