#pragma once

#include <cstdint>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sliceterp {

// Shape/argument violations surface as exceptions; the CLI maps them to
// exit codes (2 config, 3 checkpoint, 4 data).
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& msg, int line = -1, std::string field = "")
        : std::runtime_error(msg), line_(line), field_(std::move(field)) {}
    int line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    int line_;
    std::string field_;
};

class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// svol parse failures, kept distinct so tests can tell them apart.
class BadMagicError : public DataError {
public:
    explicit BadMagicError(const std::string& msg) : DataError(msg) {}
};
class TruncatedPayloadError : public DataError {
public:
    explicit TruncatedPayloadError(const std::string& msg) : DataError(msg) {}
};
class ExtentOverflowError : public DataError {
public:
    explicit ExtentOverflowError(const std::string& msg) : DataError(msg) {}
};

inline void warn(const std::string& msg) {
    std::cerr << "[warn] " << msg << "\n";
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

}  // namespace sliceterp
