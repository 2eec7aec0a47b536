#pragma once

#include <stdexcept>
#include <string>

namespace vodet {

struct InvalidClip : std::runtime_error {
    explicit InvalidClip(const std::string& m) : std::runtime_error(m) {}
};
struct InvalidConfig : std::runtime_error {
    explicit InvalidConfig(const std::string& m) : std::runtime_error(m) {}
};
struct InvalidBox : std::runtime_error {
    explicit InvalidBox(const std::string& m) : std::runtime_error(m) {}
};
struct InvalidInputShape : std::runtime_error {
    explicit InvalidInputShape(const std::string& m) : std::runtime_error(m) {}
};
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& m) : std::runtime_error(m) {}
};
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& m) : std::runtime_error(m) {}
};
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& m) : std::runtime_error(m) {}
};
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace vodet
