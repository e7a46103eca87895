#pragma once

#include <stdexcept>
#include <string>

namespace tmsm {

// Library errors split into two kinds so the CLI can map them onto exit
// codes: `invalid_input` -> usage/validation (2), `computation` -> runtime
// failure (1).
enum class ErrorKind { invalid_input, computation };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string msg)
        : std::runtime_error(std::move(msg)), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_input(const std::string& msg) {
    throw Error(ErrorKind::invalid_input, msg);
}

[[noreturn]] inline void fail_compute(const std::string& msg) {
    throw Error(ErrorKind::computation, msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail_input(msg);
}

}  // namespace tmsm
