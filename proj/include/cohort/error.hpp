#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cohort {

// Structured pipeline error: a stable machine-readable code plus a free-form
// message (file/row/field context baked into the message where applicable).
// The CLI maps these to JSON error objects.
class Error : public std::runtime_error {
public:
    Error(std::string code, std::string message)
        : std::runtime_error(code + ": " + message),
          code_(std::move(code)),
          message_(std::move(message)) {}

    const std::string& code() const { return code_; }
    const std::string& message() const { return message_; }

private:
    std::string code_;
    std::string message_;
};

[[noreturn]] inline void fail(std::string code, std::string message) {
    throw Error(std::move(code), std::move(message));
}

} // namespace cohort
