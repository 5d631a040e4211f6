#pragma once

#include <stdexcept>
#include <string>

namespace cosml {

// Bad experiment setup: unknown method names, invalid domain specs,
// unparseable config or results files. Maps to CLI exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace cosml
