#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace spd {

// Error taxonomy. The CLI maps these onto exit codes
// (usage -> 1, data/file -> 2, numeric -> 3).
struct error : std::runtime_error {
    explicit error(const std::string & msg) : std::runtime_error(msg) {}
};

struct shape_error : error {
    explicit shape_error(const std::string & msg) : error("shape: " + msg) {}
};

struct config_error : error {
    explicit config_error(const std::string & msg) : error("config: " + msg) {}
};

struct input_error : error {
    explicit input_error(const std::string & msg) : error("input: " + msg) {}
};

struct numeric_error : error {
    explicit numeric_error(const std::string & msg) : error("numeric: " + msg) {}
};

struct io_error : error {
    explicit io_error(const std::string & msg) : error("io: " + msg) {}
};

#define SPD_CHECK(cond, exc, msg)         \
    do {                                  \
        if (!(cond)) { throw exc(msg); }  \
    } while (0)

} // namespace spd
