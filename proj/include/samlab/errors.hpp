#pragma once

#include <stdexcept>

namespace samlab {

// Failure taxonomy shared across the library. The CLI maps these to exit
// codes (config 2, stage 3, io 4); precondition violations inside numeric
// code stay std::invalid_argument / std::out_of_range.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace samlab
