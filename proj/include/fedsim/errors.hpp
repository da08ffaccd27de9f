#ifndef FEDSIM_ERRORS_HPP
#define FEDSIM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fedsim {

// Dimension mismatches, empty inputs, out-of-range hyperparameters.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid or missing experiment configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dataset ingestion failures. `kind` distinguishes the IDX parse errors.
struct DataError : std::runtime_error {
    enum class Kind { io, bad_magic, truncated, count_mismatch, other };
    Kind kind;
    explicit DataError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Aggregator cannot run with the given (k, k_m) or hyperparameters.
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace fedsim

#endif
