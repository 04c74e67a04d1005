#pragma once

#include <stdexcept>
#include <string>

namespace saltpepper {

enum class Errc {
    invalid_range,
    timestep_out_of_range,
    shape_mismatch,
    wrong_scale,
    non_finite,
    even_kernel,
    negative_sigma,
    empty_stack,
    out_of_bounds,
    degenerate,
    parameterization_mismatch,
    backward_before_forward,
    rejection_exhausted,
    cannot_place,
    missing_file,
    malformed_line,
    landmark_count_mismatch,
    misalignment,
    io,
    config,
    checkpoint_mismatch,
};

const char* to_string(Errc code) noexcept;

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

    // I/O, config, and data-format problems are caused by user input; the rest
    // are contract violations inside the program.
    bool is_user_error() const noexcept;

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

} // namespace saltpepper
