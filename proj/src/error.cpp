#include "saltpepper/error.hpp"

namespace saltpepper {

const char* to_string(Errc code) noexcept {
    switch (code) {
    case Errc::invalid_range: return "invalid-range";
    case Errc::timestep_out_of_range: return "timestep-out-of-range";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::wrong_scale: return "wrong-scale-tag";
    case Errc::non_finite: return "non-finite";
    case Errc::even_kernel: return "even-kernel-size";
    case Errc::negative_sigma: return "negative-sigma";
    case Errc::empty_stack: return "empty-stack";
    case Errc::out_of_bounds: return "out-of-bounds";
    case Errc::degenerate: return "degenerate";
    case Errc::parameterization_mismatch: return "parameterization-mismatch";
    case Errc::backward_before_forward: return "backward-before-forward";
    case Errc::rejection_exhausted: return "rejection-exhausted";
    case Errc::cannot_place: return "cannot-place";
    case Errc::missing_file: return "missing-file";
    case Errc::malformed_line: return "malformed-line";
    case Errc::landmark_count_mismatch: return "landmark-count-mismatch";
    case Errc::misalignment: return "misalignment";
    case Errc::io: return "io";
    case Errc::config: return "config";
    case Errc::checkpoint_mismatch: return "checkpoint-mismatch";
    }
    return "unknown";
}

bool Error::is_user_error() const noexcept {
    switch (code_) {
    case Errc::missing_file:
    case Errc::malformed_line:
    case Errc::landmark_count_mismatch:
    case Errc::misalignment:
    case Errc::io:
    case Errc::config:
    case Errc::checkpoint_mismatch:
    case Errc::invalid_range:
    case Errc::out_of_bounds:
    case Errc::rejection_exhausted:
    case Errc::cannot_place:
        return true;
    default:
        return false;
    }
}

} // namespace saltpepper
