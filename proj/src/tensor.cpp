#include "saltpepper/tensor.hpp"

#include "saltpepper/error.hpp"

namespace saltpepper {

std::string Tensor::shape_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        fail(Errc::shape_mismatch, std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
    }
}

} // namespace saltpepper
