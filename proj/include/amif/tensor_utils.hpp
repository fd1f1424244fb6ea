#ifndef AMIF_TENSOR_UTILS_HPP
#define AMIF_TENSOR_UTILS_HPP

#include <torch/torch.h>

#include <sstream>
#include <string>

#include "amif/error.hpp"

namespace amif {

// (batch, channel, height, width)
using FeatureMap = torch::Tensor;

inline std::string shape_str(const torch::Tensor& t) {
    std::ostringstream os;
    os << '(';
    for (int64_t i = 0; i < t.dim(); ++i) os << (i ? ", " : "") << t.size(i);
    os << ')';
    return os.str();
}

inline void require_rank4(const torch::Tensor& t, const char* what) {
    if (t.dim() != 4)
        throw DimensionError(std::string(what) + ": expected a 4-axis (B, C, H, W) tensor, got " +
                             shape_str(t));
}

inline void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes())
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
}

inline void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>())
        throw NumericError(std::string(what) + ": non-finite values");
}

inline void require_channels(const torch::Tensor& t, int64_t channels, const char* what) {
    require_rank4(t, what);
    if (t.size(1) != channels)
        throw DimensionError(std::string(what) + ": expected " + std::to_string(channels) +
                             " channels, got " + std::to_string(t.size(1)));
}

inline void require_spatial(const torch::Tensor& t, int64_t size, const char* what) {
    require_rank4(t, what);
    if (t.size(2) != size)
        throw DimensionError(std::string(what) + ": height is " + std::to_string(t.size(2)) +
                             ", expected " + std::to_string(size));
    if (t.size(3) != size)
        throw DimensionError(std::string(what) + ": width is " + std::to_string(t.size(3)) +
                             ", expected " + std::to_string(size));
}

}  // namespace amif

#endif
