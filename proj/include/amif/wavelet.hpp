#ifndef AMIF_WAVELET_HPP
#define AMIF_WAVELET_HPP

// Single-level orthonormal 2D Haar analysis/synthesis.
//
// For each 2x2 block [[a, b], [c, d]]:
//   ll = (a + b + c + d) / 2      lh = (a - b + c - d) / 2
//   hl = (a + b - c - d) / 2      hh = (a - b - c + d) / 2
// so [[1, 2], [3, 4]] maps to ll = 5, lh = -1, hl = -2, hh = 0.
//
// Packed layout: channel 4*c + k holds band k of source channel c, with
// k = 0..3 for (ll, lh, hl, hh). Key files store packed tensors, so this
// ordering is part of the on-disk contract.

#include <torch/torch.h>

#include "amif/tensor_utils.hpp"

namespace amif::wavelet {

struct Subbands {
    FeatureMap ll, lh, hl, hh;

    // (B, 4C, H/2, W/2)
    FeatureMap packed() const { return torch::stack({ll, lh, hl, hh}, 2).flatten(1, 2); }

    static Subbands unpack(const FeatureMap& packed) {
        require_rank4(packed, "wavelet::unpack");
        if (packed.size(1) % 4 != 0)
            throw DimensionError("wavelet::unpack: channel count " +
                                 std::to_string(packed.size(1)) + " is not a multiple of 4");
        auto v = packed.unflatten(1, {packed.size(1) / 4, 4});
        return {v.select(2, 0), v.select(2, 1), v.select(2, 2), v.select(2, 3)};
    }
};

inline Subbands dwt2(const FeatureMap& x) {
    require_rank4(x, "dwt2");
    if (x.size(2) % 2 != 0)
        throw DimensionError("dwt2: height " + std::to_string(x.size(2)) + " is odd");
    if (x.size(3) % 2 != 0)
        throw DimensionError("dwt2: width " + std::to_string(x.size(3)) + " is odd");

    using torch::indexing::Slice;
    auto a = x.index({Slice(), Slice(), Slice(0, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
    auto b = x.index({Slice(), Slice(), Slice(0, torch::indexing::None, 2), Slice(1, torch::indexing::None, 2)});
    auto c = x.index({Slice(), Slice(), Slice(1, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
    auto d = x.index({Slice(), Slice(), Slice(1, torch::indexing::None, 2), Slice(1, torch::indexing::None, 2)});
    return {(a + b + c + d) * 0.5, (a - b + c - d) * 0.5, (a + b - c - d) * 0.5,
            (a - b - c + d) * 0.5};
}

inline FeatureMap idwt2(const Subbands& s) {
    require_rank4(s.ll, "idwt2");
    require_same_shape(s.ll, s.lh, "idwt2 (ll vs lh)");
    require_same_shape(s.ll, s.hl, "idwt2 (ll vs hl)");
    require_same_shape(s.ll, s.hh, "idwt2 (ll vs hh)");

    auto a = (s.ll + s.lh + s.hl + s.hh) * 0.5;
    auto b = (s.ll - s.lh + s.hl - s.hh) * 0.5;
    auto c = (s.ll + s.lh - s.hl - s.hh) * 0.5;
    auto d = (s.ll - s.lh - s.hl + s.hh) * 0.5;
    // (B, C, h, w, 2, 2) -> (B, C, 2h, 2w)
    auto top = torch::stack({a, b}, -1);
    auto bottom = torch::stack({c, d}, -1);
    auto blocks = torch::stack({top, bottom}, -2);
    auto sizes = s.ll.sizes();
    return blocks.permute({0, 1, 2, 4, 3, 5}).reshape({sizes[0], sizes[1], sizes[2] * 2, sizes[3] * 2});
}

inline FeatureMap dwt2_packed(const FeatureMap& x) { return dwt2(x).packed(); }
inline FeatureMap idwt2_packed(const FeatureMap& p) { return idwt2(Subbands::unpack(p)); }

// LL band out of a packed tensor.
inline FeatureMap low_band(const FeatureMap& packed) { return Subbands::unpack(packed).ll; }

}  // namespace amif::wavelet

#endif
