#ifndef AMIF_LOSSES_HPP
#define AMIF_LOSSES_HPP

// Training objectives.
//
//   fusion  = l_int + a1*l_grad + a2*l_decomp + a3*l_krecov
//   total   = fusion + a4*((l_wm + l_wmlow) + a5*(l_bce + l_dice))

#include <torch/torch.h>

#include <array>
#include <string_view>
#include <utility>

#include "amif/backbone.hpp"

namespace amif::loss {

struct LossWeights {
    double alpha1 = 10.0;
    double alpha2 = 2.0;
    double alpha3 = 100.0;
    double alpha4 = 0.1;
    double alpha5 = 0.1;
    double eps_decomp = 1.01;
    double eps_dice = 1e-6;

    void validate() const {
        for (double v : {alpha1, alpha2, alpha3, alpha4, alpha5, eps_decomp, eps_dice})
            if (!(v > 0.0)) throw ConfigError("LossWeights: all weights must be positive");
        if (!(eps_decomp > 1.0)) throw ConfigError("LossWeights: eps_decomp must exceed 1");
    }
};

struct LossBundle {
    torch::Tensor l_int, l_grad, l_decomp, l_krecov, l_bce, l_dice, l_wm, l_wmlow, total;

    static constexpr std::array<std::string_view, 9> kNames = {
        "l_int", "l_grad", "l_decomp", "l_krecov", "l_bce", "l_dice", "l_wm", "l_wmlow", "total"};

    std::array<torch::Tensor, 9> terms() const {
        return {l_int, l_grad, l_decomp, l_krecov, l_bce, l_dice, l_wm, l_wmlow, total};
    }
    std::array<double, 9> values() const {
        std::array<double, 9> out{};
        auto t = terms();
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i].defined() ? t[i].item<double>() : 0.0;
        return out;
    }
};

inline torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    require_same_shape(a, b, what);
    return (a - b).pow(2).mean();
}

inline torch::Tensor intensity_loss(const torch::Tensor& i_f, const torch::Tensor& i_a,
                                    const torch::Tensor& i_b) {
    require_same_shape(i_f, i_a, "intensity_loss");
    require_same_shape(i_f, i_b, "intensity_loss");
    return (i_f - torch::maximum(i_a, i_b)).abs().mean();
}

// Sobel magnitude with reflect padding, per channel. The sqrt is shifted so
// it is exactly 0 on flat regions while keeping a finite gradient there.
inline torch::Tensor sobel_magnitude(const torch::Tensor& x) {
    require_rank4(x, "sobel_magnitude");
    auto opts = x.options().requires_grad(false);
    auto gx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, opts).reshape({1, 1, 3, 3});
    auto gy = gx.transpose(2, 3).contiguous();
    const auto C = x.size(1);
    auto k = torch::cat({gx, gy}, 0).repeat({C, 1, 1, 1});  // (2C, 1, 3, 3)
    namespace F = torch::nn::functional;
    auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect));
    auto g = F::conv2d(padded, k, F::Conv2dFuncOptions().groups(C)).unflatten(1, {C, 2});
    constexpr double eps = 1e-12;
    return torch::sqrt(g.pow(2).sum(2) + eps) - std::sqrt(eps);
}

inline torch::Tensor gradient_loss(const torch::Tensor& i_f, const torch::Tensor& i_a,
                                   const torch::Tensor& i_b) {
    require_same_shape(i_f, i_a, "gradient_loss");
    require_same_shape(i_f, i_b, "gradient_loss");
    auto target = torch::maximum(sobel_magnitude(i_a), sobel_magnitude(i_b));
    return (sobel_magnitude(i_f) - target).abs().mean();
}

// Pearson correlation per batch item over all remaining elements. Items with
// zero variance in either input get CC = 0; their count is reported through
// `degenerate` when given.
inline torch::Tensor pearson_cc(const torch::Tensor& x, const torch::Tensor& y,
                                int64_t* degenerate = nullptr) {
    require_same_shape(x, y, "pearson_cc");
    auto xc = x.flatten(1);
    auto yc = y.flatten(1);
    xc = xc - xc.mean(1, true);
    yc = yc - yc.mean(1, true);
    auto denom = torch::sqrt(xc.pow(2).sum(1) * yc.pow(2).sum(1));
    auto ok = denom > 0;
    if (degenerate) *degenerate += (~ok).sum().item<int64_t>();
    auto safe = torch::where(ok, denom, torch::ones_like(denom));
    return torch::where(ok, (xc * yc).sum(1) / safe, torch::zeros_like(denom));
}

inline torch::Tensor decomposition_loss(const DecomposedFeatures& d, double eps = 1.01,
                                        int64_t* degenerate = nullptr) {
    auto cc_detail = pearson_cc(d.detail_a, d.detail_b, degenerate);
    auto cc_base = pearson_cc(d.base_a, d.base_b, degenerate);
    return (cc_detail.pow(2) / (cc_base + eps)).mean();
}

inline torch::Tensor key_recovery_loss(const torch::Tensor& recovered, const torch::Tensor& original) {
    return mse(recovered, original, "key_recovery_loss");
}

inline void require_binary_label(const torch::Tensor& label, const char* what) {
    if (!((label == 0) | (label == 1)).all().item<bool>())
        throw ValidationError(std::string(what) + ": label values must be 0 or 1");
}

// Mean BCE of sigmoid(logits) vs label in the log-sum-exp form
// max(x, 0) - x*y + log(1 + exp(-|x|)).
inline torch::Tensor watermark_bce(const torch::Tensor& logits, const torch::Tensor& label) {
    require_same_shape(logits, label, "watermark_bce");
    require_binary_label(label, "watermark_bce");
    return (torch::clamp_min(logits, 0.0) - logits * label + torch::log1p(torch::exp(-logits.abs()))).mean();
}

inline torch::Tensor watermark_dice(const torch::Tensor& logits, const torch::Tensor& label,
                                    double eps = 1e-6) {
    require_same_shape(logits, label, "watermark_dice");
    require_binary_label(label, "watermark_dice");
    auto p = torch::sigmoid(logits).flatten(1);
    auto y = label.flatten(1);
    auto dice = 2.0 * (p * y).sum(1) / (p.sum(1) + y.sum(1) + eps);
    return (1.0 - dice).mean();
}

inline torch::Tensor wm_pixel_loss(const torch::Tensor& i_wf, const torch::Tensor& i_a,
                                   const torch::Tensor& i_b, const torch::Tensor& i_wt) {
    require_same_shape(i_a, i_b, "wm_pixel_loss");
    require_same_shape(i_a, i_wt, "wm_pixel_loss");
    return mse(i_wf, (i_a + i_b + i_wt) / 3.0, "wm_pixel_loss");
}

inline torch::Tensor wm_lowfreq_loss(const torch::Tensor& f_wf_ll, const torch::Tensor& f_f_ll,
                                     const torch::Tensor& f_wmt_ll) {
    require_same_shape(f_f_ll, f_wmt_ll, "wm_lowfreq_loss");
    return mse(f_wf_ll, (f_f_ll + f_wmt_ll) * 0.5, "wm_lowfreq_loss");
}

inline torch::Tensor total_loss(const LossBundle& b, const LossWeights& w) {
    auto fusion = b.l_int + w.alpha1 * b.l_grad + w.alpha2 * b.l_decomp + w.alpha3 * b.l_krecov;
    return fusion + w.alpha4 * ((b.l_wm + b.l_wmlow) + w.alpha5 * (b.l_bce + b.l_dice));
}

}  // namespace amif::loss

#endif
