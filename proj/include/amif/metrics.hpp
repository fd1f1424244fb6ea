#ifndef AMIF_METRICS_HPP
#define AMIF_METRICS_HPP

// Fused-image quality metrics. Inputs are single-channel images in [0, 1]
// given as (H, W), (1, H, W) or (1, 1, H, W) tensors; everything is computed
// in float64.

#include <torch/torch.h>

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "amif/tensor_utils.hpp"

namespace amif::metrics {

struct MetricReport {
    double sf = 0, mi = 0, vif = 0, qabf = 0, ssim = 0;
};

namespace detail {

inline torch::Tensor as_image(const torch::Tensor& x, const char* what) {
    auto t = x.detach().to(torch::kCPU, torch::kFloat64);
    while (t.dim() > 2 && t.size(0) == 1) t = t.squeeze(0);
    if (t.dim() != 2) throw DimensionError(std::string(what) + ": expected a single-channel image, got " + shape_str(x));
    return t.contiguous();
}

inline void same_size(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) throw DimensionError(std::string(what) + ": image size mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline torch::Tensor gaussian_window(int64_t n, double sigma) {
    auto r = torch::arange(n, torch::kFloat64) - (n - 1) / 2.0;
    auto g = torch::exp(-(r * r) / (2.0 * sigma * sigma));
    auto w = torch::outer(g, g);
    return (w / w.sum()).reshape({1, 1, n, n});
}

// 'valid' 2D filtering of an (H, W) image.
inline torch::Tensor filter_valid(const torch::Tensor& img, const torch::Tensor& win) {
    return torch::conv2d(img.unsqueeze(0).unsqueeze(0), win).squeeze(0).squeeze(0);
}

inline std::vector<int> quantize(const torch::Tensor& img) {
    auto q = torch::round(img.clamp(0.0, 1.0) * 255.0).to(torch::kInt32).contiguous();
    const auto* p = q.data_ptr<int>();
    return std::vector<int>(p, p + q.numel());
}

}  // namespace detail

// sqrt(RF^2 + CF^2) on 0..255 intensities, with RF/CF the RMS of horizontal
// and vertical first differences (mean over the differences taken).
inline double spatial_frequency(const torch::Tensor& img) {
    auto x = detail::as_image(img, "spatial_frequency") * 255.0;
    using torch::indexing::Slice;
    double rf2 = 0, cf2 = 0;
    if (x.size(1) > 1) rf2 = (x.index({Slice(), Slice(1)}) - x.index({Slice(), Slice(0, -1)})).pow(2).mean().item<double>();
    if (x.size(0) > 1) cf2 = (x.index({Slice(1), Slice()}) - x.index({Slice(0, -1), Slice()})).pow(2).mean().item<double>();
    return std::sqrt(rf2 + cf2);
}

// Shannon entropy (bits) of the 256-bin histogram of an 8-bit-quantized image.
inline double entropy_bits(const torch::Tensor& img) {
    auto q = detail::quantize(detail::as_image(img, "entropy"));
    std::array<double, 256> h{};
    for (int v : q) h[v] += 1.0;
    double e = 0;
    for (double c : h)
        if (c > 0) {
            const double p = c / static_cast<double>(q.size());
            e -= p * std::log2(p);
        }
    return e;
}

// MI (bits) between two images from their 256x256-bin joint histogram.
inline double mutual_information_pair(const torch::Tensor& x, const torch::Tensor& y) {
    auto a = detail::as_image(x, "mutual_information");
    auto b = detail::as_image(y, "mutual_information");
    detail::same_size(a, b, "mutual_information");
    auto qa = detail::quantize(a);
    auto qb = detail::quantize(b);
    std::vector<double> joint(256 * 256, 0.0);
    std::array<double, 256> ha{}, hb{};
    for (std::size_t i = 0; i < qa.size(); ++i) {
        joint[qa[i] * 256 + qb[i]] += 1.0;
        ha[qa[i]] += 1.0;
        hb[qb[i]] += 1.0;
    }
    const double n = static_cast<double>(qa.size());
    double mi = 0;
    for (int i = 0; i < 256; ++i)
        for (int j = 0; j < 256; ++j) {
            const double c = joint[i * 256 + j];
            if (c > 0) mi += (c / n) * std::log2(c * n / (ha[i] * hb[j]));
        }
    return std::max(mi, 0.0);
}

inline double mutual_information(const torch::Tensor& fused, const torch::Tensor& src_a, const torch::Tensor& src_b) {
    return mutual_information_pair(fused, src_a) + mutual_information_pair(fused, src_b);
}

// Pixel-domain multi-scale VIF of `dist` against reference `ref` (4 scales,
// sigma_n^2 = 2 on the 0..255 scale).
inline double vif_pair(const torch::Tensor& ref_img, const torch::Tensor& dist_img) {
    auto ref = detail::as_image(ref_img, "vif") * 255.0;
    auto dist = detail::as_image(dist_img, "vif") * 255.0;
    detail::same_size(ref, dist, "vif");
    if (ref.size(0) < 41 || ref.size(1) < 41) throw DimensionError("vif: images must be at least 41x41");

    constexpr double sigma_nsq = 2.0;
    constexpr double eps = 1e-10;
    double num = 0, den = 0;
    using torch::indexing::Slice;
    for (int scale = 1; scale <= 4; ++scale) {
        const int64_t n = (int64_t{1} << (4 - scale + 1)) + 1;
        auto win = detail::gaussian_window(n, static_cast<double>(n) / 5.0);
        if (scale > 1) {
            ref = detail::filter_valid(ref, win).index({Slice(0, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
            dist = detail::filter_valid(dist, win).index({Slice(0, torch::indexing::None, 2), Slice(0, torch::indexing::None, 2)});
        }
        auto mu1 = detail::filter_valid(ref, win);
        auto mu2 = detail::filter_valid(dist, win);
        auto s1 = (detail::filter_valid(ref * ref, win) - mu1 * mu1).clamp_min(0.0);
        auto s2 = (detail::filter_valid(dist * dist, win) - mu2 * mu2).clamp_min(0.0);
        auto s12 = detail::filter_valid(ref * dist, win) - mu1 * mu2;

        auto g = s12 / (s1 + eps);
        auto sv = s2 - g * s12;
        auto low1 = s1 < eps;
        g = torch::where(low1, torch::zeros_like(g), g);
        sv = torch::where(low1, s2, sv);
        s1 = torch::where(low1, torch::zeros_like(s1), s1);
        auto low2 = s2 < eps;
        g = torch::where(low2, torch::zeros_like(g), g);
        sv = torch::where(low2, torch::zeros_like(sv), sv);
        auto neg = g < 0;
        sv = torch::where(neg, s2, sv);
        g = torch::where(neg, torch::zeros_like(g), g);
        sv = sv.clamp_min(eps);

        num += torch::log10(1.0 + g * g * s1 / (sv + sigma_nsq)).sum().item<double>();
        den += torch::log10(1.0 + s1 / sigma_nsq).sum().item<double>();
    }
    return den > 0 ? num / den : 0.0;
}

inline double vif_fusion(const torch::Tensor& fused, const torch::Tensor& src_a, const torch::Tensor& src_b) {
    return 0.5 * (vif_pair(src_a, fused) + vif_pair(src_b, fused));
}

// Edge-transfer constants. The sigmoid normalisers are chosen so that perfect
// strength and orientation preservation score exactly 1; rounded to four
// digits their reciprocals are the customary 0.9994 and 0.9879.
struct QabfConstants {
    double kappa_g = -15.0, sigma_g = 0.5;
    double kappa_a = -22.0, sigma_a = 0.8;
    double gamma_g() const { return 1.0 / (1.0 + std::exp(kappa_g * (1.0 - sigma_g))); }
    double gamma_a() const { return 1.0 / (1.0 + std::exp(kappa_a * (1.0 - sigma_a))); }
};

namespace detail {

struct EdgeField {
    torch::Tensor strength, angle;
};

inline EdgeField sobel_edges(const torch::Tensor& img) {
    auto x = img.unsqueeze(0).unsqueeze(0);
    namespace F = torch::nn::functional;
    x = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect));
    auto kx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, torch::kFloat64).reshape({1, 1, 3, 3});
    auto ky = kx.transpose(2, 3).contiguous();
    auto sx = torch::conv2d(x, kx).squeeze(0).squeeze(0);
    auto sy = torch::conv2d(x, ky).squeeze(0).squeeze(0);
    auto strength = torch::sqrt(sx * sx + sy * sy);
    auto angle = torch::atan(sy / sx);  // +-pi/2 where sx == 0
    angle = torch::where(torch::isnan(angle), torch::zeros_like(angle), angle);
    return {strength, angle};
}

inline torch::Tensor edge_preservation(const EdgeField& src, const EdgeField& fused, const QabfConstants& k) {
    auto ga = src.strength, gf = fused.strength;
    auto ratio = torch::where(ga > gf, gf / ga, ga / gf);
    ratio = torch::where(ga == gf, torch::ones_like(ratio), ratio);
    auto orient = 1.0 - (src.angle - fused.angle).abs() / (std::numbers::pi / 2.0);
    auto qg = 1.0 / (k.gamma_g() * (1.0 + torch::exp(k.kappa_g * (ratio - k.sigma_g))));
    auto qa = 1.0 / (k.gamma_a() * (1.0 + torch::exp(k.kappa_a * (orient - k.sigma_a))));
    return qg * qa;
}

}  // namespace detail

inline double qabf(const torch::Tensor& fused, const torch::Tensor& src_a, const torch::Tensor& src_b,
                   const QabfConstants& k = {}) {
    auto f = detail::as_image(fused, "qabf");
    auto a = detail::as_image(src_a, "qabf");
    auto b = detail::as_image(src_b, "qabf");
    detail::same_size(f, a, "qabf");
    detail::same_size(f, b, "qabf");
    auto ef = detail::sobel_edges(f), ea = detail::sobel_edges(a), eb = detail::sobel_edges(b);
    auto qaf = detail::edge_preservation(ea, ef, k);
    auto qbf = detail::edge_preservation(eb, ef, k);
    const double denom = (ea.strength + eb.strength).sum().item<double>();
    if (denom <= 0) return 0.0;
    const double q = (qaf * ea.strength + qbf * eb.strength).sum().item<double>() / denom;
    return std::clamp(q, 0.0, 1.0);
}

// Gaussian-window SSIM (11x11, sigma 1.5, K1 = 0.01, K2 = 0.03, range 1).
inline double ssim(const torch::Tensor& x_img, const torch::Tensor& y_img) {
    auto x = detail::as_image(x_img, "ssim");
    auto y = detail::as_image(y_img, "ssim");
    detail::same_size(x, y, "ssim");
    if (x.size(0) < 11 || x.size(1) < 11) throw DimensionError("ssim: images must be at least 11x11");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    auto win = detail::gaussian_window(11, 1.5);
    auto mx = detail::filter_valid(x, win);
    auto my = detail::filter_valid(y, win);
    auto sxx = detail::filter_valid(x * x, win) - mx * mx;
    auto syy = detail::filter_valid(y * y, win) - my * my;
    auto sxy = detail::filter_valid(x * y, win) - mx * my;
    auto map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return map.mean().item<double>();
}

inline double ssim_fusion(const torch::Tensor& fused, const torch::Tensor& src_a, const torch::Tensor& src_b) {
    return 0.5 * (ssim(fused, src_a) + ssim(fused, src_b));
}

inline MetricReport evaluate(const torch::Tensor& fused, const torch::Tensor& src_a, const torch::Tensor& src_b) {
    return {spatial_frequency(fused), mutual_information(fused, src_a, src_b), vif_fusion(fused, src_a, src_b),
            qabf(fused, src_a, src_b), ssim_fusion(fused, src_a, src_b)};
}

}  // namespace amif::metrics

#endif
