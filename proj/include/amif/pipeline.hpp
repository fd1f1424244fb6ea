#ifndef AMIF_PIPELINE_HPP
#define AMIF_PIPELINE_HPP

// End-to-end model.
//
// Unauthorized path:
//   shared + private encode -> fuse -> watermark feature (CCWM)
//   -> dwt2 both streams -> coupling stack -> idwt2 content -> decode = I_wf
//   and the final watermark stream becomes the key.
// Authorized path:
//   shared-encode I_wf -> dwt2 -> inverse coupling with the key -> idwt2
//   -> decode = I_f; the recovered watermark stream goes through a 1x1 head
//   to watermark logits.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "amif/ccwm.hpp"
#include "amif/checkpoint.hpp"
#include "amif/csamic.hpp"
#include "amif/fusion.hpp"
#include "amif/wavelet.hpp"

namespace amif {

struct ModelConfig {
    EncoderConfig encoder;
    int64_t coupling_blocks = 4;
    CouplingOptions coupling;
    DenseBlockOptions fusion_dense;
    CcwmOptions ccwm;
    double wm_head_gain = 1.0;

    void validate() const {
        encoder.validate();
        if (coupling_blocks < 1 || coupling_blocks > CopyrightProtectionImpl::kMaxBlocks)
            throw ConfigError("ModelConfig: coupling_blocks must lie in [1, 8]");
        if (ccwm.heads < 1 || encoder.feat_dim % ccwm.heads != 0)
            throw ConfigError("ModelConfig: ccwm.heads must divide feat_dim");
        if (!(ccwm.position_gain > 0) || !(wm_head_gain > 0))
            throw ConfigError("ModelConfig: watermark gains must be positive");
    }

    // Small model used for desk-scale training and tests.
    static ModelConfig desk(int64_t image_size = 64) {
        ModelConfig c;
        c.encoder = {1, 2, 16, image_size};
        c.coupling_blocks = 2;
        c.coupling.dense = {16, 2, 0.2, 0.1};
        c.fusion_dense = {16, 2, 0.2, 1.0};
        c.ccwm = {32, 16, 16, 1};
        // A short run from scratch: let the watermark layout and its readout
        // move ten times faster than the rest of the network.
        c.ccwm.position_gain = 10.0;
        c.wm_head_gain = 10.0;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const DenseBlockOptions& o) {
    j = {{"growth", o.growth}, {"layers", o.layers}, {"slope", o.slope}, {"out_init_scale", o.out_init_scale}};
}
inline void from_json(const nlohmann::json& j, DenseBlockOptions& o) {
    o.growth = j.value("growth", o.growth);
    o.layers = j.value("layers", o.layers);
    o.slope = j.value("slope", o.slope);
    o.out_init_scale = j.value("out_init_scale", o.out_init_scale);
}
inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"encoder",
          {{"num_blocks", c.encoder.num_blocks},
           {"num_heads", c.encoder.num_heads},
           {"feat_dim", c.encoder.feat_dim},
           {"image_size", c.encoder.image_size}}},
         {"coupling_blocks", c.coupling_blocks},
         {"coupling",
          {{"alpha_scale", c.coupling.alpha_scale},
           {"se_reduction", c.coupling.se_reduction},
           {"dense", c.coupling.dense},
           {"phi_init_scale", c.coupling.phi_init_scale},
           {"eta_bias_init", c.coupling.eta_bias_init},
           {"varphi_bias_init", c.coupling.varphi_bias_init}}},
         {"fusion_dense", c.fusion_dense},
         {"ccwm",
          {{"memory_size", c.ccwm.memory_size},
           {"stem_channels", c.ccwm.stem_channels},
           {"token_grid", c.ccwm.token_grid},
           {"heads", c.ccwm.heads},
           {"position_gain", c.ccwm.position_gain}}},
         {"wm_head_gain", c.wm_head_gain}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        c.encoder.num_blocks = e.value("num_blocks", c.encoder.num_blocks);
        c.encoder.num_heads = e.value("num_heads", c.encoder.num_heads);
        c.encoder.feat_dim = e.value("feat_dim", c.encoder.feat_dim);
        c.encoder.image_size = e.value("image_size", c.encoder.image_size);
    }
    c.coupling_blocks = j.value("coupling_blocks", c.coupling_blocks);
    if (j.contains("coupling")) {
        const auto& k = j.at("coupling");
        c.coupling.alpha_scale = k.value("alpha_scale", c.coupling.alpha_scale);
        c.coupling.se_reduction = k.value("se_reduction", c.coupling.se_reduction);
        if (k.contains("dense")) k.at("dense").get_to(c.coupling.dense);
        c.coupling.phi_init_scale = k.value("phi_init_scale", c.coupling.phi_init_scale);
        c.coupling.eta_bias_init = k.value("eta_bias_init", c.coupling.eta_bias_init);
        c.coupling.varphi_bias_init = k.value("varphi_bias_init", c.coupling.varphi_bias_init);
    }
    if (j.contains("fusion_dense")) j.at("fusion_dense").get_to(c.fusion_dense);
    if (j.contains("ccwm")) {
        const auto& w = j.at("ccwm");
        c.ccwm.memory_size = w.value("memory_size", c.ccwm.memory_size);
        c.ccwm.stem_channels = w.value("stem_channels", c.ccwm.stem_channels);
        c.ccwm.token_grid = w.value("token_grid", c.ccwm.token_grid);
        c.ccwm.heads = w.value("heads", c.ccwm.heads);
        c.ccwm.position_gain = w.value("position_gain", c.ccwm.position_gain);
    }
    c.wm_head_gain = j.value("wm_head_gain", c.wm_head_gain);
}

struct UnauthorizedPass {
    DecomposedFeatures decomposed;
    FeatureMap fused;            // F_f, spatial
    FeatureMap watermark;        // F_W^0, spatial
    FeatureMap fused_packed;     // dwt2(F_f)
    FeatureMap protected_packed; // content stream after the coupling stack
    FeatureMap key_stream;       // watermark stream after the coupling stack
    torch::Tensor watermarked;   // I_wf
};

struct AuthorizedPass {
    FeatureMap reencoded_packed;
    FeatureMap recovered_fused;      // spatial, comparable with UnauthorizedPass::fused
    FeatureMap recovered_watermark;  // spatial
    torch::Tensor clean;             // I_f
    torch::Tensor watermark_logits;  // I_pwm
};

struct FusionOutput {
    torch::Tensor watermarked_image;
    std::vector<KeyArtifact> keys;  // one per batch item
};

struct RecoveryOutput {
    torch::Tensor clean_image;
    torch::Tensor watermark_logits;
};

// Maps the recovered watermark stream to per-pixel label logits. Each channel
// is standardised over the image first, so the projection sees unit-scale
// inputs whatever magnitude the watermark stream settles at. The projection is
// stored divided by `gain` (same initial output), which scales how fast the
// logits can move under Adam.
struct WatermarkHeadImpl : nn::Module {
    explicit WatermarkHeadImpl(int64_t dim, double gain = 1.0) : gain(gain) {
        if (!(gain > 0)) throw ConfigError("watermark head: gain must be positive");
        project = register_module("project", conv1x1(dim, 1));
        torch::NoGradGuard g;
        project->weight.div_(gain);
        project->bias.div_(gain);
    }
    torch::Tensor forward(const FeatureMap& w) {
        namespace F = torch::nn::functional;
        return gain * project(F::instance_norm(w, F::InstanceNormFuncOptions().eps(1e-5)));
    }
    double gain;
    nn::Conv2d project{nullptr};
};
TORCH_MODULE(WatermarkHead);

struct AmifModelImpl : nn::Module {
    explicit AmifModelImpl(const ModelConfig& cfg) : cfg(cfg) {
        cfg.validate();
        const auto C = cfg.encoder.feat_dim;
        shared = register_module("shared", SharedEncoder(cfg.encoder));
        private_a = register_module("private_a", PrivateEncoder(cfg.encoder));
        private_b = register_module("private_b", PrivateEncoder(cfg.encoder));
        fusion = register_module("fusion", FusionModule(C, cfg.fusion_dense));
        ccwm = register_module("ccwm", WatermarkMemory(C, cfg.ccwm));
        protection = register_module("protection", CopyrightProtection(4 * C, cfg.coupling_blocks, cfg.coupling));
        decoder = register_module("decoder", Decoder(cfg.encoder));
        wm_head = register_module("wm_head", WatermarkHead(C, cfg.wm_head_gain));
    }

    std::string header() const { return nlohmann::json(cfg).dump(); }
    Fingerprint fingerprint() const { return checkpoint::fingerprint(*this, header()); }

    void check_pair(const torch::Tensor& a, const torch::Tensor& b) const {
        require_channels(a, 1, "modality A");
        require_channels(b, 1, "modality B");
        require_same_shape(a, b, "image pair");
        require_spatial(a, cfg.encoder.image_size, "image pair");
    }

    DecomposedFeatures decompose(const torch::Tensor& a, const torch::Tensor& b) {
        check_pair(a, b);
        return {shared(a), shared(b), private_a(a), private_b(b)};
    }

    UnauthorizedPass unauthorized(const torch::Tensor& a, const torch::Tensor& b) {
        UnauthorizedPass p;
        p.decomposed = decompose(a, b);
        p.fused = fusion(p.decomposed);
        p.watermark = ccwm(a, b);
        p.fused_packed = wavelet::dwt2_packed(p.fused);
        std::tie(p.protected_packed, p.key_stream) =
            protection->forward_streams(p.fused_packed, wavelet::dwt2_packed(p.watermark));
        p.watermarked = decoder(wavelet::idwt2_packed(p.protected_packed));
        return p;
    }

    // Inverse path without key authentication (training and internal use).
    AuthorizedPass authorized(const torch::Tensor& watermarked, const FeatureMap& key_stream) {
        AuthorizedPass p;
        require_channels(watermarked, 1, "watermarked image");
        require_spatial(watermarked, cfg.encoder.image_size, "watermarked image");
        p.reencoded_packed = wavelet::dwt2_packed(shared(watermarked));
        auto [f, w] = protection->inverse_streams(p.reencoded_packed, key_stream);
        return finish(p, f, w);
    }

    // Decodes the fused feature directly, skipping protection and recovery.
    torch::Tensor clean_direct(const torch::Tensor& a, const torch::Tensor& b) {
        return decoder(fusion(decompose(a, b)));
    }

    FusionOutput fuse_unauthorized(const torch::Tensor& a, const torch::Tensor& b) {
        auto p = unauthorized(a, b);
        FusionOutput out;
        out.watermarked_image = p.watermarked;
        const auto fp = fingerprint();
        for (int64_t i = 0; i < a.size(0); ++i) {
            KeyArtifact k;
            k.payload = p.key_stream.select(0, i).unsqueeze(0).detach().to(torch::kCPU, torch::kFloat32).contiguous();
            k.fingerprint = fp;
            out.keys.push_back(std::move(k.seal()));
        }
        return out;
    }

    RecoveryOutput recover_authorized(const torch::Tensor& watermarked, const std::vector<KeyArtifact>& keys) {
        require_channels(watermarked, 1, "watermarked image");
        require_spatial(watermarked, cfg.encoder.image_size, "watermarked image");
        if (static_cast<int64_t>(keys.size()) != watermarked.size(0))
            throw KeyIncompatibleError("recover: " + std::to_string(keys.size()) + " keys for a batch of " +
                                       std::to_string(watermarked.size(0)));
        const auto fp = fingerprint();
        std::vector<torch::Tensor> payloads;
        for (const auto& k : keys) {
            if (!k.verify()) throw AuthenticationError("recover: key checksum mismatch");
            if (k.fingerprint != fp)
                throw KeyIncompatibleError("recover: key was issued by checkpoint " + to_hex(k.fingerprint) +
                                           ", loaded checkpoint is " + to_hex(fp));
            payloads.push_back(k.payload);
        }
        KeyArtifact batch;
        batch.payload = torch::cat(payloads, 0);
        batch.fingerprint = fp;
        batch.seal();
        AuthorizedPass p;
        p.reencoded_packed = wavelet::dwt2_packed(shared(watermarked));
        auto [f, w] = protection->recover(p.reencoded_packed, batch);
        finish(p, f, w);
        return {p.clean, p.watermark_logits};
    }

    RecoveryOutput recover_authorized(const torch::Tensor& watermarked, const KeyArtifact& key) {
        return recover_authorized(watermarked, std::vector<KeyArtifact>{key});
    }

    ModelConfig cfg;
    SharedEncoder shared{nullptr};
    PrivateEncoder private_a{nullptr}, private_b{nullptr};
    FusionModule fusion{nullptr};
    WatermarkMemory ccwm{nullptr};
    CopyrightProtection protection{nullptr};
    Decoder decoder{nullptr};
    WatermarkHead wm_head{nullptr};

private:
    AuthorizedPass& finish(AuthorizedPass& p, const FeatureMap& f_packed, const FeatureMap& w_packed) {
        p.recovered_fused = wavelet::idwt2_packed(f_packed);
        p.recovered_watermark = wavelet::idwt2_packed(w_packed);
        p.clean = decoder(p.recovered_fused);
        p.watermark_logits = wm_head(p.recovered_watermark);
        return p;
    }
};
TORCH_MODULE(AmifModel);

inline void save_model(const std::filesystem::path& path, const AmifModel& model) {
    checkpoint::save(path, *model, model->header());
}

inline AmifModel load_model(const std::filesystem::path& path) {
    auto archive = checkpoint::read(path);
    ModelConfig cfg;
    try {
        cfg = nlohmann::json::parse(archive.header).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("checkpoint " + path.string() + ": bad header: " + e.what());
    }
    AmifModel model(cfg);
    checkpoint::apply(archive, *model);
    model->eval();
    return model;
}

// ---------------------------------------------------------------------------
// Watermark label

namespace label_detail {
// 3x5 glyphs, row-major, '#' = ink.
inline const std::array<std::array<const char*, 5>, 4>& glyphs() {
    static const std::array<std::array<const char*, 5>, 4> g = {{
        {".#.", "#.#", "###", "#.#", "#.#"},  // A
        {"#.#", "###", "#.#", "#.#", "#.#"},  // M
        {"###", ".#.", ".#.", ".#.", "###"},  // I
        {"###", "#..", "##.", "#..", "#.."},  // F
    }};
    return g;
}
}  // namespace label_detail

// Binary (1, 1, S, S) label: the text "AMIF" drawn on a 16 x 16 cell grid
// (cell = S / 16 pixels), which lines up with the default CCWM token grid.
inline torch::Tensor make_watermark_label(int64_t size) {
    if (size < 16) throw ConfigError("watermark label: image size must be >= 16");
    const int64_t cell = size / 16;
    // offsets in whole cells so glyph edges fall on token boundaries
    const int64_t x0 = ((16 - 15) / 2) * cell;
    const int64_t y0 = ((16 - 5) / 2) * cell;
    auto label = torch::zeros({1, 1, size, size});
    auto acc = label.accessor<float, 4>();
    const auto& g = label_detail::glyphs();
    for (int gi = 0; gi < 4; ++gi)
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 3; ++c) {
                if (g[gi][r][c] != '#') continue;
                const int64_t px = x0 + (gi * 4 + c) * cell, py = y0 + r * cell;
                for (int64_t y = py; y < py + cell; ++y)
                    for (int64_t x = px; x < px + cell; ++x) acc[0][0][y][x] = 1.0f;
            }
    return label;
}

// ---------------------------------------------------------------------------
// Probes

inline double psnr(const torch::Tensor& x, const torch::Tensor& y, double peak = 1.0) {
    require_same_shape(x, y, "psnr");
    const double mse = (x.detach().to(torch::kFloat64) - y.detach().to(torch::kFloat64)).pow(2).mean().item<double>();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

// A pixel counts as watermarked when I_wf is closer to (a + b + 1) / 3 than to
// (a + b) / 3, i.e. when the residual I_wf - (a + b) / 2 exceeds (1 - a - b) / 6.
inline torch::Tensor residual_mask(const torch::Tensor& watermarked, const torch::Tensor& a, const torch::Tensor& b) {
    require_same_shape(watermarked, a, "residual_mask");
    require_same_shape(a, b, "residual_mask");
    auto residual = watermarked - (a + b) * 0.5;
    return (residual > (1.0 - a - b) / 6.0).to(torch::kFloat32);
}

inline double dice(const torch::Tensor& pred_mask, const torch::Tensor& label) {
    auto p = pred_mask.detach().to(torch::kFloat64);
    auto l = label.detach().to(torch::kFloat64).expand_as(p);
    const double denom = (p.sum() + l.sum()).item<double>();
    if (denom == 0.0) return 1.0;
    return 2.0 * (p * l).sum().item<double>() / denom;
}

inline double residual_dice(const torch::Tensor& watermarked, const torch::Tensor& a, const torch::Tensor& b,
                            const torch::Tensor& label) {
    return dice(residual_mask(watermarked.detach(), a, b), label);
}

// ---------------------------------------------------------------------------
// Built-in degradations (blur sigma 2, median 5x5, Gaussian noise sigma 0.05)

enum class Degradation { GaussianBlur, Median, Noise };

inline Degradation parse_degradation(const std::string& s) {
    if (s == "gaussian_blur") return Degradation::GaussianBlur;
    if (s == "median") return Degradation::Median;
    if (s == "noise") return Degradation::Noise;
    throw ValidationError("unknown degradation '" + s + "' (expected gaussian_blur, median or noise)");
}

inline torch::Tensor degrade(const torch::Tensor& img, Degradation kind, uint64_t seed = 0) {
    require_rank4(img, "degrade");
    namespace F = torch::nn::functional;
    torch::NoGradGuard ng;
    const auto C = img.size(1);
    switch (kind) {
        case Degradation::GaussianBlur: {
            constexpr double sigma = 2.0;
            constexpr int64_t radius = 6;
            auto r = torch::arange(-radius, radius + 1, img.options());
            auto g = torch::exp(-(r * r) / (2 * sigma * sigma));
            g = g / g.sum();
            auto k = torch::outer(g, g).reshape({1, 1, 2 * radius + 1, 2 * radius + 1}).repeat({C, 1, 1, 1});
            auto padded = F::pad(img, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReflect));
            return F::conv2d(padded, k, F::Conv2dFuncOptions().groups(C));
        }
        case Degradation::Median: {
            auto padded = F::pad(img, F::PadFuncOptions({2, 2, 2, 2}).mode(torch::kReflect));
            auto patches = padded.unfold(2, 5, 1).unfold(3, 5, 1);  // (B, C, H, W, 5, 5)
            return std::get<0>(patches.flatten(-2).median(-1));
        }
        case Degradation::Noise: {
            auto gen = at::detail::createCPUGenerator(seed);
            auto noise = at::normal(0.0, 0.05, img.sizes(), gen).to(img.options());
            return (img + noise).clamp(0.0, 1.0);
        }
    }
    throw ValidationError("degrade: unknown kind");
}

}  // namespace amif

#endif
