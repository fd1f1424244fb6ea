#ifndef AMIF_CSAMIC_HPP
#define AMIF_CSAMIC_HPP

// Invertible copyright-protection coupling.
//
// One block maps (content f, watermark w) to
//   f' = f + phi(w)
//   w' = w * delta(f') * exp(alpha(eta(f') * varphi(f'))) + mu(f')
// and its inverse, given (f', w'), is
//   w = (w' - mu(f')) / (delta(f') * exp(alpha(eta(f') * varphi(f'))))
//   f = f' - phi(w)
// with alpha(x) = c * sigmoid(x). delta is the only divisor and is confined to
// [0.1, 1.9], so the inverse never divides by anything near zero.
//
// All streams here are wavelet-packed feature maps (B, 4C, H/2, W/2).

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

#include "amif/fusion.hpp"
#include "amif/key_file.hpp"

namespace amif {

// Squeeze-excitation channel gate, range-mapped to [0.1, 1.9].
struct ChannelAttentionImpl : nn::Module {
    explicit ChannelAttentionImpl(int64_t channels, int64_t reduction = 4) {
        const auto hidden = std::max<int64_t>(1, channels / reduction);
        fc1 = register_module("fc1", conv1x1(channels, hidden));
        fc2 = register_module("fc2", conv1x1(hidden, channels));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto s = torch::adaptive_avg_pool2d(x, {1, 1});
        s = torch::sigmoid(fc2(torch::relu(fc1(s))));
        return (0.1 + 1.8 * s).expand_as(x);
    }
    nn::Conv2d fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(ChannelAttention);

// Per-pixel map from channel mean/max through a 7x7 conv. Unbounded: it only
// appears inside the exponent.
struct SpatialAttentionImpl : nn::Module {
    SpatialAttentionImpl() {
        conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(2, 1, 7).padding(3)));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto stats = torch::cat({x.mean(1, true), std::get<0>(x.max(1, true))}, 1);
        return conv(stats).expand_as(x);
    }
    nn::Conv2d conv{nullptr};
};
TORCH_MODULE(SpatialAttention);

struct CouplingOptions {
    double alpha_scale = 2.0;  // c in alpha(x) = c * sigmoid(x), must lie in (0, 4]
    int64_t se_reduction = 4;
    DenseBlockOptions dense{32, 3, 0.2, 0.1};  // varphi and mu
    // Init scale of phi's output projection. phi's gain trades key
    // sensitivity (content depends on w only through phi) against round-trip
    // conditioning (errors are amplified by phi along the stack).
    double phi_init_scale = 0.2;
    // Initial biases of eta's conv and varphi's projection. With eta ~ 1 and
    // varphi ~ -3 the exponent starts near c * sigmoid(-3) instead of c / 2,
    // so a fresh stack is close to volume-preserving and stream magnitudes
    // do not grow like e^N.
    double eta_bias_init = 1.0;
    double varphi_bias_init = -3.0;
};

struct CouplingBlockImpl : nn::Module {
    CouplingBlockImpl(int64_t channels, CouplingOptions opt = {}) : channels(channels), opt(opt) {
        if (!(opt.alpha_scale > 0.0 && opt.alpha_scale <= 4.0))
            throw ConfigError("coupling: alpha_scale must lie in (0, 4]");
        auto phi_opt = opt.dense;
        phi_opt.out_init_scale = opt.phi_init_scale;
        phi_add = register_module("phi", DenseBlock(channels, channels, phi_opt));
        delta = register_module("delta", ChannelAttention(channels, opt.se_reduction));
        eta = register_module("eta", SpatialAttention());
        phi_mul = register_module("varphi", DenseBlock(channels, channels, opt.dense));
        mu = register_module("mu", DenseBlock(channels, channels, opt.dense));
        torch::NoGradGuard g;
        eta->conv->bias.fill_(opt.eta_bias_init);
        phi_mul->project->bias.fill_(opt.varphi_bias_init);
    }

    torch::Tensor alpha(const torch::Tensor& x) const { return opt.alpha_scale * torch::sigmoid(x); }

    // log of the multiplicative factor applied to w, elementwise.
    torch::Tensor log_scale(const torch::Tensor& f_next) {
        return torch::log(delta(f_next)) + alpha(eta(f_next) * phi_mul(f_next));
    }

    std::pair<FeatureMap, FeatureMap> forward(const FeatureMap& f, const FeatureMap& w) {
        check(f, w, "coupling forward");
        auto f_next = f + phi_add(w);
        auto w_next = w * delta(f_next) * torch::exp(alpha(eta(f_next) * phi_mul(f_next))) + mu(f_next);
        return {f_next, w_next};
    }

    std::pair<FeatureMap, FeatureMap> inverse(const FeatureMap& f_c, const FeatureMap& f_k) {
        check(f_c, f_k, "coupling inverse");
        auto scale = delta(f_c) * torch::exp(alpha(eta(f_c) * phi_mul(f_c)));
        auto w = (f_k - mu(f_c)) / scale;
        return {f_c - phi_add(w), w};
    }

    // Per-item log|det J| of forward at (f, w): sum of log_scale over C, H, W.
    torch::Tensor log_det(const FeatureMap& f, const FeatureMap& w) {
        check(f, w, "coupling log_det");
        return log_scale(f + phi_add(w)).flatten(1).sum(1);
    }

    int64_t channels;
    CouplingOptions opt;
    DenseBlock phi_add{nullptr};
    ChannelAttention delta{nullptr};
    SpatialAttention eta{nullptr};
    DenseBlock phi_mul{nullptr};
    DenseBlock mu{nullptr};

private:
    void check(const FeatureMap& a, const FeatureMap& b, const char* what) const {
        require_channels(a, channels, what);
        require_same_shape(a, b, what);
        require_finite(a, what);
        require_finite(b, what);
    }
};
TORCH_MODULE(CouplingBlock);

struct ProtectResult {
    FeatureMap protected_features;
    KeyArtifact key;
};

// Stack of N coupling blocks. protect() runs them in order; recover() runs the
// inverses in reverse order and requires the matching key.
struct CopyrightProtectionImpl : nn::Module {
    static constexpr int64_t kMaxBlocks = 8;

    CopyrightProtectionImpl(int64_t channels, int64_t num_blocks, CouplingOptions opt = {})
        : channels(channels) {
        if (num_blocks < 1) throw ConfigError("copyright protection: empty block list");
        if (num_blocks > kMaxBlocks)
            throw ConfigError("copyright protection: at most " + std::to_string(kMaxBlocks) + " blocks");
        for (int64_t i = 0; i < num_blocks; ++i)
            blocks.push_back(register_module("block" + std::to_string(i), CouplingBlock(channels, opt)));
    }

    std::pair<FeatureMap, FeatureMap> forward_streams(FeatureMap f, FeatureMap w) {
        for (auto& b : blocks) std::tie(f, w) = b(f, w);
        return {f, w};
    }

    std::pair<FeatureMap, FeatureMap> inverse_streams(FeatureMap f, FeatureMap k) {
        for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) std::tie(f, k) = (*it)->inverse(f, k);
        return {f, k};
    }

    torch::Tensor log_det(FeatureMap f, FeatureMap w) {
        auto total = torch::zeros({f.size(0)}, f.options());
        for (auto& b : blocks) {
            total = total + b->log_det(f, w);
            std::tie(f, w) = b(f, w);
        }
        return total;
    }

    ProtectResult protect(const FeatureMap& fused, const FeatureMap& watermark) {
        auto [f, w] = forward_streams(fused, watermark);
        KeyArtifact key;
        key.payload = w;
        key.seal();
        return {f, std::move(key)};
    }

    // Returns (fused, watermark) streams.
    std::pair<FeatureMap, FeatureMap> recover(const FeatureMap& protected_features, const KeyArtifact& key) {
        if (!key.payload.defined()) throw AuthenticationError("recover: empty key");
        if (!key.verify()) throw AuthenticationError("recover: key checksum mismatch");
        if (key.payload.sizes() != protected_features.sizes())
            throw KeyIncompatibleError("recover: key payload shape " + shape_str(key.payload) +
                                       " does not match protected features " +
                                       shape_str(protected_features));
        return inverse_streams(protected_features, key.payload.to(protected_features.options()));
    }

    int64_t channels;
    std::vector<CouplingBlock> blocks;
};
TORCH_MODULE(CopyrightProtection);

}  // namespace amif

#endif
