#ifndef AMIF_BACKBONE_HPP
#define AMIF_BACKBONE_HPP

// Shared encoder/decoder and per-modality private encoders.
//
// Neither the encoders nor the decoder change spatial resolution; the only
// resolution change in the model is the wavelet split before coupling.

#include <torch/torch.h>

#include <cmath>
#include <string>

#include "amif/tensor_utils.hpp"

namespace amif {

struct EncoderConfig {
    int64_t num_blocks = 4;
    int64_t num_heads = 8;
    int64_t feat_dim = 64;
    int64_t image_size = 256;

    void validate() const {
        if (num_blocks < 1) throw ConfigError("EncoderConfig: num_blocks must be >= 1");
        if (num_heads < 1) throw ConfigError("EncoderConfig: num_heads must be >= 1");
        if (feat_dim < 2 || feat_dim % 2 != 0)
            throw ConfigError("EncoderConfig: feat_dim must be even and >= 2");
        if (feat_dim % num_heads != 0)
            throw ConfigError("EncoderConfig: feat_dim " + std::to_string(feat_dim) +
                              " not divisible by num_heads " + std::to_string(num_heads));
        if (image_size < 2 || image_size % 2 != 0)
            throw ConfigError("EncoderConfig: image_size must be even");
    }
};

namespace nn = torch::nn;

namespace init {

// Truncated normal on [-2 sigma, 2 sigma] by rejection.
inline void trunc_normal_(torch::Tensor w, double sigma) {
    torch::NoGradGuard g;
    w.normal_(0.0, sigma);
    for (int i = 0; i < 16; ++i) {
        auto bad = w.abs() > 2.0 * sigma;
        if (!bad.any().item<bool>()) return;
        w.masked_scatter_(bad, torch::empty_like(w).normal_(0.0, sigma).masked_select(bad));
    }
    w.clamp_(-2.0 * sigma, 2.0 * sigma);
}

inline void zero_(nn::Conv2d& conv) {
    torch::NoGradGuard g;
    conv->weight.zero_();
    if (conv->bias.defined()) conv->bias.zero_();
}

}  // namespace init

inline nn::Conv2d conv1x1(int64_t in, int64_t out, bool bias = true) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 1).bias(bias));
}

inline nn::Conv2d conv3x3(int64_t in, int64_t out, bool bias = true, int64_t groups = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(bias).groups(groups));
}

// Per-pixel layer norm over the channel axis.
struct LayerNorm2dImpl : nn::Module {
    explicit LayerNorm2dImpl(int64_t channels) {
        weight = register_parameter("weight", torch::ones({1, channels, 1, 1}));
        bias = register_parameter("bias", torch::zeros({1, channels, 1, 1}));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto mu = x.mean(1, true);
        auto var = (x - mu).pow(2).mean(1, true);
        return (x - mu) / torch::sqrt(var + 1e-5) * weight + bias;
    }
    torch::Tensor weight, bias;
};
TORCH_MODULE(LayerNorm2d);

// Transposed (channel-to-channel) multi-head attention with depthwise-conv
// projections. Cost is O(C^2 HW), so it runs at full resolution.
struct ChannelSelfAttentionImpl : nn::Module {
    ChannelSelfAttentionImpl(int64_t dim, int64_t heads) : heads(heads) {
        temperature = register_parameter("temperature", torch::ones({heads, 1, 1}));
        qkv = register_module("qkv", conv1x1(dim, dim * 3, false));
        qkv_dw = register_module("qkv_dw", conv3x3(dim * 3, dim * 3, false, dim * 3));
        project_out = register_module("project_out", conv1x1(dim, dim, false));
        init::trunc_normal_(qkv->weight, 0.02);
        init::zero_(project_out);
    }

    torch::Tensor forward(const torch::Tensor& x) {
        const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
        auto parts = qkv_dw(qkv(x)).chunk(3, 1);
        auto split = [&](const torch::Tensor& t) { return t.reshape({B, heads, C / heads, H * W}); };
        namespace F = torch::nn::functional;
        auto q = F::normalize(split(parts[0]), F::NormalizeFuncOptions().dim(-1));
        auto k = F::normalize(split(parts[1]), F::NormalizeFuncOptions().dim(-1));
        auto v = split(parts[2]);
        auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * temperature, -1);
        return project_out(torch::matmul(attn, v).reshape({B, C, H, W}));
    }

    int64_t heads;
    torch::Tensor temperature;
    nn::Conv2d qkv{nullptr}, qkv_dw{nullptr}, project_out{nullptr};
};
TORCH_MODULE(ChannelSelfAttention);

// Gated depthwise feed-forward.
struct GatedFeedForwardImpl : nn::Module {
    GatedFeedForwardImpl(int64_t dim, double expansion = 2.66) {
        const auto hidden = static_cast<int64_t>(dim * expansion);
        project_in = register_module("project_in", conv1x1(dim, hidden * 2, false));
        dwconv = register_module("dwconv", conv3x3(hidden * 2, hidden * 2, false, hidden * 2));
        project_out = register_module("project_out", conv1x1(hidden, dim, false));
        init::trunc_normal_(project_in->weight, 0.02);
        init::zero_(project_out);
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto h = dwconv(project_in(x)).chunk(2, 1);
        return project_out(torch::gelu(h[0]) * h[1]);
    }
    nn::Conv2d project_in{nullptr}, dwconv{nullptr}, project_out{nullptr};
};
TORCH_MODULE(GatedFeedForward);

struct RestorationBlockImpl : nn::Module {
    RestorationBlockImpl(int64_t dim, int64_t heads) {
        norm1 = register_module("norm1", LayerNorm2d(dim));
        attn = register_module("attn", ChannelSelfAttention(dim, heads));
        norm2 = register_module("norm2", LayerNorm2d(dim));
        ffn = register_module("ffn", GatedFeedForward(dim));
    }
    torch::Tensor forward(torch::Tensor x) {
        x = x + attn(norm1(x));
        return x + ffn(norm2(x));
    }
    LayerNorm2d norm1{nullptr}, norm2{nullptr};
    ChannelSelfAttention attn{nullptr};
    GatedFeedForward ffn{nullptr};
};
TORCH_MODULE(RestorationBlock);

// Spatial multi-head attention with full-resolution queries and keys/values
// pooled onto a fixed grid (long-range half of the long-short range block).
struct PooledSpatialAttentionImpl : nn::Module {
    PooledSpatialAttentionImpl(int64_t dim, int64_t heads, int64_t grid = 16)
        : heads(heads), grid(grid) {
        q = register_module("q", conv1x1(dim, dim, false));
        kv = register_module("kv", conv1x1(dim, dim * 2, false));
        init::trunc_normal_(q->weight, 0.02);
        init::trunc_normal_(kv->weight, 0.02);
    }

    torch::Tensor forward(const torch::Tensor& x) {
        const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
        const auto d = C / heads;
        const auto g = std::min({grid, H, W});
        auto pooled = torch::adaptive_avg_pool2d(x, {g, g});
        auto qh = q(x).reshape({B, heads, d, H * W}).transpose(-2, -1);  // (B, h, HW, d)
        auto kvp = kv(pooled).chunk(2, 1);
        auto kh = kvp[0].reshape({B, heads, d, g * g});                  // (B, h, d, T)
        auto vh = kvp[1].reshape({B, heads, d, g * g}).transpose(-2, -1); // (B, h, T, d)
        auto attn = torch::softmax(torch::matmul(qh, kh) / std::sqrt(static_cast<double>(d)), -1);
        return torch::matmul(attn, vh).transpose(-2, -1).reshape({B, C, H, W});
    }

    int64_t heads, grid;
    nn::Conv2d q{nullptr}, kv{nullptr};
};
TORCH_MODULE(PooledSpatialAttention);

// Long-short range block: pooled global attention alongside a depthwise
// local branch, merged by a zero-initialised projection, then a gated FFN.
struct LongShortRangeBlockImpl : nn::Module {
    LongShortRangeBlockImpl(int64_t dim, int64_t heads) {
        norm1 = register_module("norm1", LayerNorm2d(dim));
        global = register_module("global", PooledSpatialAttention(dim, heads));
        local_dw = register_module("local_dw", conv3x3(dim, dim, true, dim));
        local_pw = register_module("local_pw", conv1x1(dim, dim));
        merge = register_module("merge", conv1x1(dim * 2, dim, false));
        norm2 = register_module("norm2", LayerNorm2d(dim));
        ffn = register_module("ffn", GatedFeedForward(dim));
        init::zero_(merge);
    }
    torch::Tensor forward(torch::Tensor x) {
        auto h = norm1(x);
        auto local = local_pw(torch::leaky_relu(local_dw(h), 0.2));
        x = x + merge(torch::cat({global(h), local}, 1));
        return x + ffn(norm2(x));
    }
    LayerNorm2d norm1{nullptr}, norm2{nullptr};
    PooledSpatialAttention global{nullptr};
    nn::Conv2d local_dw{nullptr}, local_pw{nullptr}, merge{nullptr};
    GatedFeedForward ffn{nullptr};
};
TORCH_MODULE(LongShortRangeBlock);

// 1x1 expand -> ReLU6 -> depthwise 3x3 (reflect) -> ReLU6 -> 1x1 project.
struct InvertedResidualImpl : nn::Module {
    InvertedResidualImpl(int64_t in, int64_t out, int64_t expand = 2) {
        const auto hidden = in * expand;
        expand_conv = register_module("expand", conv1x1(in, hidden, false));
        dw = register_module("dw", nn::Conv2d(nn::Conv2dOptions(hidden, hidden, 3)
                                                  .padding(1)
                                                  .padding_mode(torch::kReflect)
                                                  .groups(hidden)
                                                  .bias(false)));
        project = register_module("project", conv1x1(hidden, out, false));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto h = torch::clamp(expand_conv(x), 0.0, 6.0);
        h = torch::clamp(dw(h), 0.0, 6.0);
        return project(h);
    }
    nn::Conv2d expand_conv{nullptr}, dw{nullptr}, project{nullptr};
};
TORCH_MODULE(InvertedResidual);

// Two additive coupling sub-steps over a channel split:
//   z2 += f(z1);  z1 += g(z2)
struct AdditiveCouplingNodeImpl : nn::Module {
    explicit AdditiveCouplingNodeImpl(int64_t dim) {
        const auto half = dim / 2;
        f = register_module("f", InvertedResidual(half, half));
        g = register_module("g", InvertedResidual(half, half));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        auto z = x.chunk(2, 1);
        auto z2 = z[1] + f(z[0]);
        auto z1 = z[0] + g(z2);
        return torch::cat({z1, z2}, 1);
    }
    torch::Tensor inverse(const torch::Tensor& y) {
        auto z = y.chunk(2, 1);
        auto z1 = z[0] - g(z[1]);
        auto z2 = z[1] - f(z1);
        return torch::cat({z1, z2}, 1);
    }
    InvertedResidual f{nullptr}, g{nullptr};
};
TORCH_MODULE(AdditiveCouplingNode);

struct DetailBranchImpl : nn::Module {
    DetailBranchImpl(int64_t dim, int64_t nodes = 3) {
        for (int64_t i = 0; i < nodes; ++i)
            this->nodes.push_back(register_module("node" + std::to_string(i), AdditiveCouplingNode(dim)));
    }
    torch::Tensor forward(torch::Tensor x) {
        for (auto& n : nodes) x = n(x);
        return x;
    }
    std::vector<AdditiveCouplingNode> nodes;
};
TORCH_MODULE(DetailBranch);

// Base-feature encoder shared by both modalities (and by the recovery path).
struct SharedEncoderImpl : nn::Module {
    explicit SharedEncoderImpl(const EncoderConfig& cfg) : cfg(cfg) {
        cfg.validate();
        embed = register_module("embed", conv3x3(1, cfg.feat_dim, false));
        for (int64_t i = 0; i < cfg.num_blocks; ++i)
            blocks->push_back(RestorationBlock(cfg.feat_dim, cfg.num_heads));
        register_module("blocks", blocks);
    }
    torch::Tensor forward(const torch::Tensor& x) {
        require_channels(x, 1, "shared_encode");
        require_spatial(x, cfg.image_size, "shared_encode");
        return blocks->forward(embed(x));
    }
    EncoderConfig cfg;
    nn::Conv2d embed{nullptr};
    nn::Sequential blocks;
};
TORCH_MODULE(SharedEncoder);

// Modality-specific encoder: global long-short range branch + invertible
// detail branch, summed.
struct PrivateEncoderImpl : nn::Module {
    explicit PrivateEncoderImpl(const EncoderConfig& cfg) : cfg(cfg) {
        cfg.validate();
        embed = register_module("embed", conv3x3(1, cfg.feat_dim, false));
        for (int64_t i = 0; i < cfg.num_blocks; ++i)
            global->push_back(LongShortRangeBlock(cfg.feat_dim, cfg.num_heads));
        register_module("global", global);
        detail = register_module("detail", DetailBranch(cfg.feat_dim));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        require_channels(x, 1, "private_encode");
        require_spatial(x, cfg.image_size, "private_encode");
        auto e = embed(x);
        return global->forward(e) + detail(e);
    }
    EncoderConfig cfg;
    nn::Conv2d embed{nullptr};
    nn::Sequential global;
    DetailBranch detail{nullptr};
};
TORCH_MODULE(PrivateEncoder);

// Mirror of the shared encoder ending in a sigmoid range map to [0, 1].
struct DecoderImpl : nn::Module {
    explicit DecoderImpl(const EncoderConfig& cfg) : cfg(cfg) {
        cfg.validate();
        for (int64_t i = 0; i < cfg.num_blocks; ++i)
            blocks->push_back(RestorationBlock(cfg.feat_dim, cfg.num_heads));
        register_module("blocks", blocks);
        head1 = register_module("head1", conv3x3(cfg.feat_dim, cfg.feat_dim / 2));
        head2 = register_module("head2", conv3x3(cfg.feat_dim / 2, 1));
    }
    torch::Tensor logits(const torch::Tensor& f) {
        require_channels(f, cfg.feat_dim, "decode");
        auto h = blocks->forward(f);
        return head2(torch::leaky_relu(head1(h), 0.2));
    }
    torch::Tensor forward(const torch::Tensor& f) { return torch::sigmoid(logits(f)); }

    EncoderConfig cfg;
    nn::Sequential blocks;
    nn::Conv2d head1{nullptr}, head2{nullptr};
};
TORCH_MODULE(Decoder);

// Base / detail features of both modalities.
struct DecomposedFeatures {
    FeatureMap base_a, base_b, detail_a, detail_b;
};

}  // namespace amif

#endif
