#ifndef AMIF_CCWM_HPP
#define AMIF_CCWM_HPP

// Content-conditioned watermark memory.
//
// The copyright identifier comes only from internal learnable state (memory
// vectors and token position embeddings); generate() takes the two source
// images and nothing else.
//
// Token geometry: both modality stems are average-pooled onto a
// token_grid x token_grid grid, attention runs over those tokens, and the
// result is expanded back to pixels with nearest-neighbour replication.

#include <torch/torch.h>

#include <cmath>

#include "amif/backbone.hpp"

namespace amif {

struct CcwmOptions {
    int64_t memory_size = 64;
    int64_t stem_channels = 32;
    int64_t token_grid = 16;
    int64_t heads = 1;
    // Position embeddings are stored divided by this gain and multiplied back
    // in use. Under Adam a parameter moves about lr per step whatever its
    // gradient scale, so the gain sets how fast the spatial layout can form.
    double position_gain = 1.0;
};

struct BicaResult {
    torch::Tensor mem_attended;  // (B, M, d)
    torch::Tensor ctx_attended;  // (B, T, d)
    torch::Tensor mem_weights;   // (B, heads, M, T), rows sum to 1
    torch::Tensor ctx_weights;   // (B, heads, T, M), rows sum to 1
};

// Bidirectional cross attention between memory tokens and context tokens.
//   pass 1: memory queries context      -> mem_attended
//   pass 2: context queries (memory + mem_attended) -> ctx_attended
struct BidirectionalCrossAttentionImpl : nn::Module {
    BidirectionalCrossAttentionImpl(int64_t dim, int64_t heads = 1) : dim(dim), heads(heads) {
        if (dim % heads != 0) throw ConfigError("bica: dim not divisible by heads");
        auto lin = [&](const char* name) {
            auto l = register_module(name, nn::Linear(dim, dim));
            init::trunc_normal_(l->weight, 0.02);
            return l;
        };
        q_mem = lin("q_mem");
        k_ctx = lin("k_ctx");
        v_ctx = lin("v_ctx");
        q_ctx = lin("q_ctx");
        k_mem = lin("k_mem");
        v_mem = lin("v_mem");
    }

    BicaResult forward(const torch::Tensor& mem, const torch::Tensor& ctx) {
        if (mem.dim() != 3 || ctx.dim() != 3)
            throw DimensionError("bica: token sets must be (B, N, d)");
        if (mem.size(1) == 0 || ctx.size(1) == 0) throw ConfigError("bica: empty token set");
        if (mem.size(2) != dim || ctx.size(2) != dim)
            throw DimensionError("bica: token dim mismatch, expected " + std::to_string(dim));
        if (mem.size(0) != ctx.size(0)) throw DimensionError("bica: batch mismatch");

        BicaResult r;
        std::tie(r.mem_attended, r.mem_weights) = attend(q_mem(mem), k_ctx(ctx), v_ctx(ctx));
        auto mem_cond = mem + r.mem_attended;
        std::tie(r.ctx_attended, r.ctx_weights) = attend(q_ctx(ctx), k_mem(mem_cond), v_mem(mem_cond));
        return r;
    }

    int64_t dim, heads;
    nn::Linear q_mem{nullptr}, k_ctx{nullptr}, v_ctx{nullptr};
    nn::Linear q_ctx{nullptr}, k_mem{nullptr}, v_mem{nullptr};

private:
    std::pair<torch::Tensor, torch::Tensor> attend(const torch::Tensor& q, const torch::Tensor& k,
                                                   const torch::Tensor& v) {
        const auto B = q.size(0), Nq = q.size(1), Nk = k.size(1), d = dim / heads;
        auto split = [&](const torch::Tensor& t, int64_t n) {
            return t.reshape({B, n, heads, d}).transpose(1, 2);
        };
        auto w = torch::softmax(
            torch::matmul(split(q, Nq), split(k, Nk).transpose(-2, -1)) / std::sqrt(double(d)), -1);
        auto out = torch::matmul(w, split(v, Nk)).transpose(1, 2).reshape({B, Nq, dim});
        return {out, w};
    }
};
TORCH_MODULE(BidirectionalCrossAttention);

// Two-layer convolutional feature extractor for one modality.
struct ConvStemImpl : nn::Module {
    explicit ConvStemImpl(int64_t channels) {
        conv1 = register_module("conv1", conv3x3(1, channels));
        conv2 = register_module("conv2", conv3x3(channels, channels));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        return conv2(torch::leaky_relu(conv1(x), 0.2));
    }
    nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ConvStem);

struct WatermarkMemoryImpl : nn::Module {
    WatermarkMemoryImpl(int64_t feat_dim, CcwmOptions opt = {}) : feat_dim(feat_dim), opt(opt) {
        if (opt.memory_size < 1) throw ConfigError("ccwm: memory_size must be >= 1");
        if (opt.token_grid < 1) throw ConfigError("ccwm: token_grid must be >= 1");
        vectors = register_parameter("vectors", torch::randn({opt.memory_size, feat_dim}));
        position = register_parameter("position", torch::empty({opt.token_grid * opt.token_grid, feat_dim}));
        if (!(opt.position_gain > 0)) throw ConfigError("ccwm: position_gain must be positive");
        init::trunc_normal_(position, 0.02 / opt.position_gain);
        stem_a = register_module("stem_a", ConvStem(opt.stem_channels));
        stem_b = register_module("stem_b", ConvStem(opt.stem_channels));
        ctx_a = register_module("ctx_a", nn::Linear(opt.stem_channels, feat_dim));
        ctx_b = register_module("ctx_b", nn::Linear(opt.stem_channels, feat_dim));
        bica_a = register_module("bica_a", BidirectionalCrossAttention(feat_dim, opt.heads));
        bica_b = register_module("bica_b", BidirectionalCrossAttention(feat_dim, opt.heads));
        out_proj = register_module("out_proj", nn::Linear(feat_dim * 2, feat_dim));
    }

    std::pair<FeatureMap, FeatureMap> extract_stems(const torch::Tensor& a, const torch::Tensor& b) {
        require_channels(a, 1, "ccwm::extract_stems (a)");
        require_same_shape(a, b, "ccwm::extract_stems");
        return {stem_a(a), stem_b(b)};
    }

    // (B, C, H, W) -> (B, grid*grid, C)
    torch::Tensor tokens(const FeatureMap& stem) const {
        auto g = opt.token_grid;
        return torch::adaptive_avg_pool2d(stem, {g, g}).flatten(2).transpose(1, 2);
    }

    FeatureMap generate(const torch::Tensor& a, const torch::Tensor& b) {
        auto [sa, sb] = extract_stems(a, b);
        const auto B = a.size(0), H = a.size(2), W = a.size(3), g = opt.token_grid;
        auto mem = vectors.unsqueeze(0).expand({B, -1, -1});
        // residual: each context token keeps its own (position-tagged) content
        // and adds what it read back from the memory
        auto ta = ctx_a(tokens(sa)) + position * opt.position_gain;
        auto tb = ctx_b(tokens(sb)) + position * opt.position_gain;
        auto wa = ta + bica_a(mem, ta).ctx_attended;
        auto wb = tb + bica_b(mem, tb).ctx_attended;
        auto t = out_proj(torch::cat({wa, wb}, -1));  // (B, T, feat_dim)
        auto grid = t.transpose(1, 2).reshape({B, feat_dim, g, g});
        namespace F = torch::nn::functional;
        return F::interpolate(grid, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{H, W})
                                        .mode(torch::kNearest));
    }

    FeatureMap forward(const torch::Tensor& a, const torch::Tensor& b) { return generate(a, b); }

    int64_t feat_dim;
    CcwmOptions opt;
    torch::Tensor vectors, position;
    ConvStem stem_a{nullptr}, stem_b{nullptr};
    nn::Linear ctx_a{nullptr}, ctx_b{nullptr};
    BidirectionalCrossAttention bica_a{nullptr}, bica_b{nullptr};
    nn::Linear out_proj{nullptr};
};
TORCH_MODULE(WatermarkMemory);

}  // namespace amif

#endif
