#ifndef AMIF_FUSION_HPP
#define AMIF_FUSION_HPP

#include <torch/torch.h>

#include <string>

#include "amif/backbone.hpp"

namespace amif {

struct DenseBlockOptions {
    int64_t growth = 32;
    int64_t layers = 3;
    double slope = 0.2;
    // Multiplier on the default init of the final 1x1 projection.
    double out_init_scale = 1.0;
};

// Densely connected 3x3 convolutions: layer k sees cat(x, y_0, ..., y_{k-1}).
// A 1x1 projection over everything maps to out_channels.
struct DenseBlockImpl : nn::Module {
    DenseBlockImpl(int64_t in_channels, int64_t out_channels, DenseBlockOptions opt = {})
        : opt(opt) {
        if (in_channels <= 0 || out_channels <= 0)
            throw ConfigError("dense_block: channel counts must be positive");
        if (opt.growth <= 0) throw ConfigError("dense_block: growth must be positive");
        if (opt.layers <= 0) throw ConfigError("dense_block: layers must be positive");
        int64_t width = in_channels;
        for (int64_t i = 0; i < opt.layers; ++i) {
            convs.push_back(register_module("conv" + std::to_string(i), conv3x3(width, opt.growth)));
            width += opt.growth;
        }
        project = register_module("project", conv1x1(width, out_channels));
        if (opt.out_init_scale != 1.0) {
            torch::NoGradGuard g;
            project->weight.mul_(opt.out_init_scale);
            project->bias.mul_(opt.out_init_scale);
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        std::vector<torch::Tensor> feats{x};
        for (auto& c : convs) feats.push_back(torch::leaky_relu(c(torch::cat(feats, 1)), opt.slope));
        return project(torch::cat(feats, 1));
    }

    DenseBlockOptions opt;
    std::vector<nn::Conv2d> convs;
    nn::Conv2d project{nullptr};
};
TORCH_MODULE(DenseBlock);

// fused = mu(cat(base_a, base_b)) + phi(cat(detail_a, detail_b))
//       + varphi(cat(detail_a, detail_b)) + (base_a + base_b) / 2
struct FusionModuleImpl : nn::Module {
    explicit FusionModuleImpl(int64_t dim, DenseBlockOptions opt = {}) {
        base_map = register_module("mu", DenseBlock(dim * 2, dim, opt));
        detail_map = register_module("phi", DenseBlock(dim * 2, dim, opt));
        detail_gate = register_module("varphi", DenseBlock(dim * 2, dim, opt));
    }

    FeatureMap forward(const DecomposedFeatures& d) {
        require_rank4(d.base_a, "fuse");
        require_same_shape(d.base_a, d.base_b, "fuse (base_a vs base_b)");
        require_same_shape(d.base_a, d.detail_a, "fuse (base_a vs detail_a)");
        require_same_shape(d.base_a, d.detail_b, "fuse (base_a vs detail_b)");
        auto base = torch::cat({d.base_a, d.base_b}, 1);
        auto detail = torch::cat({d.detail_a, d.detail_b}, 1);
        return base_map(base) + detail_map(detail) + detail_gate(detail) + (d.base_a + d.base_b) * 0.5;
    }

    DenseBlock base_map{nullptr}, detail_map{nullptr}, detail_gate{nullptr};
};
TORCH_MODULE(FusionModule);

}  // namespace amif

#endif
