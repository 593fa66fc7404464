#pragma once

#include "candida/nn.hpp"

#include <array>
#include <stdexcept>
#include <string>

namespace candida {

// Residual conv encoder with four stages at strides 4/8/16/32 relative to the
// input. Stage widths and depth come from a preset so desk-scale runs stay
// CPU-feasible while a production-scale layout remains available.
struct ArchConfig {
    std::string id = "desk";
    std::array<int, 4> widths{16, 32, 64, 128};
    int blocks_per_stage = 2;
    // SSA head
    int embed_dim = 128;
    int heads = 4;
    int depth = 2;
    int query_grid = 16;  // query tokens form a query_grid x query_grid map
    // detector
    int fpn_dim = 64;

    static ArchConfig preset(const std::string& name) {
        ArchConfig c;
        c.id = name;
        if (name == "toy") {
            c.widths = {8, 16, 32, 64};
            c.blocks_per_stage = 1;
            c.embed_dim = 32;
            c.heads = 4;
            c.depth = 1;
            c.fpn_dim = 32;
        } else if (name == "desk") {
            // defaults above
        } else if (name == "large") {
            c.widths = {64, 128, 256, 512};
            c.blocks_per_stage = 2;
            c.embed_dim = 256;
            c.heads = 8;
            c.depth = 2;
            c.fpn_dim = 256;
        } else {
            throw std::invalid_argument("unknown architecture preset: " + name);
        }
        return c;
    }
};

template <typename T>
struct MultiScaleFeatures {
    Var<T> c1, c2, c3, c4;  // strides 4, 8, 16, 32
};

template <typename T>
struct ResBlock {
    Conv2d<T> conv1, conv2, proj;
    GroupNorm<T> gn1, gn2;
    bool has_proj = false;

    ResBlock() = default;
    ResBlock(ParamStore<T>& ps, const std::string& name, int ci, int co, int stride) {
        conv1 = Conv2d<T>(ps, name + ".conv1", ci, co, 3, stride, 1);
        gn1 = GroupNorm<T>(ps, name + ".gn1", co, norm_groups(co));
        conv2 = Conv2d<T>(ps, name + ".conv2", co, co, 3, 1, 1);
        gn2 = GroupNorm<T>(ps, name + ".gn2", co, norm_groups(co));
        has_proj = (ci != co || stride != 1);
        if (has_proj) proj = Conv2d<T>(ps, name + ".proj", ci, co, 1, stride, 0);
    }

    static int norm_groups(int channels) { return channels >= 8 ? 8 : 1; }

    Var<T> forward(const Var<T>& x) const {
        auto h = relu(gn1.forward(conv1.forward(x)));
        h = gn2.forward(conv2.forward(h));
        auto skip = has_proj ? proj.forward(x) : x;
        return relu(add(h, skip));
    }
};

template <typename T>
struct Encoder {
    ArchConfig cfg;
    Conv2d<T> stem;
    GroupNorm<T> stem_gn;
    std::vector<std::vector<ResBlock<T>>> stages;  // 4 stages, each stride 2

    Encoder() = default;
    Encoder(ParamStore<T>& ps, const ArchConfig& cfg_) : cfg(cfg_) {
        stem = Conv2d<T>(ps, "stem.conv", 3, cfg.widths[0], 3, 2, 1);
        stem_gn = GroupNorm<T>(ps, "stem.gn", cfg.widths[0], ResBlock<T>::norm_groups(cfg.widths[0]));
        int ci = cfg.widths[0];
        for (int s = 0; s < 4; ++s) {
            std::vector<ResBlock<T>> blocks;
            int co = cfg.widths[static_cast<size_t>(s)];
            for (int b = 0; b < cfg.blocks_per_stage; ++b) {
                std::string name =
                    "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
                blocks.emplace_back(ps, name, b == 0 ? ci : co, co, b == 0 ? 2 : 1);
            }
            ci = co;
            stages.push_back(std::move(blocks));
        }
    }

    // x: [3,H,W] with H,W divisible by 32
    MultiScaleFeatures<T> forward(const Var<T>& x) const {
        int H = x->value.dim(1), W = x->value.dim(2);
        if (H % 32 != 0 || W % 32 != 0)
            throw std::invalid_argument("encoder: input size must be divisible by 32, got " +
                                        std::to_string(H) + "x" + std::to_string(W));
        auto h = relu(stem_gn.forward(stem.forward(x)));
        MultiScaleFeatures<T> f;
        std::array<Var<T>*, 4> outs{&f.c1, &f.c2, &f.c3, &f.c4};
        for (int s = 0; s < 4; ++s) {
            for (const auto& b : stages[static_cast<size_t>(s)]) h = b.forward(h);
            *outs[static_cast<size_t>(s)] = h;
        }
        return f;
    }
};

// Marks stem + the first n_stages stages as excluded from optimization.
template <typename T>
void freeze_prefix(ParamStore<T>& ps, int n_stages) {
    if (n_stages < 0 || n_stages > 4)
        throw std::invalid_argument("freeze_prefix: n_stages must be in [0,4]");
    for (auto& [name, p] : ps.params) {
        bool frozen = false;
        if (n_stages > 0 && name.rfind("stem.", 0) == 0) frozen = true;
        for (int s = 1; s <= n_stages; ++s)
            if (name.rfind("stage" + std::to_string(s) + ".", 0) == 0) frozen = true;
        if (frozen) p->trainable = false;
    }
}

}  // namespace candida
