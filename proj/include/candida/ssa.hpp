#pragma once

#include "candida/encoder.hpp"

#include <cmath>

namespace candida {

// [C,H,W] -> [(H/p)*(W/p), C*p*p]: non-overlapping patches in row-major grid
// order, channels fastest within a patch row.
template <typename T>
Var<T> patchify(const Var<T>& x, int p) {
    int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    if (H % p != 0 || W % p != 0)
        throw std::invalid_argument("patchify: spatial dims not divisible by patch size");
    int gh = H / p, gw = W / p;
    int pd = C * p * p;
    auto index = [=](int gi, int gj, int c, int pi, int pj) {
        int64_t src = (static_cast<int64_t>(c) * H + (gi * p + pi)) * W + (gj * p + pj);
        int64_t dst = (static_cast<int64_t>(gi) * gw + gj) * pd +
                      (static_cast<int64_t>(c) * p + pi) * p + pj;
        return std::pair<int64_t, int64_t>(src, dst);
    };
    Tensor<T> v({gh * gw, pd});
    for (int gi = 0; gi < gh; ++gi)
        for (int gj = 0; gj < gw; ++gj)
            for (int c = 0; c < C; ++c)
                for (int pi = 0; pi < p; ++pi)
                    for (int pj = 0; pj < p; ++pj) {
                        auto [s, d] = index(gi, gj, c, pi, pj);
                        v[d] = x->value[s];
                    }
    return detail::make_op<T>(std::move(v), {x}, [x, p, index, gh, gw, C](Node<T>& n) {
        x->ensure_grad();
        for (int gi = 0; gi < gh; ++gi)
            for (int gj = 0; gj < gw; ++gj)
                for (int c = 0; c < C; ++c)
                    for (int pi = 0; pi < p; ++pi)
                        for (int pj = 0; pj < p; ++pj) {
                            auto [s, d] = index(gi, gj, c, pi, pj);
                            x->grad[s] += n.grad[d];
                        }
    });
}

// [C,H,W] -> [H*W, C], one token per spatial cell, row-major.
template <typename T>
Var<T> tokens_from_grid(const Var<T>& x) {
    int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor<T> v({H * W, C});
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i) v[i * C + c] = x->value[c * hw + i];
    return detail::make_op<T>(std::move(v), {x}, [x, C, hw](Node<T>& n) {
        x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i) x->grad[c * hw + i] += n.grad[i * C + c];
    });
}

// One forward pass of the tile classifier.
template <typename T>
struct TileForward {
    Var<T> logits;          // [1,2]; class index 1 is the candida class
    Var<T> embedding;       // [d] CLS output (pre-FC)
    Var<T> spatial_tokens;  // [N, d] non-CLS tokens feeding the attention extractor
    int grid_h = 0, grid_w = 0;
    Var<T> c4;  // last-stage features, kept for Grad-CAM
};

// Skip self-attention classifier: low-level (stride-4) patches become queries,
// high-level (stride-32) cells become keys/values, a CLS token carries the
// decision. With use_ssa off the head degrades to global-average-pool + FC and
// the attention extractor runs the same FC over C4 cells.
template <typename T>
struct TileNet {
    ArchConfig arch;
    int tile_size = 128;
    bool use_ssa = true;

    ParamStore<T> ps;
    Encoder<T> encoder;
    // SSA head
    Linear<T> q_proj, kv_proj;
    Var<T> cls_token, query_pos;
    std::vector<DecoderBlock<T>> blocks;
    LayerNorm<T> final_ln;
    Linear<T> fc;  // classifier FC; also the attention extractor ("same params")

    TileNet(const ArchConfig& arch_, int tile_size_, bool use_ssa_, uint32_t seed)
        : arch(arch_), tile_size(tile_size_), use_ssa(use_ssa_), ps(seed) {
        if (tile_size % 32 != 0)
            throw std::invalid_argument("tile size must be divisible by 32");
        encoder = Encoder<T>(ps, arch);
        int d4 = arch.widths[3];
        if (use_ssa) {
            int c1 = tile_size / 4;
            int patch = c1 / arch.query_grid;
            if (patch < 1 || c1 % arch.query_grid != 0)
                throw std::invalid_argument("tile size incompatible with query grid");
            int d = arch.embed_dim;
            int nq = arch.query_grid * arch.query_grid;
            q_proj = Linear<T>(ps, "head.q_proj", arch.widths[0] * patch * patch, d);
            kv_proj = Linear<T>(ps, "head.kv_proj", d4, d);
            cls_token = ps.create("head.cls", {1, d}, static_cast<T>(0.02));
            query_pos = ps.create("head.query_pos", {nq, d}, static_cast<T>(0.02));
            for (int i = 0; i < arch.depth; ++i)
                blocks.emplace_back(ps, "head.block" + std::to_string(i), d, arch.heads, 4 * d);
            final_ln = LayerNorm<T>(ps, "head.final_ln", d);
            fc = Linear<T>(ps, "head.fc", d, 2);
        } else {
            fc = Linear<T>(ps, "head.fc", d4, 2);
        }
    }

    int embedding_dim() const { return use_ssa ? arch.embed_dim : arch.widths[3]; }

    TileForward<T> forward(const Var<T>& image) const {
        auto feats = encoder.forward(image);
        TileForward<T> out;
        out.c4 = feats.c4;
        if (use_ssa) {
            int c1 = image->value.dim(1) / 4;
            int patch = c1 / arch.query_grid;
            auto queries = add(q_proj.forward(patchify(feats.c1, patch)), query_pos);
            auto kv = kv_proj.forward(tokens_from_grid(feats.c4));
            auto x = concat_rows<T>({cls_token, queries});
            for (const auto& b : blocks) x = b.forward(x, kv);
            x = final_ln.forward(x);
            auto cls_row = slice_rows(x, 0, 1);
            out.logits = fc.forward(cls_row);
            out.embedding = reshape(cls_row, {arch.embed_dim});
            out.spatial_tokens = slice_rows(x, 1, x->value.dim(0) - 1);
            out.grid_h = out.grid_w = arch.query_grid;
        } else {
            auto pooled = mean_spatial(feats.c4);
            auto row = reshape(pooled, {1, arch.widths[3]});
            out.logits = fc.forward(row);
            out.embedding = pooled;
            out.spatial_tokens = tokens_from_grid(feats.c4);
            out.grid_h = feats.c4->value.dim(1);
            out.grid_w = feats.c4->value.dim(2);
        }
        return out;
    }

    TileForward<T> forward(const Tensor<T>& image) const { return forward(constant(image)); }
};

// Softmax probability of the candida class from a [1,2] logits var (values only).
template <typename T>
T candida_score(const Var<T>& logits) {
    T a = logits->value[0], b = logits->value[1];
    T m = std::max(a, b);
    T ea = std::exp(a - m), eb = std::exp(b - m);
    return eb / (ea + eb);
}

// Differentiable candida probability (1-element var).
template <typename T>
Var<T> candida_score_var(const Var<T>& logits) {
    auto probs = softmax_rows(logits);
    return reshape(slice_cols(probs, 1, 1), {1});
}

}  // namespace candida
