#pragma once

#include "candida/autograd.hpp"

#include <cmath>
#include <map>
#include <random>
#include <string>

namespace candida {

// Named parameter registry. Modules register their leaves here so checkpoints,
// the optimizer, and freezing all see the same flat view.
template <typename T>
struct ParamStore {
    std::map<std::string, Var<T>> params;  // ordered, stable iteration
    std::mt19937 rng;

    explicit ParamStore(uint32_t seed = 0) : rng(seed) {}

    Var<T> create(const std::string& name, std::vector<int> shape, T init_std) {
        Tensor<T> t(shape);
        if (init_std > T(0)) {
            std::normal_distribution<double> d(0.0, static_cast<double>(init_std));
            for (auto& x : t.data) x = static_cast<T>(d(rng));
        }
        auto p = parameter(std::move(t));
        if (params.count(name)) throw std::runtime_error("duplicate parameter: " + name);
        params[name] = p;
        return p;
    }
    Var<T> create_const(const std::string& name, std::vector<int> shape, T fill) {
        Tensor<T> t = Tensor<T>::full(shape, fill);
        auto p = parameter(std::move(t));
        if (params.count(name)) throw std::runtime_error("duplicate parameter: " + name);
        params[name] = p;
        return p;
    }

    void zero_grad() {
        for (auto& [k, p] : params)
            if (!p->grad.data.empty())
                std::fill(p->grad.data.begin(), p->grad.data.end(), T(0));
    }

    int64_t numel() const {
        int64_t n = 0;
        for (auto& [k, p] : params) n += p->value.numel();
        return n;
    }
};

template <typename T>
struct Linear {
    Var<T> W, b;
    int in = 0, out = 0;

    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& name, int in_, int out_) : in(in_), out(out_) {
        T std = static_cast<T>(std::sqrt(2.0 / (in + out)));
        W = ps.create(name + ".W", {in, out}, std);
        b = ps.create_const(name + ".b", {out}, T(0));
    }
    // x: [N,in] -> [N,out]
    Var<T> forward(const Var<T>& x) const { return add_rowvec(matmul(x, W), b); }
};

template <typename T>
struct Conv2d {
    Var<T> W, b;
    int stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(ParamStore<T>& ps, const std::string& name, int ci, int co, int k, int stride_,
           int pad_)
        : stride(stride_), pad(pad_) {
        T std = static_cast<T>(std::sqrt(2.0 / (ci * k * k)));
        W = ps.create(name + ".W", {co, ci, k, k}, std);
        b = ps.create_const(name + ".b", {co}, T(0));
    }
    Var<T> forward(const Var<T>& x) const { return conv2d(x, W, b, stride, pad); }
};

template <typename T>
struct GroupNorm {
    Var<T> gamma, beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(ParamStore<T>& ps, const std::string& name, int channels, int groups_)
        : groups(groups_) {
        gamma = ps.create_const(name + ".gamma", {channels}, T(1));
        beta = ps.create_const(name + ".beta", {channels}, T(0));
    }
    Var<T> forward(const Var<T>& x) const { return group_norm(x, gamma, beta, groups); }
};

template <typename T>
struct LayerNorm {
    Var<T> gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& ps, const std::string& name, int dim) {
        gamma = ps.create_const(name + ".gamma", {dim}, T(1));
        beta = ps.create_const(name + ".beta", {dim}, T(0));
    }
    Var<T> forward(const Var<T>& x) const { return layer_norm_rows(x, gamma, beta); }
};

// Multi-head attention over row-token matrices. An optional additive key mask
// (0 for live keys, large negative for padded) is applied before softmax.
template <typename T>
struct MultiHeadAttention {
    Linear<T> q, k, v, o;
    int heads = 1, dim = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<T>& ps, const std::string& name, int dim_, int heads_)
        : heads(heads_), dim(dim_) {
        if (dim_ % heads_ != 0) throw std::invalid_argument("mha: dim % heads != 0");
        q = Linear<T>(ps, name + ".q", dim_, dim_);
        k = Linear<T>(ps, name + ".k", dim_, dim_);
        v = Linear<T>(ps, name + ".v", dim_, dim_);
        o = Linear<T>(ps, name + ".o", dim_, dim_);
    }

    Var<T> forward(const Var<T>& x_q, const Var<T>& x_kv,
                   const Tensor<T>* key_mask = nullptr) const {
        int dh = dim / heads;
        auto Q = q.forward(x_q);
        auto K = k.forward(x_kv);
        auto V = v.forward(x_kv);
        std::vector<Var<T>> outs;
        T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        for (int h = 0; h < heads; ++h) {
            auto Qh = slice_cols(Q, h * dh, dh);
            auto Kh = slice_cols(K, h * dh, dh);
            auto Vh = slice_cols(V, h * dh, dh);
            auto scores = scale(matmul(Qh, transpose2d(Kh)), inv);
            if (key_mask) {
                int nq = scores->value.dim(0), nk = scores->value.dim(1);
                Tensor<T> m({nq, nk});
                for (int i = 0; i < nq; ++i)
                    for (int j = 0; j < nk; ++j) m.at(i, j) = (*key_mask)[j];
                scores = add_const(scores, std::move(m));
            }
            outs.push_back(matmul(softmax_rows(scores), Vh));
        }
        return o.forward(concat_cols(outs));
    }
};

// Pre-norm transformer decoder block: self-attention, cross-attention, FFN.
template <typename T>
struct DecoderBlock {
    LayerNorm<T> ln1, ln2, ln3;
    MultiHeadAttention<T> self_attn, cross_attn;
    Linear<T> ff1, ff2;

    DecoderBlock() = default;
    DecoderBlock(ParamStore<T>& ps, const std::string& name, int dim, int heads, int ff_dim) {
        ln1 = LayerNorm<T>(ps, name + ".ln1", dim);
        ln2 = LayerNorm<T>(ps, name + ".ln2", dim);
        ln3 = LayerNorm<T>(ps, name + ".ln3", dim);
        self_attn = MultiHeadAttention<T>(ps, name + ".self", dim, heads);
        cross_attn = MultiHeadAttention<T>(ps, name + ".cross", dim, heads);
        ff1 = Linear<T>(ps, name + ".ff1", dim, ff_dim);
        ff2 = Linear<T>(ps, name + ".ff2", ff_dim, dim);
    }

    Var<T> forward(const Var<T>& x, const Var<T>& kv) const {
        auto h1 = ln1.forward(x);
        auto x1 = add(x, self_attn.forward(h1, h1));
        auto x2 = add(x1, cross_attn.forward(ln2.forward(x1), kv));
        return add(x2, ff2.forward(relu(ff1.forward(ln3.forward(x2)))));
    }
};

// Pre-norm transformer encoder block with optional key masking.
template <typename T>
struct EncoderBlock {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    Linear<T> ff1, ff2;

    EncoderBlock() = default;
    EncoderBlock(ParamStore<T>& ps, const std::string& name, int dim, int heads, int ff_dim) {
        ln1 = LayerNorm<T>(ps, name + ".ln1", dim);
        ln2 = LayerNorm<T>(ps, name + ".ln2", dim);
        attn = MultiHeadAttention<T>(ps, name + ".attn", dim, heads);
        ff1 = Linear<T>(ps, name + ".ff1", dim, ff_dim);
        ff2 = Linear<T>(ps, name + ".ff2", ff_dim, dim);
    }

    Var<T> forward(const Var<T>& x, const Tensor<T>* key_mask = nullptr) const {
        auto h = ln1.forward(x);
        auto x1 = add(x, attn.forward(h, h, key_mask));
        return add(x1, ff2.forward(relu(ff1.forward(ln2.forward(x1)))));
    }
};

}  // namespace candida
