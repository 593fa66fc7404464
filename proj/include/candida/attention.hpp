#pragma once

#include "candida/ssa.hpp"

namespace candida {

enum class MaskMode {
    soft_removal,  // I .* (1 - M)
    literal        // I - M (kept for fidelity experiments; may leave [0,1])
};

// Raw attention map: the classifier FC applied to every non-CLS token, candida
// channel reshaped to the token grid and bilinearly upsampled to tile size.
template <typename T>
Var<T> extract_attention(const TileForward<T>& fwd, const Linear<T>& classifier_fc, int out_h,
                         int out_w) {
    if (fwd.grid_h <= 0 || fwd.grid_w <= 0)
        throw std::invalid_argument("extract_attention: tokens carry no grid shape");
    auto token_logits = classifier_fc.forward(fwd.spatial_tokens);  // [N,2]
    auto cand = reshape(slice_cols(token_logits, 1, 1), {fwd.grid_h, fwd.grid_w});
    return bilinear_upsample(cand, out_h, out_w);
}

// M = sigmoid(s * (A - sigma)), elementwise.
template <typename T>
Var<T> normalize_mask(const Var<T>& A, T sigma = T(0.5), T s = T(10)) {
    return sigmoid(scale(add_scalar(A, -sigma), s));
}

// Masked image from image [3,H,W] and mask [H,W].
template <typename T>
Var<T> apply_mask(const Var<T>& image, const Var<T>& M,
                  MaskMode mode = MaskMode::soft_removal) {
    int C = image->value.dim(0), H = image->value.dim(1), W = image->value.dim(2);
    if (M->value.ndim() != 2 || M->value.dim(0) != H || M->value.dim(1) != W)
        throw std::invalid_argument("apply_mask: mask shape must match image spatial dims");
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor<T> v({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i)
            v[c * hw + i] = mode == MaskMode::soft_removal
                                ? image->value[c * hw + i] * (T(1) - M->value[i])
                                : image->value[c * hw + i] - M->value[i];
    return detail::make_op<T>(std::move(v), {image, M}, [image, M, C, hw, mode](Node<T>& n) {
        if (image->requires_grad) {
            image->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int64_t i = 0; i < hw; ++i)
                    image->grad[c * hw + i] +=
                        n.grad[c * hw + i] *
                        (mode == MaskMode::soft_removal ? (T(1) - M->value[i]) : T(1));
        }
        if (M->requires_grad) {
            M->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (int64_t i = 0; i < hw; ++i)
                    M->grad[i] -= n.grad[c * hw + i] *
                                  (mode == MaskMode::soft_removal ? image->value[c * hw + i]
                                                                  : T(1));
        }
    });
}

template <typename T>
Var<T> apply_mask(const Tensor<T>& image, const Var<T>& M,
                  MaskMode mode = MaskMode::soft_removal) {
    return apply_mask(constant(image), M, mode);
}

// Grad-CAM over the last encoder stage: channel weights are the spatial mean
// of d(target logit)/dC4, the weighted sum is rectified, max-normalized and
// upsampled to tile size. Accumulates into parameter grads; callers training
// in the same store should zero grads afterwards.
template <typename T>
Tensor<T> grad_cam(const TileNet<T>& net, const Tensor<T>& tile, int target_class) {
    if (target_class != 0 && target_class != 1)
        throw std::invalid_argument("grad_cam: target class must be 0 or 1");
    auto fwd = net.forward(tile);
    Tensor<T> onehot({1, 2});
    onehot.at(0, target_class) = T(1);
    auto target = weighted_sum(fwd.logits, std::move(onehot));
    backward(target);
    const auto& c4 = fwd.c4->value;
    const auto& g = fwd.c4->grad;
    int C = c4.dim(0), h = c4.dim(1), w = c4.dim(2);
    int64_t hw = static_cast<int64_t>(h) * w;
    Tensor<T> cam({h, w});
    for (int c = 0; c < C; ++c) {
        T wc = 0;
        for (int64_t i = 0; i < hw; ++i) wc += g[c * hw + i];
        wc /= T(hw);
        for (int64_t i = 0; i < hw; ++i) cam[i] += wc * c4[c * hw + i];
    }
    T mx = 0;
    for (auto& x : cam.data) {
        x = std::max(x, T(0));
        mx = std::max(mx, x);
    }
    if (mx > T(0))
        for (auto& x : cam.data) x /= mx;
    return bilinear_resize(cam, tile.dim(1), tile.dim(2));
}

}  // namespace candida
