#pragma once

#include "candida/autograd.hpp"

namespace candida {

// Contrastive attention-guidance objective:
//   L_cl = L_tri + L_am + L_focus
//   L    = L_ce(S(I_aug), labels) + alpha * L_cl
template <typename T>
struct LossBundle {
    T l_tri = 0, l_am = 0, l_focus = 0, l_cl = 0, l_ce = 0, total = 0;
    T alpha = T(0.1);
};

// max(0, ||aug - orig|| - ||aug - masked|| + margin). Anchor is the augmented
// view; the original is attracted, the masked view repelled.
template <typename T>
Var<T> triplet(const Var<T>& f_aug, const Var<T>& f_orig, const Var<T>& f_masked,
               T margin = T(1)) {
    if (!f_aug->value.same_shape(f_orig->value) || !f_aug->value.same_shape(f_masked->value))
        throw std::invalid_argument("triplet: embedding dims differ");
    if (margin < T(0)) throw std::invalid_argument("triplet: margin must be >= 0");
    auto d_pos = l2_norm(sub(f_aug, f_orig));
    auto d_neg = l2_norm(sub(f_aug, f_masked));
    return relu(add_scalar(sub(d_pos, d_neg), margin));
}

template <typename T>
T triplet_value(const std::vector<T>& a, const std::vector<T>& p, const std::vector<T>& n,
                T margin = T(1)) {
    auto va = triplet(constant(Tensor<T>({static_cast<int>(a.size())}, a)),
                      constant(Tensor<T>({static_cast<int>(p.size())}, p)),
                      constant(Tensor<T>({static_cast<int>(n.size())}, n)), margin);
    return va->value[0];
}

// S(I_masked) itself; minimizing it forces the mask to actually remove the
// evidence of candida.
template <typename T>
Var<T> attention_mining(const Var<T>& score_masked) {
    T s = score_masked->value[0];
    if (s < T(0) || s > T(1))
        throw std::invalid_argument("attention_mining: score outside [0,1]");
    return score_masked;
}

// Mean grayscale of the mask, penalizing attention spread.
template <typename T>
Var<T> focus(const Var<T>& M) {
    if (M->value.numel() == 0) throw std::invalid_argument("focus: empty mask");
    return mean_all(M);
}

// Cross-entropy of softmax(logits) vs integer labels; logits [N,2], mean over rows.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    int n = logits->value.dim(0);
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("cross_entropy: label count mismatch");
    Tensor<T> pick({n, 2});
    for (int i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)] != 0 && labels[static_cast<size_t>(i)] != 1)
            throw std::invalid_argument("cross_entropy: label must be 0 or 1");
        pick.at(i, labels[static_cast<size_t>(i)]) = T(-1) / T(n);
    }
    return weighted_sum(log_softmax_rows(logits), std::move(pick));
}

template <typename T>
struct TotalLoss {
    Var<T> l_ce, l_tri, l_am, l_focus, l_cl, total;

    LossBundle<T> values(T alpha) const {
        LossBundle<T> b;
        b.alpha = alpha;
        b.l_ce = l_ce->value[0];
        b.l_tri = l_tri->value[0];
        b.l_am = l_am->value[0];
        b.l_focus = l_focus->value[0];
        b.l_cl = l_cl->value[0];
        b.total = total->value[0];
        return b;
    }
};

// Assembles L = L_ce + alpha * (L_tri + L_am + L_focus) as one graph.
template <typename T>
TotalLoss<T> total_loss(const Var<T>& logits_aug, const std::vector<int>& labels,
                        const Var<T>& l_tri, const Var<T>& l_am, const Var<T>& l_focus,
                        T alpha = T(0.1)) {
    TotalLoss<T> out;
    out.l_ce = cross_entropy(logits_aug, labels);
    out.l_tri = l_tri;
    out.l_am = l_am;
    out.l_focus = l_focus;
    out.l_cl = add(add(l_tri, l_am), l_focus);
    out.total = add(out.l_ce, scale(out.l_cl, alpha));
    return out;
}

}  // namespace candida
