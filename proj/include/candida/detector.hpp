#pragma once

#include "candida/data_synth.hpp"
#include "candida/encoder.hpp"
#include "candida/ssa.hpp"

#include <array>
#include <cmath>

namespace candida {

// Anchor-based single-class detection over a 3-level feature pyramid
// (strides 8/16/32). Extreme aspect ratios cover the elongated filaments.
struct Anchor {
    double cx, cy, w, h;
};

enum class AnchorStatus { positive, negative, ignore };

struct DetectionTargets {
    std::vector<AnchorStatus> status;
    std::vector<std::array<double, 4>> offsets;  // (dcx, dcy, dlogw, dlogh); positives only
    int n_positive = 0;
};

struct AnchorConfig {
    std::vector<int> strides{8, 16, 32};
    std::vector<double> scales{1.0, 1.2599, 1.5874};
    std::vector<double> ratios{0.2, 1.0, 5.0};  // w/h
    double base_factor = 4.0;                   // base size = base_factor * stride

    int per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
};

// Anchors enumerated level by level, spatial cells row-major, then the
// scale x ratio grid; this matches the head's output flattening.
inline std::vector<Anchor> build_anchors(int image_size, const AnchorConfig& cfg = {}) {
    std::vector<Anchor> anchors;
    for (int stride : cfg.strides) {
        int cells = image_size / stride;
        double base = cfg.base_factor * stride;
        for (int i = 0; i < cells; ++i)
            for (int j = 0; j < cells; ++j)
                for (double s : cfg.scales)
                    for (double r : cfg.ratios) {
                        double size = base * s;
                        anchors.push_back({(j + 0.5) * stride, (i + 0.5) * stride,
                                           size * std::sqrt(r), size / std::sqrt(r)});
                    }
    }
    return anchors;
}

inline double iou(const Box& g, const Anchor& a) {
    double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
    double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    double ix = std::max(0.0, std::min(g.x_max, ax1) - std::max(g.x_min, ax0));
    double iy = std::max(0.0, std::min(g.y_max, ay1) - std::max(g.y_min, ay0));
    double inter = ix * iy;
    double uni = (g.x_max - g.x_min) * (g.y_max - g.y_min) + a.w * a.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

// Max-IoU assignment with argmax promotion: every gt box owns at least its
// best-overlapping anchor.
inline DetectionTargets assign_anchors(const std::vector<Anchor>& anchors,
                                       const std::vector<Box>& gt_boxes, double iou_pos = 0.5,
                                       double iou_neg = 0.4) {
    if (!(iou_neg >= 0 && iou_neg <= iou_pos && iou_pos <= 1))
        throw std::invalid_argument("assign_anchors: need 0 <= iou_neg <= iou_pos <= 1");
    for (const auto& g : gt_boxes)
        if (g.x_max <= g.x_min || g.y_max <= g.y_min)
            throw std::invalid_argument("assign_anchors: degenerate gt box");
    size_t na = anchors.size(), ng = gt_boxes.size();
    DetectionTargets t;
    t.status.assign(na, AnchorStatus::negative);
    t.offsets.assign(na, {0, 0, 0, 0});
    std::vector<double> best_iou(na, 0.0);
    std::vector<int> best_gt(na, -1);
    std::vector<size_t> gt_argmax(ng, 0);
    std::vector<double> gt_best(ng, -1.0);
    for (size_t i = 0; i < na; ++i)
        for (size_t g = 0; g < ng; ++g) {
            double v = iou(gt_boxes[g], anchors[i]);
            if (v > best_iou[i]) {
                best_iou[i] = v;
                best_gt[i] = static_cast<int>(g);
            }
            if (v > gt_best[g]) {
                gt_best[g] = v;
                gt_argmax[g] = i;
            }
        }
    for (size_t i = 0; i < na; ++i) {
        if (best_iou[i] >= iou_pos)
            t.status[i] = AnchorStatus::positive;
        else if (best_iou[i] < iou_neg)
            t.status[i] = AnchorStatus::negative;
        else
            t.status[i] = AnchorStatus::ignore;
    }
    for (size_t g = 0; g < ng; ++g) {
        t.status[gt_argmax[g]] = AnchorStatus::positive;
        best_gt[gt_argmax[g]] = static_cast<int>(g);
    }
    for (size_t i = 0; i < na; ++i) {
        if (t.status[i] != AnchorStatus::positive) continue;
        ++t.n_positive;
        const Box& g = gt_boxes[static_cast<size_t>(best_gt[i])];
        const Anchor& a = anchors[i];
        double gcx = 0.5 * (g.x_min + g.x_max), gcy = 0.5 * (g.y_min + g.y_max);
        double gw = g.x_max - g.x_min, gh = g.y_max - g.y_min;
        t.offsets[i] = {(gcx - a.cx) / a.w, (gcy - a.cy) / a.h, std::log(gw / a.w),
                        std::log(gh / a.h)};
    }
    return t;
}

// mean over non-ignored anchors of -alpha_t (1 - p_t)^gamma log p_t
template <typename T>
Var<T> focal_loss(const Var<T>& pred_prob, const DetectionTargets& targets, T alpha = T(0.25),
                  T gamma = T(2.0)) {
    int64_t n = pred_prob->value.numel();
    if (static_cast<size_t>(n) != targets.status.size())
        throw std::invalid_argument("focal_loss: anchor count mismatch");
    for (int64_t i = 0; i < n; ++i) {
        T p = pred_prob->value[i];
        if (!(p > T(0) && p < T(1)))
            throw std::invalid_argument("focal_loss: probability outside (0,1)");
    }
    Tensor<T> y({static_cast<int>(n)});
    Tensor<T> w({static_cast<int>(n)});
    int64_t count = 0;
    for (int64_t i = 0; i < n; ++i)
        if (targets.status[static_cast<size_t>(i)] != AnchorStatus::ignore) ++count;
    if (count == 0) return constant(Tensor<T>::scalar(T(0)));
    for (int64_t i = 0; i < n; ++i) {
        bool pos = targets.status[static_cast<size_t>(i)] == AnchorStatus::positive;
        bool incl = targets.status[static_cast<size_t>(i)] != AnchorStatus::ignore;
        y[i] = pos ? T(1) : T(0);
        T at = pos ? alpha : T(1) - alpha;
        w[i] = incl ? -at / T(count) : T(0);
    }
    auto yc = constant(y);
    auto one_minus_y = add_scalar(neg(yc), T(1));
    // p_t = p*y + (1-p)*(1-y)
    auto pt = add(mul(pred_prob, yc), mul(add_scalar(neg(pred_prob), T(1)), one_minus_y));
    auto modulator = pow_scalar(add_scalar(neg(pt), T(1)), gamma);
    auto term = mul(modulator, log_op(add_scalar(pt, T(1e-12))));
    return weighted_sum(term, std::move(w));
}

template <typename T>
T focal_loss_value(const std::vector<T>& probs, const DetectionTargets& targets,
                   T alpha = T(0.25), T gamma = T(2.0)) {
    auto v = focal_loss(constant(Tensor<T>({static_cast<int>(probs.size())}, probs)), targets,
                        alpha, gamma);
    return v->value[0];
}

// smooth-L1 summed over the 4 offsets, averaged over positive anchors
template <typename T>
Var<T> box_loss(const Var<T>& pred_offsets, const DetectionTargets& targets) {
    int n = pred_offsets->value.dim(0);
    if (static_cast<size_t>(n) != targets.status.size() || pred_offsets->value.dim(1) != 4)
        throw std::invalid_argument("box_loss: shape mismatch");
    if (targets.n_positive == 0) return constant(Tensor<T>::scalar(T(0)));
    Tensor<T> tgt({n, 4});
    Tensor<T> w({n, 4});
    for (int i = 0; i < n; ++i) {
        if (targets.status[static_cast<size_t>(i)] != AnchorStatus::positive) continue;
        for (int k = 0; k < 4; ++k) {
            tgt.at(i, k) = static_cast<T>(targets.offsets[static_cast<size_t>(i)][static_cast<size_t>(k)]);
            w.at(i, k) = T(1) / T(targets.n_positive);
        }
    }
    return weighted_sum(smooth_l1(sub(pred_offsets, constant(tgt))), std::move(w));
}

// Detection network: shared encoder, top-down pyramid over C2-C4, one conv
// tower and twin cls/reg heads shared across levels.
template <typename T>
struct DetectorOutputs {
    Var<T> cls_logits;  // [A, 1]
    Var<T> offsets;     // [A, 4]
};

// 2x nearest-neighbor upsample on [C,H,W], for the top-down pathway
template <typename T>
Var<T> upsample2x_nearest(const Var<T>& x) {
    int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    Tensor<T> v({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < 2 * H; ++i)
            for (int j = 0; j < 2 * W; ++j) v.at(c, i, j) = x->value.at(c, i / 2, j / 2);
    return detail::make_op<T>(std::move(v), {x}, [x, C, H, W](Node<T>& n) {
        x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < 2 * H; ++i)
                for (int j = 0; j < 2 * W; ++j)
                    x->grad.at(c, i / 2, j / 2) += n.grad.at(c, i, j);
    });
}

template <typename T>
struct Detector {
    ArchConfig arch;
    AnchorConfig anchor_cfg;
    ParamStore<T> ps;
    Encoder<T> encoder;
    Conv2d<T> lat2, lat3, lat4, smooth2, smooth3;
    Conv2d<T> tower, cls_head, reg_head;

    Detector(const ArchConfig& arch_, uint32_t seed) : arch(arch_), ps(seed) {
        encoder = Encoder<T>(ps, arch);
        int d = arch.fpn_dim;
        lat2 = Conv2d<T>(ps, "fpn.lat2", arch.widths[1], d, 1, 1, 0);
        lat3 = Conv2d<T>(ps, "fpn.lat3", arch.widths[2], d, 1, 1, 0);
        lat4 = Conv2d<T>(ps, "fpn.lat4", arch.widths[3], d, 1, 1, 0);
        smooth2 = Conv2d<T>(ps, "fpn.smooth2", d, d, 3, 1, 1);
        smooth3 = Conv2d<T>(ps, "fpn.smooth3", d, d, 3, 1, 1);
        int a = anchor_cfg.per_cell();
        tower = Conv2d<T>(ps, "det.tower", d, d, 3, 1, 1);
        cls_head = Conv2d<T>(ps, "det.cls", d, a, 3, 1, 1);
        reg_head = Conv2d<T>(ps, "det.reg", d, 4 * a, 3, 1, 1);
        // Small final-layer weights and a low-prior classification bias keep
        // the initial per-anchor probabilities near 0.01 instead of saturating.
        for (auto& w : cls_head.W->value.data) w *= T(0.01);
        for (auto& w : reg_head.W->value.data) w *= T(0.01);
        T prior = T(0.01);
        std::fill(cls_head.b->value.data.begin(), cls_head.b->value.data.end(),
                  std::log(prior / (T(1) - prior)));
    }

    DetectorOutputs<T> forward(const Var<T>& image) const {
        auto f = encoder.forward(image);
        auto p4 = lat4.forward(f.c4);
        auto p3 = smooth3.forward(add(lat3.forward(f.c3), upsample2x_nearest(p4)));
        auto p2 = smooth2.forward(add(lat2.forward(f.c2), upsample2x_nearest(p3)));
        int a = anchor_cfg.per_cell();
        std::vector<Var<T>> cls_parts, reg_parts;
        for (const auto& p : {p2, p3, p4}) {
            auto h = relu(tower.forward(p));
            auto cls = tokens_from_grid(cls_head.forward(h));  // [HW, a]
            auto reg = tokens_from_grid(reg_head.forward(h));  // [HW, 4a]
            int hw = cls->value.dim(0);
            cls_parts.push_back(reshape(cls, {hw * a, 1}));
            reg_parts.push_back(reshape(reg, {hw * a, 4}));
        }
        return {concat_rows(cls_parts), concat_rows(reg_parts)};
    }
};

// Inference-time decoding for the detection-and-threshold baseline.
struct ScoredBox {
    Box box;
    double score;
};

inline std::vector<ScoredBox> decode_boxes(const std::vector<Anchor>& anchors,
                                           const std::vector<float>& cls_logits,
                                           const std::vector<float>& offsets,
                                           double score_thresh = 0.5) {
    std::vector<ScoredBox> out;
    for (size_t i = 0; i < anchors.size(); ++i) {
        double p = 1.0 / (1.0 + std::exp(-static_cast<double>(cls_logits[i])));
        if (p < score_thresh) continue;
        const Anchor& a = anchors[i];
        double cx = a.cx + offsets[4 * i + 0] * a.w;
        double cy = a.cy + offsets[4 * i + 1] * a.h;
        double w = a.w * std::exp(static_cast<double>(offsets[4 * i + 2]));
        double h = a.h * std::exp(static_cast<double>(offsets[4 * i + 3]));
        out.push_back({{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, p});
    }
    return out;
}

inline double box_iou(const Box& a, const Box& b) {
    double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    double inter = ix * iy;
    double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) +
                 (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

inline std::vector<ScoredBox> nms(std::vector<ScoredBox> boxes, double iou_thresh = 0.5) {
    std::stable_sort(boxes.begin(), boxes.end(),
                     [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    std::vector<ScoredBox> keep;
    for (const auto& c : boxes) {
        bool suppressed = false;
        for (const auto& k : keep)
            if (box_iou(c.box, k.box) >= iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) keep.push_back(c);
    }
    return keep;
}

}  // namespace candida
