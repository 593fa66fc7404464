#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "candida/checkpoint.hpp"
#include "candida/detector.hpp"
#include "candida/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace candida;
namespace fs = std::filesystem;

TEST_CASE("anchor grid layout") {
    AnchorConfig cfg;
    CHECK(cfg.per_cell() == 9);
    auto anchors = build_anchors(128, cfg);
    int expected = 0;
    for (int s : {8, 16, 32}) expected += (128 / s) * (128 / s) * 9;
    CHECK(static_cast<int>(anchors.size()) == expected);
    for (const auto& a : anchors) {
        CHECK(a.w > 0);
        CHECK(a.h > 0);
    }
}

TEST_CASE("assignment threshold rules") {
    // Anchor A matches the gt box exactly; anchor B overlaps with controlled IoU.
    std::vector<Box> gt = {{0, 0, 10, 3}};
    std::vector<Anchor> anchors = {
        {5, 1.5, 10, 3},  // IoU 1.0 with gt
        {5, 5, 10, 10},   // intersection 30, union 100 -> IoU 0.3
    };
    auto t = assign_anchors(anchors, gt);
    CHECK(t.status[0] == AnchorStatus::positive);
    CHECK(t.status[1] == AnchorStatus::negative);
    CHECK(t.n_positive == 1);
    // Exact-match anchor has all-zero regression offsets.
    for (double o : t.offsets[0]) CHECK(o == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<Box> gt2 = {{0, 0, 10, 4.5}};  // IoU with anchor B = 45/100
    std::vector<Anchor> anchors2 = {{5, 2.25, 10, 4.5}, {5, 5, 10, 10}};
    auto t2 = assign_anchors(anchors2, gt2);
    CHECK(t2.status[1] == AnchorStatus::ignore);
}

TEST_CASE("argmax promotion guarantees every gt a positive anchor") {
    std::vector<Box> gt = {{0, 0, 4, 4}};
    std::vector<Anchor> anchors = {{32, 32, 8, 8}, {3, 3, 8, 8}};  // both IoU < 0.5
    auto t = assign_anchors(anchors, gt);
    CHECK(t.status[1] == AnchorStatus::positive);
    CHECK(t.n_positive >= 1);
}

TEST_CASE("assignment errors") {
    std::vector<Anchor> anchors = {{5, 5, 10, 10}};
    CHECK_THROWS_AS(assign_anchors(anchors, {{0, 0, 5, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(assign_anchors(anchors, {{0, 0, 5, 5}}, 0.3, 0.4),
                    std::invalid_argument);
}

TEST_CASE("assignment matches brute-force oracle") {
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Anchor> anchors;
        int na = 10 + static_cast<int>(rng() % 20);
        for (int i = 0; i < na; ++i)
            anchors.push_back({u(rng), u(rng), 1 + u(rng) / 4, 1 + u(rng) / 4});
        std::vector<Box> gt;
        int ng = 1 + static_cast<int>(rng() % 3);
        for (int g = 0; g < ng; ++g) {
            double x = u(rng), y = u(rng);
            gt.push_back({x, y, x + 1 + u(rng) / 5, y + 1 + u(rng) / 5});
        }
        auto t = assign_anchors(anchors, gt);

        // Independent re-derivation of the assignment rule.
        for (size_t i = 0; i < anchors.size(); ++i) {
            double best = 0;
            int best_g = -1;
            for (size_t g = 0; g < gt.size(); ++g) {
                double v = iou(gt[g], anchors[i]);
                if (v > best) {
                    best = v;
                    best_g = static_cast<int>(g);
                }
            }
            bool is_argmax = false;
            for (size_t g = 0; g < gt.size(); ++g) {
                double top = -1;
                size_t arg = 0;
                for (size_t j = 0; j < anchors.size(); ++j) {
                    double v = iou(gt[g], anchors[j]);
                    if (v > top) {
                        top = v;
                        arg = j;
                    }
                }
                if (arg == i) {
                    is_argmax = true;
                    best_g = static_cast<int>(g);  // promotion reassigns ownership
                    best = top;
                }
            }
            AnchorStatus expect;
            if (is_argmax || best >= 0.5)
                expect = AnchorStatus::positive;
            else if (best < 0.4)
                expect = AnchorStatus::negative;
            else
                expect = AnchorStatus::ignore;
            CHECK(t.status[i] == expect);
            if (expect == AnchorStatus::positive && best_g >= 0) {
                const Box& g = gt[static_cast<size_t>(best_g)];
                const Anchor& a = anchors[i];
                CHECK(t.offsets[i][0] ==
                      doctest::Approx((0.5 * (g.x_min + g.x_max) - a.cx) / a.w).epsilon(1e-9));
                CHECK(t.offsets[i][2] ==
                      doctest::Approx(std::log((g.x_max - g.x_min) / a.w)).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("focal loss closed form") {
    DetectionTargets t;
    t.status = {AnchorStatus::positive};
    t.n_positive = 1;
    // single positive anchor at p = 0.5: 0.25 * 0.25 * ln 2
    double v = focal_loss_value<double>({0.5}, t);
    CHECK(v == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-9));
    CHECK(v == doctest::Approx(0.0433216988).epsilon(1e-7));
}

TEST_CASE("focal loss with gamma 0 equals weighted cross entropy") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    DetectionTargets t;
    std::vector<double> probs;
    for (int i = 0; i < 50; ++i) {
        probs.push_back(u(rng));
        int r = static_cast<int>(rng() % 3);
        t.status.push_back(r == 0 ? AnchorStatus::positive
                                  : (r == 1 ? AnchorStatus::negative : AnchorStatus::ignore));
    }
    double got = focal_loss_value<double>(probs, t, 0.25, 0.0);
    double want = 0;
    int count = 0;
    for (size_t i = 0; i < probs.size(); ++i)
        if (t.status[i] != AnchorStatus::ignore) ++count;
    for (size_t i = 0; i < probs.size(); ++i) {
        if (t.status[i] == AnchorStatus::ignore) continue;
        bool pos = t.status[i] == AnchorStatus::positive;
        double pt = pos ? probs[i] : 1 - probs[i];
        want += -(pos ? 0.25 : 0.75) * std::log(pt + 1e-12) / count;
    }
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("focal loss limits and domain") {
    DetectionTargets t;
    t.status = {AnchorStatus::positive, AnchorStatus::negative};
    t.n_positive = 1;
    CHECK(focal_loss_value<double>({1 - 1e-9, 1e-9}, t) < 1e-15);
    CHECK_THROWS_AS(focal_loss_value<double>({1.0, 0.5}, t), std::invalid_argument);
    CHECK_THROWS_AS(focal_loss_value<double>({0.5, 0.0}, t), std::invalid_argument);
    // monotone decreasing in p_t for a positive anchor
    DetectionTargets one;
    one.status = {AnchorStatus::positive};
    one.n_positive = 1;
    double prev = 1e9;
    for (double p = 0.1; p < 1.0; p += 0.1) {
        double v = focal_loss_value<double>({p}, one);
        CHECK(v > -1e-30);  // the log epsilon can round barely below zero at p ~ 1
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("box loss piecewise values") {
    DetectionTargets t;
    t.status = {AnchorStatus::positive};
    t.offsets = {{0.0, 0.0, 0.0, 0.0}};
    t.n_positive = 1;
    auto loss_for = [&](std::vector<double> pred) {
        return box_loss(constant(Tensor<double>({1, 4}, std::move(pred))), t)->value[0];
    };
    CHECK(loss_for({0, 0, 0, 0}) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(loss_for({0.5, 0, 0, 0}) == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(loss_for({2.0, 0, 0, 0}) == doctest::Approx(1.5).epsilon(1e-12));
    DetectionTargets none;
    none.status = {AnchorStatus::negative};
    CHECK(box_loss(constant(Tensor<double>({1, 4})), none)->value[0] == 0.0);
    CHECK_THROWS_AS(box_loss(constant(Tensor<double>({2, 4})), t), std::invalid_argument);
}

TEST_CASE("detector head shapes match the anchor count") {
    Detector<float> det(ArchConfig::preset("toy"), 11);
    Tensor<float> img({3, 64, 64});
    for (auto& v : img.data) v = 0.5f;
    auto out = det.forward(constant(img));
    auto anchors = build_anchors(64, det.anchor_cfg);
    CHECK(out.cls_logits->value.shape ==
          std::vector<int>{static_cast<int>(anchors.size()), 1});
    CHECK(out.offsets->value.shape == std::vector<int>{static_cast<int>(anchors.size()), 4});
}

TEST_CASE("decode and nms") {
    std::vector<Anchor> anchors = {{10, 10, 8, 8}, {11, 10, 8, 8}, {40, 40, 8, 8}};
    std::vector<float> logits = {3.0f, 2.0f, -3.0f};  // third below threshold
    std::vector<float> offsets(12, 0.0f);
    auto boxes = decode_boxes(anchors, logits, offsets);
    REQUIRE(boxes.size() == 2);
    CHECK(boxes[0].box.x_min == doctest::Approx(6.0));
    auto kept = nms(boxes, 0.5);
    REQUIRE(kept.size() == 1);  // overlapping pair collapses to the higher score
    CHECK(kept[0].score > 0.95);
}

TEST_CASE("overfit: detector loss halves on a tiny set") {
    std::vector<TileSample> train;
    for (int i = 0; i < 10; ++i) {
        auto t = gen_tile(100 + i, i % 2 == 0, StyleParams{}, 64);
        train.push_back({t.tile_id, t.pixels, t.positive ? 1 : 0, t.boxes});
    }
    RunConfig cfg;
    cfg.arch = "toy";
    cfg.tile_size = 64;
    cfg.seed = 1;
    cfg.lr = 1e-3;
    fs::path out = fs::temp_directory_path() / "candida_det_overfit";
    fs::remove_all(out);
    // 10 samples, batch 8 -> 2 steps/epoch; 60 epochs = 120 steps < 200.
    auto res = train_detector(train, cfg, 60, out.string());
    REQUIRE(res.epoch_losses.size() == 60);
    double first = res.epoch_losses.front()[2];
    double last = res.epoch_losses.back()[2];
    CHECK(last < 0.5 * first);
    CHECK(fs::exists(out / "detect_log.csv"));
    fs::remove_all(out);
}

TEST_CASE("detector training is deterministic") {
    std::vector<TileSample> train;
    for (int i = 0; i < 4; ++i) {
        auto t = gen_tile(i, true, StyleParams{}, 64);
        train.push_back({t.tile_id, t.pixels, 1, t.boxes});
    }
    RunConfig cfg;
    cfg.arch = "toy";
    cfg.tile_size = 64;
    cfg.seed = 5;
    fs::path o1 = fs::temp_directory_path() / "candida_det_d1";
    fs::path o2 = fs::temp_directory_path() / "candida_det_d2";
    fs::remove_all(o1);
    fs::remove_all(o2);
    auto r1 = train_detector(train, cfg, 2, o1.string());
    auto r2 = train_detector(train, cfg, 2, o2.string());
    auto c1 = load_checkpoint(r1.encoder_ckpt);
    auto c2 = load_checkpoint(r2.encoder_ckpt);
    REQUIRE(c1.arrays.size() == c2.arrays.size());
    for (size_t i = 0; i < c1.arrays.size(); ++i)
        CHECK(c1.arrays[i].data == c2.arrays[i].data);
    fs::remove_all(o1);
    fs::remove_all(o2);
}

TEST_CASE("dataset without positive boxes rejected") {
    auto t = gen_tile(0, false, StyleParams{}, 64);
    std::vector<TileSample> train = {{t.tile_id, t.pixels, 0, t.boxes}};
    RunConfig cfg;
    cfg.arch = "toy";
    cfg.tile_size = 64;
    CHECK_THROWS_AS(train_detector(train, cfg, 1, "/tmp/candida_unused"),
                    std::invalid_argument);
}
