#include "candida/trainer.hpp"

#include "candida/checkpoint.hpp"
#include "candida/optim.hpp"
#include "candida/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace fs = std::filesystem;

namespace candida {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

CheckpointData merge(CheckpointData a, CheckpointData b) {
    for (auto& arr : b.arrays) a.arrays.push_back(std::move(arr));
    return a;
}

uint32_t seed32(int64_t s, uint32_t salt) {
    return static_cast<uint32_t>((static_cast<uint64_t>(s) * 0x9E3779B9u) ^ salt);
}

}  // namespace

std::vector<TileSample> load_tile_dataset(const std::string& dir) {
    auto records = load_annotations((fs::path(dir) / "annotations.csv").string());
    std::vector<TileSample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        TileSample s;
        s.id = r.tile_id;
        s.label = r.positive ? 1 : 0;
        s.boxes = r.boxes;
        s.image = load_image((fs::path(dir) / "tiles" / (r.tile_id + ".png")).string());
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

// k in [0,8): rotation by 90*(k%4) degrees, mirrored horizontally if k >= 4.
// Square [3,S,S] tiles only; used to break layout memorization in training.
Tensor<float> dihedral(const Tensor<float>& img, int k) {
    int S = img.dim(1);
    Tensor<float> out(img.shape);
    int rot = k % 4;
    bool flip = k >= 4;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                int sx = flip ? S - 1 - x : x;
                int sy = y;
                for (int r = 0; r < rot; ++r) {
                    int ny = sx;
                    int nx = S - 1 - sy;
                    sy = ny;
                    sx = nx;
                }
                out.at(c, y, x) = img.at(c, sy, sx);
            }
    return out;
}

}  // namespace

Tensor<float> augment_photometric(std::mt19937_64& rng, const Tensor<float>& img) {
    std::uniform_real_distribution<double> u(0, 1);
    // spans the slide-style distribution so the classifier cannot key on the
    // per-tile photometric style
    double brightness = 0.80 + 0.40 * u(rng);
    double contrast = 0.70 + 0.60 * u(rng);
    double hue = (-0.10 + 0.20 * u(rng)) * 2 * M_PI;
    double noise_std = 0.02 * u(rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double ca = std::cos(hue), sa = std::sin(hue);
    int64_t hw = static_cast<int64_t>(img.dim(1)) * img.dim(2);
    Tensor<float> out(img.shape);
    for (int64_t i = 0; i < hw; ++i) {
        double r = img[i], g = img[hw + i], b = img[2 * hw + i];
        double y = 0.299 * r + 0.587 * g + 0.114 * b;
        double iq = 0.596 * r - 0.274 * g - 0.322 * b;
        double q = 0.211 * r - 0.523 * g + 0.312 * b;
        double i2 = iq * ca - q * sa, q2 = iq * sa + q * ca;
        double rgb[3] = {y + 0.956 * i2 + 0.621 * q2, y - 0.272 * i2 - 0.647 * q2,
                         y - 1.106 * i2 + 1.703 * q2};
        for (int c = 0; c < 3; ++c) {
            double v = (rgb[c] - 0.5) * contrast + 0.5;
            v = v * brightness + noise_std * gauss(rng);
            out[c * hw + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

DetectorTrainResult train_detector(const std::vector<TileSample>& train,
                                   const RunConfig& config, int epochs,
                                   const std::string& out_dir) {
    bool any_box = false;
    for (const auto& s : train) any_box |= !s.boxes.empty();
    if (!any_box)
        throw std::invalid_argument("train_detector: dataset has no positive boxes");
    fs::create_directories(out_dir);

    ArchConfig arch = ArchConfig::preset(config.arch);
    Detector<float> det(arch, seed32(config.seed, 0xD37));
    auto anchors = build_anchors(config.tile_size, det.anchor_cfg);
    std::vector<DetectionTargets> targets;
    targets.reserve(train.size());
    for (const auto& s : train) targets.push_back(assign_anchors(anchors, s.boxes));

    Adam<float> opt(det.ps, static_cast<float>(config.lr));
    std::mt19937_64 rng(seed32(config.seed, 0x5EED));
    std::vector<size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);

    DetectorTrainResult res;
    std::string log = "epoch,focal,box,total\n";
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(idx.begin(), idx.end(), rng);
        double sum_f = 0, sum_b = 0;
        for (size_t start = 0; start < idx.size(); start += config.batch_detect) {
            size_t end = std::min(idx.size(), start + config.batch_detect);
            opt.zero_grad();
            for (size_t i = start; i < end; ++i) {
                const auto& s = train[idx[i]];
                auto outs = det.forward(constant(s.image));
                int a = outs.cls_logits->value.dim(0);
                // Squeeze into (eps, 1-eps) so float sigmoid saturation can
                // never trip the focal-loss domain check.
                constexpr float eps = 1e-6f;
                auto probs = add_scalar(
                    scale(sigmoid(reshape(outs.cls_logits, {a})), 1.0f - 2 * eps), eps);
                auto lf = focal_loss(probs, targets[idx[i]]);
                auto lb = box_loss(outs.offsets, targets[idx[i]]);
                sum_f += lf->value[0];
                sum_b += lb->value[0];
                backward(scale(add(lf, lb), 1.0f / static_cast<float>(end - start)));
            }
            opt.step();
        }
        double mf = sum_f / static_cast<double>(train.size());
        double mb = sum_b / static_cast<double>(train.size());
        res.epoch_losses.push_back({mf, mb, mf + mb});
        log += std::to_string(e) + "," + fmt(mf) + "," + fmt(mb) + "," + fmt(mf + mb) + "\n";
    }
    std::ofstream lf(fs::path(out_dir) / "detect_log.csv", std::ios::binary);
    lf << log;

    nlohmann::json meta = {{"kind", "detector_encoder"},
                           {"arch", arch.id},
                           {"tile_size", config.tile_size},
                           {"seed", config.seed}};
    auto enc = merge(snapshot(det.ps, meta, "stem."), snapshot(det.ps, meta, "stage"));
    enc.meta = meta;
    res.encoder_ckpt = (fs::path(out_dir) / "detector_encoder.ckpt").string();
    save_checkpoint(res.encoder_ckpt, enc);
    nlohmann::json hmeta = meta;
    hmeta["kind"] = "detector_head";
    auto head = merge(snapshot(det.ps, hmeta, "fpn."), snapshot(det.ps, hmeta, "det."));
    head.meta = hmeta;
    res.head_ckpt = (fs::path(out_dir) / "detector_head.ckpt").string();
    save_checkpoint(res.head_ckpt, head);
    return res;
}

std::unique_ptr<TileNet<float>> make_tile_net(const RunConfig& config) {
    return std::make_unique<TileNet<float>>(ArchConfig::preset(config.arch), config.tile_size,
                                            config.ssa, seed32(config.seed, 0x71E));
}

void save_tile_net(const TileNet<float>& net, const RunConfig& config,
                   const std::string& path) {
    nlohmann::json meta = {{"kind", "tile"},
                           {"arch", net.arch.id},
                           {"tile_size", net.tile_size},
                           {"ssa", net.use_ssa},
                           {"seed", config.seed}};
    save_checkpoint(path, snapshot(net.ps, meta));
}

std::unique_ptr<TileNet<float>> load_tile_net(const std::string& ckpt_path) {
    auto ckpt = load_checkpoint(ckpt_path);
    if (ckpt.meta.value("kind", "") != "tile")
        throw std::runtime_error("load_tile_net: not a tile checkpoint: " + ckpt_path);
    auto net = std::make_unique<TileNet<float>>(
        ArchConfig::preset(ckpt.meta.at("arch").get<std::string>()),
        ckpt.meta.at("tile_size").get<int>(), ckpt.meta.at("ssa").get<bool>(), 0);
    restore(net->ps, ckpt);
    return net;
}

namespace {

// One guidance step for a single tile; returns the loss graph.
TotalLoss<float> guidance_losses(const TileNet<float>& net, const Tensor<float>& image,
                                 const Tensor<float>& image_aug, int label,
                                 const RunConfig& cfg) {
    auto fwd_aug = net.forward(image_aug);
    Var<float> l_tri, l_am, l_focus;
    if (cfg.cl) {
        int H = image.dim(1), W = image.dim(2);
        auto A = extract_attention(fwd_aug, net.fc, H, W);
        auto M = normalize_mask(A, static_cast<float>(cfg.mask_sigma),
                                static_cast<float>(cfg.mask_s));
        auto masked = apply_mask(image, M,
                                 cfg.literal_mask ? MaskMode::literal : MaskMode::soft_removal);
        auto fwd_orig = net.forward(image);
        auto fwd_masked = net.forward(masked);
        auto norm = [](const Var<float>& v) { return div_by(v, l2_norm(v)); };
        l_tri = triplet(norm(fwd_aug.embedding), norm(fwd_orig.embedding),
                        norm(fwd_masked.embedding), static_cast<float>(cfg.margin));
        l_am = attention_mining(candida_score_var(fwd_masked.logits));
        l_focus = focus(M);
    } else {
        l_tri = constant(Tensor<float>::scalar(0.0f));
        l_am = constant(Tensor<float>::scalar(0.0f));
        l_focus = constant(Tensor<float>::scalar(0.0f));
    }
    return total_loss(fwd_aug.logits, {label}, l_tri, l_am, l_focus,
                      cfg.cl ? static_cast<float>(cfg.alpha) : 0.0f);
}

struct ValMetrics {
    double ce = 0, auc = 0;
};

ValMetrics validate_tiles(const TileNet<float>& net, const std::vector<TileSample>& val) {
    ValMetrics m;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& s : val) {
        auto fwd = net.forward(s.image);
        auto ce = cross_entropy(fwd.logits, {s.label});
        m.ce += ce->value[0];
        scores.push_back(candida_score(fwd.logits));
        labels.push_back(s.label);
    }
    m.ce /= static_cast<double>(val.size());
    bool has_both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                    std::count(labels.begin(), labels.end(), 0) > 0;
    m.auc = has_both ? evaluate(scores, labels).auc : 0.0;
    return m;
}

}  // namespace

TileTrainResult train_tile_classifier(const std::vector<TileSample>& train,
                                      const std::vector<TileSample>& val,
                                      const RunConfig& config,
                                      const std::string& detector_ckpt,
                                      const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto net = make_tile_net(config);
    if (config.pt) {
        if (detector_ckpt.empty() || !fs::exists(detector_ckpt))
            throw std::runtime_error(
                "train_tile_classifier: PT enabled but detector checkpoint missing: " +
                detector_ckpt);
        auto ckpt = load_checkpoint(detector_ckpt);
        restore(net->ps, ckpt, "stem.");
        restore(net->ps, ckpt, "stage");
        freeze_prefix(net->ps, config.freeze_stages);
    }
    Adam<float> opt(net->ps, static_cast<float>(config.lr));
    std::mt19937_64 rng(seed32(config.seed, 0xA46));
    std::vector<size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);

    TileTrainResult res;
    std::string train_log = "step,l_ce,l_tri,l_am,l_focus,total\n";
    std::string val_log = "epoch,ce,auc\n";
    CheckpointData best;
    double best_auc = -1;
    int64_t step = 0;
    for (int e = 0; e < config.epochs; ++e) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (size_t start = 0; start < idx.size(); start += config.batch_tile) {
            size_t end = std::min(idx.size(), start + config.batch_tile);
            opt.zero_grad();
            LossBundle<float> acc;
            for (size_t i = start; i < end; ++i) {
                const auto& s = train[idx[i]];
                // one dihedral transform for the whole triple keeps the mask
                // computed on the augmented view aligned with the original
                Tensor<float> orig = dihedral(s.image, static_cast<int>(rng() % 8));
                Tensor<float> aug = augment_photometric(rng, orig);
                auto tl = guidance_losses(*net, orig, aug, s.label, config);
                auto b = tl.values(static_cast<float>(config.alpha));
                acc.l_ce += b.l_ce;
                acc.l_tri += b.l_tri;
                acc.l_am += b.l_am;
                acc.l_focus += b.l_focus;
                acc.total += b.total;
                backward(scale(tl.total, 1.0f / static_cast<float>(end - start)));
            }
            opt.step();
            float n = static_cast<float>(end - start);
            train_log += std::to_string(step++) + "," + fmt(acc.l_ce / n) + "," +
                         fmt(acc.l_tri / n) + "," + fmt(acc.l_am / n) + "," +
                         fmt(acc.l_focus / n) + "," + fmt(acc.total / n) + "\n";
        }
        if (!val.empty()) {
            auto vm = validate_tiles(*net, val);
            if (e == 0) res.first_val_ce = vm.ce;
            res.last_val_ce = vm.ce;
            val_log += std::to_string(e) + "," + fmt(vm.ce) + "," + fmt(vm.auc) + "\n";
            if (vm.auc > best_auc) {
                best_auc = vm.auc;
                best = snapshot(net->ps, nlohmann::json::object());
            }
        }
    }
    if (best_auc >= 0) {
        restore(net->ps, best);
        res.best_val_auc = best_auc;
    }
    std::ofstream tf(fs::path(out_dir) / "train_log.csv", std::ios::binary);
    tf << train_log;
    if (!val.empty()) {
        std::ofstream vf(fs::path(out_dir) / "val_log.csv", std::ios::binary);
        vf << val_log;
    }
    res.ckpt_path = (fs::path(out_dir) / "tile.ckpt").string();
    save_tile_net(*net, config, res.ckpt_path);
    return res;
}

std::vector<TileScore> score_tiles(const TileNet<float>& net,
                                   const std::vector<TileSample>& tiles) {
    std::vector<TileScore> out;
    out.reserve(tiles.size());
    for (const auto& s : tiles) {
        auto fwd = net.forward(s.image);
        TileScore ts;
        ts.score = candida_score(fwd.logits);
        ts.embedding = fwd.embedding->value.data;
        out.push_back(std::move(ts));
    }
    return out;
}

std::string train_wsi(const std::vector<SlideData>& train, const RunConfig& config,
                      const std::string& out_dir) {
    fs::create_directories(out_dir);
    for (const auto& s : train)
        if (s.tiles.empty())
            throw std::invalid_argument("train_wsi: slide with zero tiles: " + s.id);
    int embed_dim = static_cast<int>(train.front().tiles.front().embedding.size());
    WsiAggregator<float> agg(config.k, embed_dim, seed32(config.seed, 0x37A));
    Adam<float> opt(agg.ps, static_cast<float>(config.lr));
    std::mt19937_64 rng(seed32(config.seed, 0xB52));
    std::vector<size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::string log = "epoch,ce\n";
    for (int e = 0; e < config.epochs; ++e) {
        std::shuffle(idx.begin(), idx.end(), rng);
        double sum = 0;
        for (size_t start = 0; start < idx.size(); start += config.batch_wsi) {
            size_t end = std::min(idx.size(), start + config.batch_wsi);
            opt.zero_grad();
            for (size_t i = start; i < end; ++i) {
                const auto& s = train[idx[i]];
                auto topk = rank_topk(s.tiles, config.k, embed_dim);
                auto ce = cross_entropy(agg.forward(topk), {s.label});
                sum += ce->value[0];
                backward(scale(ce, 1.0f / static_cast<float>(end - start)));
            }
            opt.step();
        }
        log += std::to_string(e) + "," + fmt(sum / static_cast<double>(train.size())) + "\n";
    }
    std::ofstream lf(fs::path(out_dir) / "wsi_log.csv", std::ios::binary);
    lf << log;
    nlohmann::json meta = {{"kind", "wsi"},     {"k", agg.k},         {"embed_dim", embed_dim},
                           {"dim", agg.dim},    {"heads", agg.heads}, {"depth", agg.depth},
                           {"seed", config.seed}};
    std::string path = (fs::path(out_dir) / "wsi.ckpt").string();
    save_checkpoint(path, snapshot(agg.ps, meta));
    return path;
}

std::unique_ptr<WsiAggregator<float>> load_wsi_aggregator(const std::string& ckpt_path) {
    auto ckpt = load_checkpoint(ckpt_path);
    if (ckpt.meta.value("kind", "") != "wsi")
        throw std::runtime_error("load_wsi_aggregator: not a wsi checkpoint: " + ckpt_path);
    auto agg = std::make_unique<WsiAggregator<float>>(
        ckpt.meta.at("k").get<int>(), ckpt.meta.at("embed_dim").get<int>(), 0,
        ckpt.meta.at("dim").get<int>(), ckpt.meta.at("heads").get<int>(),
        ckpt.meta.at("depth").get<int>());
    restore(agg->ps, ckpt);
    return agg;
}

std::vector<std::array<bool, 3>> full_ablation_grid() {
    std::vector<std::array<bool, 3>> grid;
    for (int pt = 0; pt <= 1; ++pt)
        for (int ssa = 0; ssa <= 1; ++ssa)
            for (int cl = 0; cl <= 1; ++cl)
                grid.push_back({pt != 0, ssa != 0, cl != 0});
    return grid;
}

std::vector<AblationRow> ablation_harness(const std::vector<TileSample>& samples,
                                          const std::vector<std::array<bool, 3>>& combos,
                                          int n_folds, int n_seeds, const RunConfig& base,
                                          const std::string& work_dir) {
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.label);
    std::vector<AblationRow> rows;
    for (const auto& c : combos) rows.push_back({c[0], c[1], c[2], {}});
    bool needs_pt = false;
    for (const auto& c : combos) needs_pt |= c[0];
    int detect_epochs = std::max(1, base.epochs / 3);

    for (int seed_i = 0; seed_i < n_seeds; ++seed_i) {
        RunConfig cfg = base;
        cfg.seed = base.seed + seed_i;
        auto folds = make_folds(labels, 5, static_cast<uint64_t>(cfg.seed));
        for (int f = 0; f < n_folds; ++f) {
            std::vector<TileSample> train, test;
            for (int i : folds[static_cast<size_t>(f)].train)
                train.push_back(samples[static_cast<size_t>(i)]);
            for (int i : folds[static_cast<size_t>(f)].val)
                train.push_back(samples[static_cast<size_t>(i)]);
            for (int i : folds[static_cast<size_t>(f)].test)
                test.push_back(samples[static_cast<size_t>(i)]);
            std::string tag = "s" + std::to_string(seed_i) + "_f" + std::to_string(f);
            std::string det_ckpt;
            if (needs_pt) {
                RunConfig dcfg = cfg;
                auto det = train_detector(train, dcfg, detect_epochs,
                                          work_dir + "/det_" + tag);
                det_ckpt = det.encoder_ckpt;
            }
            for (size_t ci = 0; ci < combos.size(); ++ci) {
                RunConfig rc = cfg;
                rc.pt = combos[ci][0];
                rc.ssa = combos[ci][1];
                rc.cl = combos[ci][2];
                std::string run_dir = work_dir + "/run_" + tag + "_c" + std::to_string(ci);
                auto tr = train_tile_classifier(train, {}, rc, rc.pt ? det_ckpt : "", run_dir);
                auto net = load_tile_net(tr.ckpt_path);
                std::vector<double> scores;
                std::vector<int> tl;
                for (const auto& s : test) {
                    scores.push_back(candida_score(net->forward(s.image).logits));
                    tl.push_back(s.label);
                }
                rows[ci].runs.push_back(evaluate(scores, tl));
            }
        }
    }
    return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::string csv =
        "pt,ssa,cl,auc_mean,auc_std,acc_mean,acc_std,sen_mean,sen_std,spe_mean,spe_std,"
        "f1_mean,f1_std\n";
    for (const auto& r : rows) {
        auto col = [&](auto get) {
            std::vector<double> xs;
            for (const auto& m : r.runs) xs.push_back(get(m));
            auto ms = mean_std(xs);
            return "," + fmt(ms.mean) + "," + fmt(ms.stddev);
        };
        csv += std::string(r.pt ? "1" : "0") + "," + (r.ssa ? "1" : "0") + "," +
               (r.cl ? "1" : "0") +
               col([](const MetricsReport& m) { return m.auc; }) +
               col([](const MetricsReport& m) { return m.acc; }) +
               col([](const MetricsReport& m) { return m.sen; }) +
               col([](const MetricsReport& m) { return m.spe; }) +
               col([](const MetricsReport& m) { return m.f1; }) + "\n";
    }
    std::ofstream f(path, std::ios::binary);
    f << csv;
}

}  // namespace candida
