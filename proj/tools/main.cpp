#include "candida/aggregator.hpp"
#include "candida/attention.hpp"
#include "candida/checkpoint.hpp"
#include "candida/config.hpp"
#include "candida/data_synth.hpp"
#include "candida/metrics.hpp"
#include "candida/tiling.hpp"
#include "candida/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using candida::RunConfig;

namespace {

constexpr const char* kVersion = "candiscreen 1.0.0";

// Flag state shared by the training/eval verbs; RunConfig is assembled after
// parsing so explicit flags override the config file.
struct Common {
    std::string config_path, out, ckpt, data;
    int64_t seed = 0;
    int k = 10;
    double alpha = 0.1;
    int epochs = -1;
    bool pt = true, ssa = true, cl = true;
    CLI::Option *o_seed = nullptr, *o_k = nullptr, *o_alpha = nullptr, *o_epochs = nullptr,
                *o_pt = nullptr, *o_ssa = nullptr, *o_cl = nullptr;

    void attach(CLI::App* app, bool need_data, bool need_out, bool need_ckpt) {
        app->add_option("--config", config_path, "key = value config file");
        auto* od = app->add_option("--data", data, "dataset directory");
        auto* oo = app->add_option("--out", out, "output directory");
        auto* oc = app->add_option("--ckpt", ckpt, "checkpoint path");
        if (need_data) od->required();
        if (need_out) oo->required();
        if (need_ckpt) oc->required();
        o_seed = app->add_option("--seed", seed, "random seed");
        o_k = app->add_option("--k", k, "top-k tiles per slide");
        o_alpha = app->add_option("--alpha", alpha, "guidance loss weight");
        o_epochs = app->add_option("--epochs", epochs, "training epochs");
        o_pt = app->add_flag("--pt,!--no-pt", pt, "detection pre-training");
        o_ssa = app->add_flag("--ssa,!--no-ssa", ssa, "skip self-attention head");
        o_cl = app->add_flag("--cl,!--no-cl", cl, "contrastive attention guidance");
    }

    RunConfig config() const {
        RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
        if (o_seed->count()) c.seed = seed;
        if (o_k->count()) c.k = k;
        if (o_alpha->count()) c.alpha = alpha;
        if (o_epochs->count()) c.epochs = epochs;
        if (o_pt->count()) c.pt = pt;
        if (o_ssa->count()) c.ssa = ssa;
        if (o_cl->count()) c.cl = cl;
        return c;
    }
};

void write_manifest(const std::string& out_dir, const std::string& verb,
                    const RunConfig& cfg, const std::vector<std::string>& argv_echo) {
    fs::create_directories(out_dir);
    auto now = std::chrono::system_clock::now().time_since_epoch();
    nlohmann::json m = {
        {"verb", verb},
        {"version", kVersion},
        {"timestamp_unix_ms",
         std::chrono::duration_cast<std::chrono::milliseconds>(now).count()},
        {"argv", argv_echo},
        {"config_toml", cfg.to_toml()},
    };
    std::ofstream f(fs::path(out_dir) / "run_manifest.json", std::ios::binary);
    f << m.dump(2) << "\n";
}

std::vector<candida::SlideData> load_slides(const std::string& data_dir,
                                            const candida::TileNet<float>& net) {
    std::vector<candida::SlideData> slides;
    for (const auto& path : candida::list_slide_manifests(data_dir)) {
        auto man = candida::load_slide_manifest(path);
        candida::SlideData sd;
        sd.id = man.slide_id;
        sd.label = man.positive ? 1 : 0;
        std::vector<candida::TileSample> tiles;
        for (const auto& tid : man.tile_ids) {
            candida::TileSample ts;
            ts.id = tid;
            ts.image = candida::load_image(
                (fs::path(data_dir) / "tiles" / (tid + ".png")).string());
            tiles.push_back(std::move(ts));
        }
        sd.tiles = candida::score_tiles(net, tiles);
        slides.push_back(std::move(sd));
    }
    return slides;
}

nlohmann::json report_json(const candida::MetricsReport& m) {
    return {{"auc", m.auc}, {"acc", m.acc}, {"sen", m.sen}, {"spe", m.spe}, {"f1", m.f1}};
}

int run(int argc, char** argv) {
    CLI::App app{"Whole-slide candidiasis screening pipeline"};
    app.require_subcommand(1);
    std::vector<std::string> argv_echo(argv, argv + argc);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    candida::GenConfig gen;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--tiles", gen.n_tiles, "standalone tile count");
    synth->add_option("--pos-ratio", gen.pos_ratio, "positive tile fraction");
    synth->add_option("--slides", gen.n_slides, "slide count");
    synth->add_option("--tiles-per-slide", gen.tiles_per_slide, "tiles per slide");
    synth->add_option("--slide-pos-ratio", gen.slide_pos_ratio, "positive slide fraction");
    synth->add_option("--tile-size", gen.tile_size, "tile side length");
    synth->add_option("--seed", gen.seed, "random seed");

    auto* pre = app.add_subcommand("pretrain-detect", "pre-train the detection network");
    Common pre_c;
    pre_c.attach(pre, true, true, false);

    auto* tt = app.add_subcommand("train-tile", "train the tile classifier");
    Common tt_c;
    tt_c.attach(tt, true, true, false);
    std::string tt_val;
    tt->add_option("--val-data", tt_val, "validation dataset directory");

    auto* tw = app.add_subcommand("train-wsi", "train the slide aggregator");
    Common tw_c;
    tw_c.attach(tw, true, true, true);

    auto* inf = app.add_subcommand("infer", "score slides and write verdicts");
    Common inf_c;
    inf_c.attach(inf, true, true, true);
    std::string inf_slide, inf_wsi_ckpt;
    inf->add_option("--slide", inf_slide, "single slide manifest JSON");
    inf->add_option("--wsi-ckpt", inf_wsi_ckpt,
                    "aggregator checkpoint (defaults to top-k mean threshold)");

    auto* cam = app.add_subcommand("cam", "write an attention heatmap for one tile");
    Common cam_c;
    cam_c.attach(cam, false, true, true);
    std::string cam_image;
    cam->add_option("--image", cam_image, "tile PNG path")->required();

    auto* ev = app.add_subcommand("eval", "compute metrics from verdicts");
    std::string ev_pred, ev_truth, ev_out;
    ev->add_option("--pred", ev_pred, "verdicts.csv from infer")->required();
    ev->add_option("--truth", ev_truth, "labels.csv with slide_id,label rows");
    ev->add_option("--out", ev_out, "output directory")->required();

    auto* ab = app.add_subcommand("ablate", "flag-combination study");
    Common ab_c;
    ab_c.attach(ab, true, true, false);
    int ab_seeds = 3, ab_folds = 1;
    bool ab_full = false;
    ab->add_option("--seeds", ab_seeds, "number of seeds");
    ab->add_option("--folds", ab_folds, "folds per seed");
    ab->add_flag("--full", ab_full, "all 8 flag combinations (default: endpoints only)");

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        write_manifest(synth_out, "synth", RunConfig{}, argv_echo);
        candida::gen_dataset(gen, synth_out);
        return 0;
    }
    if (pre->parsed()) {
        RunConfig cfg = pre_c.config();
        write_manifest(pre_c.out, "pretrain-detect", cfg, argv_echo);
        auto train = candida::load_tile_dataset(pre_c.data);
        auto res = candida::train_detector(train, cfg, cfg.epochs, pre_c.out);
        std::cout << "encoder checkpoint: " << res.encoder_ckpt << "\n";
        return 0;
    }
    if (tt->parsed()) {
        RunConfig cfg = tt_c.config();
        write_manifest(tt_c.out, "train-tile", cfg, argv_echo);
        auto train = candida::load_tile_dataset(tt_c.data);
        std::vector<candida::TileSample> val;
        if (!tt_val.empty()) val = candida::load_tile_dataset(tt_val);
        auto res = candida::train_tile_classifier(train, val, cfg, tt_c.ckpt, tt_c.out);
        std::cout << "tile checkpoint: " << res.ckpt_path << "\n";
        return 0;
    }
    if (tw->parsed()) {
        RunConfig cfg = tw_c.config();
        write_manifest(tw_c.out, "train-wsi", cfg, argv_echo);
        auto net = candida::load_tile_net(tw_c.ckpt);
        auto slides = load_slides(tw_c.data, *net);
        auto path = candida::train_wsi(slides, cfg, tw_c.out);
        std::cout << "aggregator checkpoint: " << path << "\n";
        return 0;
    }
    if (inf->parsed()) {
        RunConfig cfg = inf_c.config();
        write_manifest(inf_c.out, "infer", cfg, argv_echo);
        auto net = candida::load_tile_net(inf_c.ckpt);
        std::vector<candida::SlideData> slides;
        if (!inf_slide.empty()) {
            auto man = candida::load_slide_manifest(inf_slide);
            candida::SlideData sd;
            sd.id = man.slide_id;
            sd.label = man.positive ? 1 : 0;
            std::vector<candida::TileSample> tiles;
            for (const auto& tid : man.tile_ids) {
                candida::TileSample ts;
                ts.id = tid;
                ts.image = candida::load_image(
                    (fs::path(inf_c.data) / "tiles" / (tid + ".png")).string());
                tiles.push_back(std::move(ts));
            }
            sd.tiles = candida::score_tiles(*net, tiles);
            slides.push_back(std::move(sd));
        } else {
            slides = load_slides(inf_c.data, *net);
        }
        std::unique_ptr<candida::WsiAggregator<float>> agg;
        if (!inf_wsi_ckpt.empty()) agg = candida::load_wsi_aggregator(inf_wsi_ckpt);
        std::string csv = "slide_id,score,pred,label\n";
        for (const auto& s : slides) {
            candida::Verdict v;
            if (agg) {
                v = agg->verdict(candida::rank_topk(s.tiles, agg->k, agg->embed_dim));
            } else {
                v = candida::aggregate_threshold(s.tiles, cfg.k);
            }
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.9g", v.score);
            csv += s.id + "," + buf + "," + (v.positive ? "1" : "0") + "," +
                   std::to_string(s.label) + "\n";
        }
        std::ofstream f(fs::path(inf_c.out) / "verdicts.csv", std::ios::binary);
        f << csv;
        return 0;
    }
    if (cam->parsed()) {
        RunConfig cfg = cam_c.config();
        write_manifest(cam_c.out, "cam", cfg, argv_echo);
        auto net = candida::load_tile_net(cam_c.ckpt);
        auto image = candida::load_image(cam_image);
        auto heat = candida::grad_cam(*net, image, 1);
        int H = heat.dim(0), W = heat.dim(1);
        candida::Tensor<float> gray({3, H, W});
        for (int c = 0; c < 3; ++c)
            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
                gray[c * static_cast<int64_t>(H) * W + i] = heat[i];
        candida::save_image((fs::path(cam_c.out) / "cam.png").string(), gray);
        candida::save_overlay(image, heat, (fs::path(cam_c.out) / "overlay.png").string());
        return 0;
    }
    if (ev->parsed()) {
        std::ifstream f(ev_pred);
        if (!f) throw std::invalid_argument("eval: cannot read " + ev_pred);
        std::map<std::string, int> truth;
        if (!ev_truth.empty()) {
            std::ifstream tf(ev_truth);
            if (!tf) throw std::invalid_argument("eval: cannot read " + ev_truth);
            std::string line;
            std::getline(tf, line);  // header
            while (std::getline(tf, line)) {
                if (line.empty()) continue;
                auto comma = line.find(',');
                truth[line.substr(0, comma)] = std::stoi(line.substr(comma + 1));
            }
        }
        std::vector<double> scores;
        std::vector<int> labels;
        std::string line;
        std::getline(f, line);  // header
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string id, score, pred, label;
            std::getline(ss, id, ',');
            std::getline(ss, score, ',');
            std::getline(ss, pred, ',');
            std::getline(ss, label, ',');
            scores.push_back(std::stod(score));
            labels.push_back(ev_truth.empty() ? std::stoi(label) : truth.at(id));
        }
        auto m = candida::evaluate(scores, labels);
        fs::create_directories(ev_out);
        write_manifest(ev_out, "eval", RunConfig{}, argv_echo);
        std::ofstream out(fs::path(ev_out) / "metrics.json", std::ios::binary);
        out << report_json(m).dump(2) << "\n";
        return 0;
    }
    if (ab->parsed()) {
        RunConfig cfg = ab_c.config();
        write_manifest(ab_c.out, "ablate", cfg, argv_echo);
        auto samples = candida::load_tile_dataset(ab_c.data);
        std::vector<std::array<bool, 3>> combos;
        if (ab_full) {
            combos = candida::full_ablation_grid();
        } else {
            combos = {{false, false, false}, {true, true, true}};
        }
        auto rows = candida::ablation_harness(samples, combos, ab_folds, ab_seeds, cfg,
                                              (fs::path(ab_c.out) / "work").string());
        candida::write_ablation_csv(rows, (fs::path(ab_c.out) / "ablation.csv").string());
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
