#pragma once

#include "candida/aggregator.hpp"
#include "candida/attention.hpp"
#include "candida/config.hpp"
#include "candida/data_synth.hpp"
#include "candida/detector.hpp"
#include "candida/losses.hpp"
#include "candida/metrics.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace candida {

struct TileSample {
    std::string id;
    Tensor<float> image;  // [3,H,W]
    int label = 0;
    std::vector<Box> boxes;
};

// Loads every annotated tile (images + labels + boxes) from a dataset dir.
std::vector<TileSample> load_tile_dataset(const std::string& dir);

// Brightness/contrast/hue jitter plus Gaussian noise; spatially aligned with
// the input so the attention mask computed on the augmented view transfers.
Tensor<float> augment_photometric(std::mt19937_64& rng, const Tensor<float>& img);

struct DetectorTrainResult {
    std::string encoder_ckpt;
    std::string head_ckpt;
    std::vector<std::array<double, 3>> epoch_losses;  // focal, box, total
};

DetectorTrainResult train_detector(const std::vector<TileSample>& train,
                                   const RunConfig& config, int epochs,
                                   const std::string& out_dir);

std::unique_ptr<TileNet<float>> make_tile_net(const RunConfig& config);
std::unique_ptr<TileNet<float>> load_tile_net(const std::string& ckpt_path);
void save_tile_net(const TileNet<float>& net, const RunConfig& config,
                   const std::string& path);

struct TileTrainResult {
    std::string ckpt_path;
    double first_val_ce = 0, last_val_ce = 0, best_val_auc = 0;
};

// Attention-guided tile classifier training: per step the augmented view is
// classified, its attention mask builds the masked image, and the original /
// masked views feed the contrastive losses. PT restores the detector encoder
// and freezes the prefix; with CL off only cross-entropy trains.
TileTrainResult train_tile_classifier(const std::vector<TileSample>& train,
                                      const std::vector<TileSample>& val,
                                      const RunConfig& config,
                                      const std::string& detector_ckpt,
                                      const std::string& out_dir);

std::vector<TileScore> score_tiles(const TileNet<float>& net,
                                   const std::vector<TileSample>& tiles);

struct SlideData {
    std::string id;
    int label = 0;
    std::vector<TileScore> tiles;
};

std::string train_wsi(const std::vector<SlideData>& train, const RunConfig& config,
                      const std::string& out_dir);

std::unique_ptr<WsiAggregator<float>> load_wsi_aggregator(const std::string& ckpt_path);

struct AblationRow {
    bool pt = false, ssa = false, cl = false;
    std::vector<MetricsReport> runs;
};

// Flag-combination sweep in Table-1 row order (PT, SSA, CL as descending
// bits). Each combination trains once per (seed, fold) and is evaluated on the
// fold's held-out tiles.
std::vector<AblationRow> ablation_harness(const std::vector<TileSample>& samples,
                                          const std::vector<std::array<bool, 3>>& combos,
                                          int n_folds, int n_seeds, const RunConfig& base,
                                          const std::string& work_dir);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

std::vector<std::array<bool, 3>> full_ablation_grid();

}  // namespace candida
