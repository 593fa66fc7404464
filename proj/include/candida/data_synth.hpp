#pragma once

#include "candida/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace candida {

// Per-slide photometric style. All tiles of one slide share one style; the
// spread across slides stands in for the staining gap between real WSIs.
struct StyleParams {
    double hue_shift = 0.0;         // [-0.1, 0.1]
    double contrast = 1.0;          // [0.7, 1.3]
    double brightness = 1.0;        // [0.8, 1.2]
    std::array<double, 3> background_tint{0.5, 0.5, 0.5};  // [0,1] each

    void validate() const;
};

struct Box {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct TileImage {
    Tensor<float> pixels;  // [3,H,W] in [0,1]
    bool positive = false;
    std::vector<Box> boxes;  // non-empty iff positive
    std::string tile_id;
};

struct SlideManifest {
    std::string slide_id;
    std::vector<std::string> tile_ids;
    bool positive = false;
    StyleParams style;
};

struct GenConfig {
    int n_tiles = 0;             // standalone tiles (per-tile style)
    double pos_ratio = 0.5;
    int n_slides = 0;
    int tiles_per_slide = 0;
    double slide_pos_ratio = 0.5;
    int tile_size = 128;
    int64_t seed = 0;
};

// Deterministic synthetic tile: elongated low-contrast filaments threaded
// through cell blobs for positives; cells plus filament-like confounders
// (cell-edge arcs, fold lines) for negatives. Geometry depends only on
// (seed, label, size); the style is applied photometrically afterwards, so
// box annotations are style-invariant.
TileImage gen_tile(int64_t seed, bool positive, const StyleParams& style, int size);

// Writes <out>/tiles/<tile_id>.png, <out>/annotations.csv and
// <out>/slides/<slide_id>.json. Counts and label ratios match the config
// exactly; byte-identical across runs for a fixed config.
void gen_dataset(const GenConfig& config, const std::string& out_dir);

StyleParams sample_style(uint64_t seed);

// dataset readback
struct TileRecord {
    std::string tile_id;
    bool positive = false;
    std::vector<Box> boxes;
};
std::vector<TileRecord> load_annotations(const std::string& csv_path);
SlideManifest load_slide_manifest(const std::string& json_path);
std::vector<std::string> list_slide_manifests(const std::string& dataset_dir);

}  // namespace candida
