#pragma once

#include <cstdint>
#include <string>

namespace candida {

// Flat run configuration; file format is `key = value` per line (TOML-style
// scalars, '#' comments). Explicit CLI flags override file values.
struct RunConfig {
    double lr = 3e-4;
    int epochs = 100;
    int batch_detect = 8;
    int batch_tile = 8;
    int batch_wsi = 16;
    double alpha = 0.1;
    int k = 10;
    int64_t seed = 0;
    bool pt = true;
    bool ssa = true;
    bool cl = true;
    std::string arch = "desk";
    int tile_size = 128;
    // stages to freeze after restoring detector weights; 0 = full fine-tune.
    // Freezing early stages of a small detector encoder measurably hurts the
    // downstream classifier, so fine-tuning everything is the default.
    int freeze_stages = 0;
    double margin = 1.0;
    double mask_sigma = 0.5;
    double mask_s = 10.0;
    bool literal_mask = false;

    static RunConfig from_file(const std::string& path);
    std::string to_toml() const;
};

}  // namespace candida
