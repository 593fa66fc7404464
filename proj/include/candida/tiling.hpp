#pragma once

#include "candida/tensor.hpp"

#include <string>
#include <vector>

namespace candida {

// Tile enumeration over a slide image, row-major. Boundary tiles are padded
// with white (1.0) when the image extent is not a multiple of the stride.
struct TileGrid {
    int tile_size = 0;
    int stride = 0;
    std::vector<std::pair<int, int>> offsets;  // (row, col) origin per tile
};

struct CropResult {
    TileGrid grid;
    std::vector<Tensor<float>> tiles;  // each [3,tile,tile]
};

CropResult crop_slide(const Tensor<float>& image, int tile_size, int stride,
                      bool allow_padding = true);

// Number of tiles along one axis: ceil((extent - tile)/stride) + 1, min 1.
int tile_count_1d(int extent, int tile_size, int stride);

// PNG IO; images are [3,H,W] float RGB in [0,1], quantized to 8 bits on disk.
Tensor<float> load_image(const std::string& path);
void save_image(const std::string& path, const Tensor<float>& image);

// Blends a [H,W] heatmap into the red channel with alpha 0.5 and writes a PNG.
void save_overlay(const Tensor<float>& image, const Tensor<float>& heatmap,
                  const std::string& path);

}  // namespace candida
