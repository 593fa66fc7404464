#include "candida/tiling.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <stdexcept>

namespace candida {

int tile_count_1d(int extent, int tile_size, int stride) {
    if (extent <= tile_size) return 1;
    return static_cast<int>(
               std::ceil(static_cast<double>(extent - tile_size) / stride)) + 1;
}

CropResult crop_slide(const Tensor<float>& image, int tile_size, int stride,
                      bool allow_padding) {
    if (tile_size <= 0) throw std::invalid_argument("crop_slide: tile_size must be > 0");
    if (stride <= 0) throw std::invalid_argument("crop_slide: stride must be > 0");
    int H = image.dim(1), W = image.dim(2);
    if (!allow_padding && (H < tile_size || W < tile_size))
        throw std::invalid_argument("crop_slide: image smaller than tile and padding disabled");
    int nr = tile_count_1d(H, tile_size, stride);
    int nc = tile_count_1d(W, tile_size, stride);
    CropResult res;
    res.grid.tile_size = tile_size;
    res.grid.stride = stride;
    for (int r = 0; r < nr; ++r) {
        for (int c = 0; c < nc; ++c) {
            int oy = r * stride, ox = c * stride;
            res.grid.offsets.emplace_back(oy, ox);
            Tensor<float> tile = Tensor<float>::full({3, tile_size, tile_size}, 1.0f);
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < tile_size; ++y) {
                    int sy = oy + y;
                    if (sy >= H) break;
                    for (int x = 0; x < tile_size; ++x) {
                        int sx = ox + x;
                        if (sx >= W) break;
                        tile.at(ch, y, x) = image.at(ch, sy, sx);
                    }
                }
            res.tiles.push_back(std::move(tile));
        }
    }
    return res;
}

Tensor<float> load_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("load_image: cannot read " + path);
    Tensor<float> out({3, bgr.rows, bgr.cols});
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const cv::Vec3b& px = bgr.at<cv::Vec3b>(y, x);
            out.at(0, y, x) = px[2] / 255.0f;
            out.at(1, y, x) = px[1] / 255.0f;
            out.at(2, y, x) = px[0] / 255.0f;
        }
    return out;
}

void save_image(const std::string& path, const Tensor<float>& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("save_image: expected [3,H,W] image");
    int H = image.dim(1), W = image.dim(2);
    cv::Mat bgr(H, W, CV_8UC3);
    auto q = [](float v) {
        v = std::min(1.0f, std::max(0.0f, v));
        return static_cast<unsigned char>(std::lround(v * 255.0f));
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            bgr.at<cv::Vec3b>(y, x) =
                cv::Vec3b(q(image.at(2, y, x)), q(image.at(1, y, x)), q(image.at(0, y, x)));
    if (!cv::imwrite(path, bgr))
        throw std::runtime_error("save_image: cannot write " + path);
}

void save_overlay(const Tensor<float>& image, const Tensor<float>& heatmap,
                  const std::string& path) {
    if (heatmap.ndim() != 2 || heatmap.dim(0) != image.dim(1) ||
        heatmap.dim(1) != image.dim(2))
        throw std::invalid_argument("save_overlay: heatmap shape must match image");
    Tensor<float> out = image;
    int H = image.dim(1), W = image.dim(2);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float a = 0.5f * heatmap.at(y, x);
            out.at(0, y, x) = (1.0f - a) * image.at(0, y, x) + a;
        }
    save_image(path, out);
}

}  // namespace candida
