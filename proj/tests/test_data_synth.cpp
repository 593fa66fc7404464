#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "candida/data_synth.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace candida;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("candida_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("negative tile has no boxes") {
    auto t = gen_tile(0, false, StyleParams{}, 128);
    CHECK_FALSE(t.positive);
    CHECK(t.boxes.empty());
    CHECK(t.pixels.shape == std::vector<int>{3, 128, 128});
    for (float v : t.pixels.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("positive tile geometry constraints") {
    for (int64_t seed = 0; seed < 10; ++seed) {
        auto t = gen_tile(seed, true, StyleParams{}, 128);
        CHECK(t.positive);
        CHECK(t.boxes.size() >= 1);
        CHECK(t.boxes.size() <= 3);
        for (const auto& b : t.boxes) {
            CHECK(b.x_min < b.x_max);
            CHECK(b.y_min < b.y_max);
            CHECK(b.x_min >= 0);
            CHECK(b.y_min >= 0);
            CHECK(b.x_max <= 128);
            CHECK(b.y_max <= 128);
        }
    }
}

TEST_CASE("gen_tile is deterministic") {
    auto a = gen_tile(7, true, StyleParams{}, 128);
    auto b = gen_tile(7, true, StyleParams{}, 128);
    CHECK(a.pixels.data == b.pixels.data);
    REQUIRE(a.boxes.size() == b.boxes.size());
    for (size_t i = 0; i < a.boxes.size(); ++i) {
        CHECK(a.boxes[i].x_min == b.boxes[i].x_min);
        CHECK(a.boxes[i].x_max == b.boxes[i].x_max);
    }
}

TEST_CASE("style changes pixels but not geometry") {
    StyleParams s1;
    StyleParams s2;
    s2.hue_shift = 0.08;
    s2.contrast = 1.25;
    s2.brightness = 0.85;
    s2.background_tint = {0.2, 0.9, 0.4};
    auto a = gen_tile(7, true, s1, 128);
    auto b = gen_tile(7, true, s2, 128);
    REQUIRE(a.boxes.size() == b.boxes.size());
    for (size_t i = 0; i < a.boxes.size(); ++i) {
        CHECK(a.boxes[i].x_min == b.boxes[i].x_min);
        CHECK(a.boxes[i].y_min == b.boxes[i].y_min);
        CHECK(a.boxes[i].x_max == b.boxes[i].x_max);
        CHECK(a.boxes[i].y_max == b.boxes[i].y_max);
    }
    int64_t hw = 128 * 128;
    for (int c = 0; c < 3; ++c) {
        double ma = 0, mb = 0;
        for (int64_t i = 0; i < hw; ++i) {
            ma += a.pixels[c * hw + i];
            mb += b.pixels[c * hw + i];
        }
        CHECK(std::abs(ma - mb) / hw > 1e-4);
    }
}

TEST_CASE("invalid parameters rejected") {
    StyleParams bad;
    bad.contrast = 2.0;
    CHECK_THROWS_AS(gen_tile(0, true, bad, 128), std::invalid_argument);
    CHECK_THROWS_AS(gen_tile(0, true, StyleParams{}, 32), std::invalid_argument);
    CHECK_THROWS_AS(gen_tile(-1, true, StyleParams{}, 128), std::invalid_argument);
}

TEST_CASE("gen_dataset counts and labels") {
    TempDir dir("ds_counts");
    GenConfig cfg;
    cfg.n_tiles = 100;
    cfg.pos_ratio = 0.5;
    cfg.n_slides = 10;
    cfg.tiles_per_slide = 20;
    cfg.slide_pos_ratio = 0.5;
    cfg.tile_size = 64;
    cfg.seed = 1;
    gen_dataset(cfg, dir.path.string());

    auto records = load_annotations((dir.path / "annotations.csv").string());
    std::map<std::string, bool> label_of;
    int pos_standalone = 0;
    for (const auto& r : records) {
        label_of[r.tile_id] = r.positive;
        if (r.tile_id.rfind("tile_", 0) == 0 && r.positive) ++pos_standalone;
        CHECK(r.positive == !r.boxes.empty());  // label/box consistency
    }
    CHECK(pos_standalone == 50);
    int neg_standalone = 0;
    for (const auto& [id, pos] : label_of)
        if (id.rfind("tile_", 0) == 0 && !pos) ++neg_standalone;
    CHECK(neg_standalone == 50);

    auto manifests = list_slide_manifests(dir.path.string());
    REQUIRE(manifests.size() == 10);
    int pos_slides = 0;
    for (const auto& mpath : manifests) {
        auto m = load_slide_manifest(mpath);
        CHECK(m.tile_ids.size() == 20);
        bool any_pos = false;
        for (const auto& tid : m.tile_ids) {
            REQUIRE(label_of.count(tid));
            any_pos |= label_of[tid];
        }
        CHECK(m.positive == any_pos);  // SlideManifest invariant
        if (m.positive) ++pos_slides;
        m.style.validate();
    }
    CHECK(pos_slides == 5);

    for (const auto& [id, pos] : label_of) {
        CHECK(fs::exists(dir.path / "tiles" / (id + ".png")));
    }
}

TEST_CASE("gen_dataset is byte deterministic") {
    TempDir d1("ds_det1");
    TempDir d2("ds_det2");
    GenConfig cfg;
    cfg.n_tiles = 20;
    cfg.n_slides = 3;
    cfg.tiles_per_slide = 5;
    cfg.tile_size = 64;
    cfg.seed = 9;
    gen_dataset(cfg, d1.path.string());
    gen_dataset(cfg, d2.path.string());
    CHECK(read_file(d1.path / "annotations.csv") == read_file(d2.path / "annotations.csv"));
    for (const auto& e : fs::directory_iterator(d1.path / "tiles"))
        CHECK(read_file(e.path()) == read_file(d2.path / "tiles" / e.path().filename()));
    for (const auto& e : fs::directory_iterator(d1.path / "slides"))
        CHECK(read_file(e.path()) == read_file(d2.path / "slides" / e.path().filename()));
}

TEST_CASE("gen_dataset rejects empty config") {
    TempDir dir("ds_zero");
    GenConfig cfg;  // all counts zero
    CHECK_THROWS(gen_dataset(cfg, dir.path.string()));
}

TEST_CASE("style validation ranges") {
    StyleParams ok;
    CHECK_NOTHROW(ok.validate());
    StyleParams bad = ok;
    bad.hue_shift = 0.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.brightness = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.background_tint = {1.5, 0.0, 0.0};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
