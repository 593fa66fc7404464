#include "candida/data_synth.hpp"
#include "candida/tiling.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace candida {

void StyleParams::validate() const {
    if (hue_shift < -0.1 || hue_shift > 0.1)
        throw std::invalid_argument("style: hue_shift outside [-0.1,0.1]");
    if (contrast < 0.7 || contrast > 1.3)
        throw std::invalid_argument("style: contrast outside [0.7,1.3]");
    if (brightness < 0.8 || brightness > 1.2)
        throw std::invalid_argument("style: brightness outside [0.8,1.2]");
    for (double t : background_tint)
        if (t < 0.0 || t > 1.0)
            throw std::invalid_argument("style: background_tint outside [0,1]");
}

namespace {

struct Canvas {
    int size;
    std::vector<double> px;  // [3][S][S]

    explicit Canvas(int s, const std::array<double, 3>& bg) : size(s), px(3u * s * s) {
        for (int c = 0; c < 3; ++c)
            std::fill(px.begin() + static_cast<size_t>(c) * s * s,
                      px.begin() + static_cast<size_t>(c + 1) * s * s, bg[c]);
    }
    void blend(int x, int y, const std::array<double, 3>& color, double alpha) {
        if (x < 0 || y < 0 || x >= size || y >= size || alpha <= 0) return;
        size_t i = static_cast<size_t>(y) * size + x;
        size_t hw = static_cast<size_t>(size) * size;
        for (int c = 0; c < 3; ++c)
            px[c * hw + i] = px[c * hw + i] * (1 - alpha) + color[c] * alpha;
    }
};

using Rng = std::mt19937_64;

double unif(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0, 1)(rng);
}

void draw_ellipse(Canvas& cv, double cx, double cy, double a, double b, double theta,
                  const std::array<double, 3>& color, double alpha_max) {
    double ct = std::cos(theta), st = std::sin(theta);
    double r = std::max(a, b);
    int x0 = static_cast<int>(std::floor(cx - r)), x1 = static_cast<int>(std::ceil(cx + r));
    int y0 = static_cast<int>(std::floor(cy - r)), y1 = static_cast<int>(std::ceil(cy + r));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double dx = x - cx, dy = y - cy;
            double u = dx * ct + dy * st, v = -dx * st + dy * ct;
            double r2 = (u / a) * (u / a) + (v / b) * (v / b);
            if (r2 < 1.0) cv.blend(x, y, color, alpha_max * (1.0 - r2 * r2));
        }
}

void draw_disk(Canvas& cv, double cx, double cy, double radius,
               const std::array<double, 3>& color, double alpha_max) {
    int x0 = static_cast<int>(std::floor(cx - radius)),
        x1 = static_cast<int>(std::ceil(cx + radius));
    int y0 = static_cast<int>(std::floor(cy - radius)),
        y1 = static_cast<int>(std::ceil(cy + radius));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            double rr = radius * radius;
            if (d2 < rr * 2.25)
                cv.blend(x, y, color, alpha_max * std::exp(-d2 / rr));
        }
}

struct Pt {
    double x, y;
};

Pt catmull_rom(const Pt& p0, const Pt& p1, const Pt& p2, const Pt& p3, double t) {
    double t2 = t * t, t3 = t2 * t;
    auto comp = [&](double a0, double a1, double a2, double a3) {
        return 0.5 * ((2 * a1) + (-a0 + a2) * t + (2 * a0 - 5 * a1 + 4 * a2 - a3) * t2 +
                      (-a0 + 3 * a1 - 3 * a2 + a3) * t3);
    };
    return {comp(p0.x, p1.x, p2.x, p3.x), comp(p0.y, p1.y, p2.y, p3.y)};
}

std::vector<Pt> sample_spline(const std::vector<Pt>& ctrl, double spacing) {
    std::vector<Pt> out;
    int n = static_cast<int>(ctrl.size());
    for (int i = 0; i + 1 < n; ++i) {
        const Pt& p0 = ctrl[static_cast<size_t>(std::max(0, i - 1))];
        const Pt& p1 = ctrl[static_cast<size_t>(i)];
        const Pt& p2 = ctrl[static_cast<size_t>(i + 1)];
        const Pt& p3 = ctrl[static_cast<size_t>(std::min(n - 1, i + 2))];
        double seg = std::hypot(p2.x - p1.x, p2.y - p1.y);
        int steps = std::max(2, static_cast<int>(seg / spacing));
        for (int s = 0; s < steps; ++s)
            out.push_back(catmull_rom(p0, p1, p2, p3, static_cast<double>(s) / steps));
    }
    out.push_back(ctrl.back());
    return out;
}

std::array<double, 3> cell_color(Rng& rng) {
    return {unif(rng, 0.55, 0.78), unif(rng, 0.50, 0.72), unif(rng, 0.68, 0.88)};
}

void draw_cell(Canvas& cv, Rng& rng, int S) {
    double cx = unif(rng, 0, S), cy = unif(rng, 0, S);
    double a = unif(rng, 0.04, 0.10) * S, b = unif(rng, 0.04, 0.10) * S;
    double theta = unif(rng, 0, M_PI);
    auto col = cell_color(rng);
    double alpha = unif(rng, 0.35, 0.60);
    draw_ellipse(cv, cx, cy, a, b, theta, col, alpha);
    // nucleus
    std::array<double, 3> ncol{col[0] * 0.55, col[1] * 0.5, col[2] * 0.65};
    draw_ellipse(cv, cx + unif(rng, -0.2, 0.2) * a, cy + unif(rng, -0.2, 0.2) * b, 0.35 * a,
                 0.35 * b, theta, ncol, 0.7);
}

void draw_edge_arc(Canvas& cv, Rng& rng, int S) {
    double cx = unif(rng, 0, S), cy = unif(rng, 0, S);
    double a = unif(rng, 0.06, 0.14) * S, b = unif(rng, 0.06, 0.14) * S;
    double phi = unif(rng, 0, M_PI);
    double t0 = unif(rng, 0, 2 * M_PI), tlen = unif(rng, 1.0, 3.0);
    double w = unif(rng, 0.6, 1.0);
    std::array<double, 3> col{0.42, 0.38, 0.55};
    double alpha = unif(rng, 0.22, 0.38);
    double ct = std::cos(phi), st = std::sin(phi);
    int steps = static_cast<int>(tlen * std::max(a, b));
    for (int i = 0; i <= steps; ++i) {
        double t = t0 + tlen * i / std::max(1, steps);
        double u = a * std::cos(t), v = b * std::sin(t);
        draw_disk(cv, cx + u * ct - v * st, cy + u * st + v * ct, w, col, alpha);
    }
}

void draw_fold(Canvas& cv, Rng& rng, int S) {
    double theta = unif(rng, 0, M_PI);
    double offset = unif(rng, 0.15, 0.85) * S;
    double bow = unif(rng, -0.08, 0.08) * S;
    double w = unif(rng, 2.5, 4.5);
    double alpha = unif(rng, 0.10, 0.20);
    std::array<double, 3> col{0.70, 0.68, 0.74};
    double ct = std::cos(theta), st = std::sin(theta);
    for (double s = -0.8 * S; s <= 0.8 * S; s += 0.5) {
        double f = s / (0.8 * S);
        double perp = offset - 0.5 * S + bow * (1 - f * f);
        double x = 0.5 * S + s * ct - perp * st;
        double y = 0.5 * S + s * st + perp * ct;
        draw_disk(cv, x, y, w, col, alpha);
    }
}

Box draw_filament(Canvas& cv, Rng& rng, int S, const std::array<double, 3>& bg) {
    double length = unif(rng, 0.45, 0.70) * S;
    double width = std::max(2.0, unif(rng, 0.018, 0.028) * S);
    double drop = unif(rng, 0.30, 0.45);
    std::array<double, 3> col{bg[0] - 0.7 * drop, bg[1] - drop, bg[2] - 0.5 * drop};
    const int npts = 5;
    double lo = 0.06 * S, hi = 0.94 * S;
    std::vector<Pt> ctrl;
    Pt p{unif(rng, 0.12 * S, 0.88 * S), unif(rng, 0.12 * S, 0.88 * S)};
    double theta = unif(rng, 0, 2 * M_PI);
    ctrl.push_back(p);
    double step = length / (npts - 1);
    for (int i = 1; i < npts; ++i) {
        theta += unif(rng, -0.6, 0.6);
        p.x += step * std::cos(theta);
        p.y += step * std::sin(theta);
        if (p.x < lo || p.x > hi) {
            p.x = std::clamp(p.x, lo, hi);
            theta = M_PI - theta;
        }
        if (p.y < lo || p.y > hi) {
            p.y = std::clamp(p.y, lo, hi);
            theta = -theta;
        }
        ctrl.push_back(p);
    }
    auto pts = sample_spline(ctrl, 0.4);
    double reach = width;  // stamp radius margin for the bbox
    double mnx = 1e9, mny = 1e9, mxx = -1e9, mxy = -1e9;
    auto grow = [&](double x, double y, double r) {
        mnx = std::min(mnx, x - r);
        mny = std::min(mny, y - r);
        mxx = std::max(mxx, x + r);
        mxy = std::max(mxy, y + r);
    };
    for (const auto& q : pts) {
        draw_disk(cv, q.x, q.y, width * 0.5, col, 0.85);
        grow(q.x, q.y, reach);
    }
    // spore dots at interior joints
    std::array<double, 3> scol{col[0] * 0.9, col[1] * 0.85, col[2] * 0.9};
    for (int i = 1; i + 1 < npts; ++i) {
        if (unif(rng, 0, 1) < 0.85) {
            double r = unif(rng, 1.2, 2.0) * width;
            draw_disk(cv, ctrl[static_cast<size_t>(i)].x, ctrl[static_cast<size_t>(i)].y, r,
                      scol, 0.8);
            grow(ctrl[static_cast<size_t>(i)].x, ctrl[static_cast<size_t>(i)].y, r * 1.2);
        }
    }
    Box b;
    b.x_min = std::floor(std::max(0.0, mnx));
    b.y_min = std::floor(std::max(0.0, mny));
    b.x_max = std::ceil(std::min(static_cast<double>(S), mxx));
    b.y_max = std::ceil(std::min(static_cast<double>(S), mxy));
    return b;
}

void apply_style(Canvas& cv, const StyleParams& st) {
    size_t hw = static_cast<size_t>(cv.size) * cv.size;
    double angle = st.hue_shift * 2 * M_PI;
    double ca = std::cos(angle), sa = std::sin(angle);
    for (size_t i = 0; i < hw; ++i) {
        double r = cv.px[i], g = cv.px[hw + i], b = cv.px[2 * hw + i];
        // hue rotation in YIQ
        double y = 0.299 * r + 0.587 * g + 0.114 * b;
        double iq = 0.596 * r - 0.274 * g - 0.322 * b;
        double q = 0.211 * r - 0.523 * g + 0.312 * b;
        double i2 = iq * ca - q * sa;
        double q2 = iq * sa + q * ca;
        r = y + 0.956 * i2 + 0.621 * q2;
        g = y - 0.272 * i2 - 0.647 * q2;
        b = y - 1.106 * i2 + 1.703 * q2;
        auto adj = [&](double v) {
            v = (v - 0.5) * st.contrast + 0.5;
            v *= st.brightness;
            return std::clamp(v, 0.0, 1.0);
        };
        cv.px[i] = adj(r);
        cv.px[hw + i] = adj(g);
        cv.px[2 * hw + i] = adj(b);
    }
}

uint64_t mix_seed(int64_t seed, bool positive, int size) {
    uint64_t h = static_cast<uint64_t>(seed) * 0x9E3779B97F4A7C15ull;
    h ^= (positive ? 0xD1B54A32D192ED03ull : 0x2545F4914F6CDD1Dull);
    h ^= static_cast<uint64_t>(size) * 0x94D049BB133111EBull;
    return h;
}

}  // namespace

TileImage gen_tile(int64_t seed, bool positive, const StyleParams& style, int size) {
    if (size < 64) throw std::invalid_argument("gen_tile: size must be >= 64");
    if (seed < 0) throw std::invalid_argument("gen_tile: seed must be >= 0");
    style.validate();
    Rng rng(mix_seed(seed, positive, size));
    std::array<double, 3> bg{0.90 + 0.08 * style.background_tint[0],
                             0.90 + 0.08 * style.background_tint[1],
                             0.90 + 0.08 * style.background_tint[2]};
    Canvas canvas(size, bg);
    TileImage tile;
    tile.positive = positive;

    int n_cells = 8 + static_cast<int>(rng() % 17);
    int behind = n_cells - static_cast<int>(rng() % 4);
    for (int i = 0; i < behind; ++i) draw_cell(canvas, rng, size);

    int n_arcs = 2 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n_arcs; ++i) draw_edge_arc(canvas, rng, size);
    int n_folds = static_cast<int>(rng() % 3);
    for (int i = 0; i < n_folds; ++i) draw_fold(canvas, rng, size);

    if (positive) {
        int n_fil = 1 + static_cast<int>(rng() % 3);
        for (int i = 0; i < n_fil; ++i)
            tile.boxes.push_back(draw_filament(canvas, rng, size, bg));
    }
    // cells drawn after the filament occlude it
    for (int i = behind; i < n_cells; ++i) draw_cell(canvas, rng, size);

    apply_style(canvas, style);
    tile.pixels = Tensor<float>({3, size, size});
    for (size_t i = 0; i < canvas.px.size(); ++i)
        tile.pixels.data[i] = static_cast<float>(canvas.px[i]);
    return tile;
}

StyleParams sample_style(uint64_t seed) {
    Rng rng(seed * 0xBF58476D1CE4E5B9ull + 0x94D049BB133111EBull);
    StyleParams st;
    st.hue_shift = unif(rng, -0.1, 0.1);
    st.contrast = unif(rng, 0.7, 1.3);
    st.brightness = unif(rng, 0.8, 1.2);
    for (auto& t : st.background_tint) t = unif(rng, 0.0, 1.0);
    return st;
}

namespace {

nlohmann::json style_to_json(const StyleParams& st) {
    return {{"hue_shift", st.hue_shift},
            {"contrast", st.contrast},
            {"brightness", st.brightness},
            {"background_tint", st.background_tint}};
}

StyleParams style_from_json(const nlohmann::json& j) {
    StyleParams st;
    st.hue_shift = j.at("hue_shift").get<double>();
    st.contrast = j.at("contrast").get<double>();
    st.brightness = j.at("brightness").get<double>();
    auto t = j.at("background_tint").get<std::vector<double>>();
    std::copy(t.begin(), t.end(), st.background_tint.begin());
    return st;
}

std::string tile_row(const TileImage& t) {
    std::ostringstream os;
    if (t.boxes.empty()) {
        os << t.tile_id << ",negative,,,,\n";
    } else {
        for (const auto& b : t.boxes)
            os << t.tile_id << ",positive," << std::llround(b.x_min) << ","
               << std::llround(b.y_min) << "," << std::llround(b.x_max) << ","
               << std::llround(b.y_max) << "\n";
    }
    return os.str();
}

}  // namespace

void gen_dataset(const GenConfig& config, const std::string& out_dir) {
    if (config.tile_size < 64) throw std::invalid_argument("gen_dataset: tile_size must be >= 64");
    bool has_tiles = config.n_tiles > 0;
    bool has_slides = config.n_slides > 0 && config.tiles_per_slide > 0;
    if (!has_tiles && !has_slides)
        throw std::invalid_argument("gen_dataset: zero counts requested");

    fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root / "tiles", ec);
    fs::create_directories(root / "slides", ec);
    if (!fs::is_directory(root / "tiles"))
        throw std::runtime_error("gen_dataset: cannot create output directory " + out_dir);

    std::string csv = "tile_id,label,x_min,y_min,x_max,y_max\n";
    char buf[64];

    if (has_tiles) {
        int n_pos = static_cast<int>(std::llround(config.n_tiles * config.pos_ratio));
        for (int i = 0; i < config.n_tiles; ++i) {
            bool pos = i < n_pos;
            StyleParams st = sample_style(static_cast<uint64_t>(config.seed) * 77ull + i);
            TileImage t =
                gen_tile(config.seed * 1000003 + i, pos, st, config.tile_size);
            std::snprintf(buf, sizeof(buf), "tile_%06d", i);
            t.tile_id = buf;
            save_image((root / "tiles" / (t.tile_id + ".png")).string(), t.pixels);
            csv += tile_row(t);
        }
    }

    if (has_slides) {
        int n_pos_slides =
            static_cast<int>(std::llround(config.n_slides * config.slide_pos_ratio));
        for (int s = 0; s < config.n_slides; ++s) {
            bool slide_pos = s < n_pos_slides;
            std::snprintf(buf, sizeof(buf), "slide_%04d", s);
            SlideManifest man;
            man.slide_id = buf;
            man.positive = slide_pos;
            man.style = sample_style(static_cast<uint64_t>(config.seed) * 31ull + 100000ull + s);
            Rng slide_rng(static_cast<uint64_t>(config.seed) * 13ull + 7777ull + s);
            std::vector<bool> tile_pos(static_cast<size_t>(config.tiles_per_slide), false);
            if (slide_pos) {
                int max_pos = std::max(1, config.tiles_per_slide / 5);
                int n_pos_t = 1 + static_cast<int>(slide_rng() % max_pos);
                std::vector<int> idx(static_cast<size_t>(config.tiles_per_slide));
                std::iota(idx.begin(), idx.end(), 0);
                std::shuffle(idx.begin(), idx.end(), slide_rng);
                for (int i = 0; i < n_pos_t; ++i) tile_pos[static_cast<size_t>(idx[i])] = true;
            }
            for (int t = 0; t < config.tiles_per_slide; ++t) {
                std::snprintf(buf, sizeof(buf), "slide_%04d_t%03d", s, t);
                TileImage tile = gen_tile(config.seed * 1000003 + 500000 + s * 1000 + t,
                                          tile_pos[static_cast<size_t>(t)], man.style,
                                          config.tile_size);
                tile.tile_id = buf;
                man.tile_ids.push_back(tile.tile_id);
                save_image((root / "tiles" / (tile.tile_id + ".png")).string(), tile.pixels);
                csv += tile_row(tile);
            }
            nlohmann::json j = {{"slide_id", man.slide_id},
                                {"slide_label", man.positive ? "positive" : "negative"},
                                {"tile_ids", man.tile_ids},
                                {"style", style_to_json(man.style)}};
            std::ofstream mf(root / "slides" / (man.slide_id + ".json"));
            mf << j.dump(2) << "\n";
        }
    }

    std::ofstream cf(root / "annotations.csv", std::ios::binary);
    cf << csv;
    if (!cf) throw std::runtime_error("gen_dataset: cannot write annotations.csv");
}

std::vector<TileRecord> load_annotations(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw std::runtime_error("load_annotations: cannot read " + csv_path);
    std::string line;
    std::getline(f, line);  // header
    std::vector<TileRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, label, xs[4];
        std::getline(ss, id, ',');
        std::getline(ss, label, ',');
        for (auto& x : xs) std::getline(ss, x, ',');
        if (out.empty() || out.back().tile_id != id) {
            TileRecord r;
            r.tile_id = id;
            r.positive = (label == "positive");
            out.push_back(r);
        }
        if (label == "positive") {
            Box b{std::stod(xs[0]), std::stod(xs[1]), std::stod(xs[2]), std::stod(xs[3])};
            out.back().boxes.push_back(b);
        }
    }
    return out;
}

SlideManifest load_slide_manifest(const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) throw std::runtime_error("load_slide_manifest: cannot read " + json_path);
    nlohmann::json j;
    f >> j;
    SlideManifest man;
    man.slide_id = j.at("slide_id").get<std::string>();
    man.positive = j.at("slide_label").get<std::string>() == "positive";
    man.tile_ids = j.at("tile_ids").get<std::vector<std::string>>();
    man.style = style_from_json(j.at("style"));
    return man;
}

std::vector<std::string> list_slide_manifests(const std::string& dataset_dir) {
    std::vector<std::string> out;
    fs::path dir = fs::path(dataset_dir) / "slides";
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace candida
