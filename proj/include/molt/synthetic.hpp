#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "molt/localize.hpp"
#include "molt/ppm.hpp"
#include "molt/rng.hpp"
#include "molt/tensor.hpp"

namespace molt {

// Two-class toy corpus: one warm-colored rectangle (class 0) or one
// cool-colored disc (class 1) on textured gray noise, with the tight
// ground-truth box of the painted pixels.
struct SyntheticSpec {
    int count = 500;
    int image_side = 160;
    std::uint64_t seed = 7;
    double train_fraction = 0.8;
};

struct SyntheticExample {
    Tensor image;
    int class_id = 0;
    BBox box;
};

inline SyntheticExample make_synthetic_example(int side, int class_id, Rng& rng) {
    Tensor image({side, side, 3});
    auto& pix = image.data_mut();
    const double base = rng.uniform(0.4, 0.6);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const double n = rng.uniform(-0.06, 0.06);
            for (int c = 0; c < 3; ++c) {
                const double v = base + n + rng.uniform(-0.02, 0.02);
                pix[(static_cast<std::size_t>(y) * side + x) * 3 + c] = std::clamp(v, 0.0, 1.0);
            }
        }
    }

    double color[3];
    if (class_id == 0) {
        color[0] = rng.uniform(0.7, 1.0);
        color[1] = rng.uniform(0.1, 0.45);
        color[2] = rng.uniform(0.0, 0.25);
    } else {
        color[0] = rng.uniform(0.0, 0.25);
        color[1] = rng.uniform(0.1, 0.45);
        color[2] = rng.uniform(0.7, 1.0);
    }

    int min_x = side, min_y = side, max_x = -1, max_y = -1;
    auto paint = [&](int y, int x) {
        for (int c = 0; c < 3; ++c) {
            const double v = color[c] + rng.uniform(-0.05, 0.05);
            pix[(static_cast<std::size_t>(y) * side + x) * 3 + c] = std::clamp(v, 0.0, 1.0);
        }
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
    };

    if (class_id == 0) {
        const int half_w = static_cast<int>(side * rng.uniform(0.20, 0.33));
        const int half_h = static_cast<int>(side * rng.uniform(0.20, 0.33));
        const int cx = rng.uniform_int(half_w + 2, side - half_w - 3);
        const int cy = rng.uniform_int(half_h + 2, side - half_h - 3);
        for (int y = cy - half_h; y <= cy + half_h; ++y)
            for (int x = cx - half_w; x <= cx + half_w; ++x) paint(y, x);
    } else {
        const int radius = static_cast<int>(side * rng.uniform(0.22, 0.35));
        const int cx = rng.uniform_int(radius + 2, side - radius - 3);
        const int cy = rng.uniform_int(radius + 2, side - radius - 3);
        for (int y = cy - radius; y <= cy + radius; ++y)
            for (int x = cx - radius; x <= cx + radius; ++x) {
                const long long dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= static_cast<long long>(radius) * radius) paint(y, x);
            }
    }

    return {image, class_id, BBox{min_x, min_y, max_x + 1, max_y + 1}};
}

struct CorpusPaths {
    std::string all_manifest;
    std::string train_manifest;
    std::string eval_manifest;
};

// Writes images/ plus train/eval/all manifests. Alternates classes so every
// slice of the corpus is balanced. Fully determined by the spec's seed.
inline CorpusPaths write_synthetic_corpus(const std::string& dir, const SyntheticSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    Rng rng(spec.seed);
    std::ofstream all(dir + "/all.tsv"), train(dir + "/train.tsv"), eval(dir + "/eval.tsv");
    if (!all || !train || !eval) throw IoError("cannot write manifests under " + dir);
    const int train_count = static_cast<int>(spec.count * spec.train_fraction);
    for (int i = 0; i < spec.count; ++i) {
        const int class_id = i % 2;
        SyntheticExample ex = make_synthetic_example(spec.image_side, class_id, rng);
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05d.ppm", i);
        encode_image((fs::path(dir) / "images" / name).string(), ex.image);
        std::ostringstream line;
        line << "images/" << name << '\t' << ex.class_id << '\t' << ex.box.x0 << ',' << ex.box.y0
             << ',' << ex.box.x1 << ',' << ex.box.y1 << '\n';
        all << line.str();
        (i < train_count ? train : eval) << line.str();
    }
    return {dir + "/all.tsv", dir + "/train.tsv", dir + "/eval.tsv"};
}

}  // namespace molt
