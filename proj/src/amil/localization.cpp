#include "amil/localization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "amil/colormap.hpp"

namespace amil {

Heatmap heatmap_from_scores(std::int64_t rows, std::int64_t cols, std::vector<double> scores,
                            const TilingSpec& tiling,
                            std::vector<std::pair<int, int>> origins) {
    if (rows < 1 || cols < 1 ||
        scores.size() != static_cast<std::size_t>(rows * cols) ||
        origins.size() != scores.size())
        throw ContractError("heatmap grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                            " does not match " + std::to_string(scores.size()) + " scores");
    Heatmap h;
    h.rows = rows;
    h.cols = cols;
    h.tiling = tiling;
    h.origins = std::move(origins);
    h.wmin = *std::min_element(scores.begin(), scores.end());
    h.wmax = *std::max_element(scores.begin(), scores.end());
    h.weights = std::move(scores);
    return h;
}

SourceImage render_overlay(const SourceImage& img, const Heatmap& heatmap, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw ContractError("overlay alpha must lie in [0, 1], got " + std::to_string(alpha));
    const std::int64_t s = heatmap.tiling.patch_size;
    const auto grid = tile_grid(img.width, img.height, heatmap.tiling);
    if (grid.first != heatmap.rows || grid.second != heatmap.cols)
        throw ContractError("heatmap grid " + std::to_string(heatmap.rows) + "x" +
                            std::to_string(heatmap.cols) + " was not derived from this image's " +
                            std::to_string(grid.first) + "x" + std::to_string(grid.second) +
                            " tiling");
    SourceImage out = img;
    for (std::int64_t i = 0; i < heatmap.size(); ++i) {
        const auto [x0, y0] = heatmap.origins[static_cast<std::size_t>(i)];
        if (x0 < 0 || y0 < 0 || x0 + s > img.width || y0 + s > img.height)
            throw ContractError("heatmap cell " + std::to_string(i) + " lies outside the image");
        const double w = heatmap.normalized(i);
        const int ci = std::clamp(static_cast<int>(std::lround(w * 255.0)), 0, 255);
        const auto& color = kBlueRedColormap[static_cast<std::size_t>(ci)];
        for (std::int64_t y = 0; y < s; ++y) {
            std::uint8_t* px = out.px(x0, y0 + static_cast<int>(y));
            for (std::int64_t x = 0; x < s; ++x)
                for (int c = 0; c < 3; ++c) {
                    const double blended = (1.0 - alpha) * px[x * 3 + c] + alpha * color[static_cast<std::size_t>(c)];
                    px[x * 3 + c] = static_cast<std::uint8_t>(
                        std::clamp(std::lround(blended), 0L, 255L));
                }
        }
    }
    return out;
}

double localization_score(const Heatmap& heatmap, const std::vector<int>& truth_cells, int k) {
    if (truth_cells.empty()) throw ContractError("localization_score: no ground-truth cells");
    if (k < 1 || k > heatmap.size())
        throw ContractError("localization_score: k must lie in [1, grid size]");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(heatmap.size()));
    std::iota(idx.begin(), idx.end(), 0);
    // stable partial ordering: higher weight first, lower index wins ties
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        return heatmap.weights[static_cast<std::size_t>(a)] >
               heatmap.weights[static_cast<std::size_t>(b)];
    });
    int hits = 0;
    for (int i = 0; i < k; ++i)
        if (std::find(truth_cells.begin(), truth_cells.end(), static_cast<int>(idx[static_cast<std::size_t>(i)])) !=
            truth_cells.end())
            ++hits;
    const int denom = std::min<int>(k, static_cast<int>(truth_cells.size()));
    return static_cast<double>(hits) / static_cast<double>(denom);
}

void write_heatmap_csv(const std::string& path, const Heatmap& heatmap) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create heatmap file: " + path);
    char buf[40];
    for (std::int64_t r = 0; r < heatmap.rows; ++r) {
        for (std::int64_t c = 0; c < heatmap.cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.10g", heatmap.weights[static_cast<std::size_t>(r * heatmap.cols + c)]);
            out << (c ? "," : "") << buf;
        }
        out << '\n';
    }
    out.close();
    if (!out) throw IoError("short write: " + path);
}

}  // namespace amil
