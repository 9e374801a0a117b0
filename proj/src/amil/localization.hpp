#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "amil/bags.hpp"
#include "amil/image.hpp"
#include "amil/model.hpp"

namespace amil {

// Per-patch scalar field on the tiling grid of one source image. `weights`
// holds the raw model outputs (attention weights a_p for attention models);
// display normalization is min-max with the record kept, so raw values stay
// recoverable.
struct Heatmap {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> weights;               // row-major raw values
    TilingSpec tiling;
    std::vector<std::pair<int, int>> origins;  // top-left (x, y) per cell
    double wmin = 0.0;
    double wmax = 0.0;

    std::int64_t size() const { return static_cast<std::int64_t>(weights.size()); }

    // (w - min) / (max - min); a flat map renders mid-scale everywhere.
    double normalized(std::int64_t i) const {
        if (wmax == wmin) return 0.5;
        return (weights[static_cast<std::size_t>(i)] - wmin) / (wmax - wmin);
    }
};

Heatmap heatmap_from_scores(std::int64_t rows, std::int64_t cols, std::vector<double> scores,
                            const TilingSpec& tiling,
                            std::vector<std::pair<int, int>> origins);

// Places attention weight p at the grid cell matching the bag's row-major
// patch order.
template <std::floating_point S>
Heatmap attention_to_heatmap(const AttentionOutput<S>& attention, const Bag<S>& bag,
                             const TilingSpec& tiling) {
    if (attention.weights.size() != bag.size())
        throw ContractError("attention weights length " + std::to_string(attention.weights.size()) +
                            " does not match bag patch count " + std::to_string(bag.size()));
    std::vector<double> w(static_cast<std::size_t>(bag.size()));
    for (std::int64_t i = 0; i < bag.size(); ++i)
        w[static_cast<std::size_t>(i)] = static_cast<double>(attention.weights[i]);
    return heatmap_from_scores(bag.rows, bag.cols, std::move(w), tiling, bag.origins);
}

// Alpha-blends each patch cell with the colormap of its normalized weight:
// out = (1-alpha) * pixel + alpha * colormap(w'). Pixels outside the tiled
// grid (dropped trailing edges) are untouched.
SourceImage render_overlay(const SourceImage& img, const Heatmap& heatmap, double alpha);

// recall@k against ground-truth cells: |top-k ∩ truth| / min(k, |truth|).
// Ties in the top-k rank toward the lower row-major index.
double localization_score(const Heatmap& heatmap, const std::vector<int>& truth_cells, int k);

// Raw weights as a rows x cols CSV grid.
void write_heatmap_csv(const std::string& path, const Heatmap& heatmap);

}  // namespace amil
