#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "amil/image.hpp"
#include "amil/tensor.hpp"

namespace amil {

struct TilingSpec {
    std::int64_t patch_size = 28;
    std::int64_t stride = 28;
};

// All patches tiled from one source image, in row-major grid order, so
// instance index p maps deterministically to an image position.
template <std::floating_point S>
struct Bag {
    std::vector<Tensor<S>> patches;            // each [3 x s x s], values in [0,1]
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<std::pair<int, int>> origins;  // top-left (x, y) per patch
    int label = 0;
    std::string source_id;

    std::int64_t size() const { return static_cast<std::int64_t>(patches.size()); }
};

inline void validate_tiling(const TilingSpec& spec) {
    if (spec.patch_size < 1 || spec.stride < 1)
        throw ContractError("tiling spec requires patch_size >= 1 and stride >= 1");
}

// Grid arithmetic shared by tiling and the heatmap renderer. Trailing pixels
// that do not fit a full patch are dropped.
inline std::pair<std::int64_t, std::int64_t> tile_grid(int width, int height,
                                                       const TilingSpec& spec) {
    validate_tiling(spec);
    if (width < spec.patch_size || height < spec.patch_size)
        throw GeometryError("image " + std::to_string(width) + "x" + std::to_string(height) +
                            " is smaller than one " + std::to_string(spec.patch_size) +
                            "-pixel patch");
    const std::int64_t rows = (height - spec.patch_size) / spec.stride + 1;
    const std::int64_t cols = (width - spec.patch_size) / spec.stride + 1;
    return {rows, cols};
}

// Cuts the image into a bag of patch tensors, pixel values scaled by 1/255.
template <std::floating_point S>
Bag<S> tile(const SourceImage& img, const TilingSpec& spec) {
    const auto [rows, cols] = tile_grid(img.width, img.height, spec);
    const std::int64_t s = spec.patch_size;
    Bag<S> bag;
    bag.rows = rows;
    bag.cols = cols;
    bag.label = img.label;
    bag.source_id = img.id;
    bag.patches.reserve(static_cast<std::size_t>(rows * cols));
    bag.origins.reserve(static_cast<std::size_t>(rows * cols));
    constexpr S inv255 = S(1) / S(255);
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            const int x0 = static_cast<int>(c * spec.stride);
            const int y0 = static_cast<int>(r * spec.stride);
            Tensor<S> patch(Shape{3, s, s});
            S* pd = patch.data();
            for (std::int64_t ch = 0; ch < 3; ++ch)
                for (std::int64_t py = 0; py < s; ++py) {
                    const std::uint8_t* src = img.px(x0, y0 + static_cast<int>(py)) + ch;
                    S* dst = pd + (ch * s + py) * s;
                    for (std::int64_t px = 0; px < s; ++px) dst[px] = static_cast<S>(src[px * 3]) * inv255;
                }
            bag.patches.push_back(std::move(patch));
            bag.origins.emplace_back(x0, y0);
        }
    }
    return bag;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

enum class Transform { identity, hflip, vflip, rot90, rot180, rot270 };

constexpr int kNumTransforms = 6;

// Exact pixel permutation, no interpolation; the label rides along.
// rot90 turns the image clockwise (width and height swap).
SourceImage augment(const SourceImage& img, Transform t);

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

// Reads a two-column `path,label` CSV (header line optional) and loads one
// image per row, paths resolved against root_dir, in file order.
std::vector<SourceImage> load_dataset(const std::string& root_dir,
                                      const std::string& labels_csv);

// Seeded shuffle, then the first floor(n * fraction) images become the
// training set. Disjoint and exhaustive; identical for identical seeds.
std::pair<std::vector<SourceImage>, std::vector<SourceImage>> split_train_val(
    const std::vector<SourceImage>& dataset, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// synthetic bags
// ---------------------------------------------------------------------------

struct SynthSpec {
    int n_bags = 0;
    std::int64_t grid_rows = 5;
    std::int64_t grid_cols = 5;
    std::int64_t patch_size = 28;
    double positive_fraction = 0.5;
    double motif_rate = 0.15;
    std::uint64_t seed = 0;
};

struct SynthDataset {
    std::vector<SourceImage> images;          // labeled, ids bag_0000...
    std::vector<std::vector<int>> truth_cells;  // row-major motif cells per image
};

// Smooth light noise everywhere; each positive image carries a dark disc in
// at least one patch cell (cells drawn independently at motif_rate, redrawn
// until one hits). The bag label is positive exactly when a motif exists, and
// the generator reports the ground-truth motif cells for localization scoring.
SynthDataset synth_generate(const SynthSpec& spec);

// Ground-truth motif cells as CSV: `path,cells` with `;`-separated row-major
// cell indices (empty for negative bags).
void write_truth_csv(const std::string& path, const std::vector<std::string>& ids,
                     const std::vector<std::vector<int>>& cells);
std::vector<std::pair<std::string, std::vector<int>>> read_truth_csv(const std::string& path);

void write_labels_csv(const std::string& path, const std::vector<std::string>& ids,
                      const std::vector<int>& labels);

}  // namespace amil
