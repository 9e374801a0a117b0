#include "amil/bags.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "amil/rng.hpp"

namespace amil {

SourceImage augment(const SourceImage& img, Transform t) {
    if (t == Transform::identity) return img;
    const int W = img.width, H = img.height;
    const bool swaps = t == Transform::rot90 || t == Transform::rot270;
    SourceImage out = make_image(swaps ? H : W, swaps ? W : H);
    out.label = img.label;
    out.id = img.id;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            int ox = 0, oy = 0;
            switch (t) {
                case Transform::hflip: ox = W - 1 - x; oy = y; break;
                case Transform::vflip: ox = x; oy = H - 1 - y; break;
                case Transform::rot90: ox = H - 1 - y; oy = x; break;     // clockwise
                case Transform::rot180: ox = W - 1 - x; oy = H - 1 - y; break;
                case Transform::rot270: ox = y; oy = W - 1 - x; break;
                case Transform::identity: break;
            }
            const std::uint8_t* s = img.px(x, y);
            std::uint8_t* d = out.px(ox, oy);
            d[0] = s[0];
            d[1] = s[1];
            d[2] = s[2];
        }
    }
    return out;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

bool iequals(const std::string& a, const std::string& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    return true;
}

}  // namespace

std::vector<SourceImage> load_dataset(const std::string& root_dir,
                                      const std::string& labels_csv) {
    std::ifstream in(labels_csv);
    if (!in) throw IngestionError("cannot open labels file: " + labels_csv);
    std::vector<SourceImage> out;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (row == 1 && iequals(t, "path,label")) continue;  // optional header
        const auto comma = t.rfind(',');
        if (comma == std::string::npos)
            throw IngestionError("labels row " + std::to_string(row) + " is not `path,label`: " +
                                 t);
        const std::string path = trim(t.substr(0, comma));
        const std::string label_s = trim(t.substr(comma + 1));
        if (path.empty())
            throw IngestionError("labels row " + std::to_string(row) + " has an empty path");
        if (label_s != "0" && label_s != "1")
            throw IngestionError("labels row " + std::to_string(row) + " has non-binary label `" +
                                 label_s + "`");
        const std::string full = (std::filesystem::path(root_dir) / path).string();
        SourceImage img;
        try {
            img = read_image(full);
        } catch (const Error& e) {
            throw IngestionError("labels row " + std::to_string(row) + ": " + e.what());
        }
        img.label = label_s == "1" ? 1 : 0;
        img.id = path;
        out.push_back(std::move(img));
    }
    return out;
}

std::pair<std::vector<SourceImage>, std::vector<SourceImage>> split_train_val(
    const std::vector<SourceImage>& dataset, double fraction, std::uint64_t seed) {
    if (dataset.empty()) throw ContractError("split_train_val: dataset is empty");
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ContractError("split_train_val: fraction must lie in (0, 1), got " +
                            std::to_string(fraction));
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = rng_for(seed, {stream::kSplit});
    rng.shuffle(idx);
    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(static_cast<double>(dataset.size()) * fraction));
    std::pair<std::vector<SourceImage>, std::vector<SourceImage>> out;
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_train ? out.first : out.second).push_back(dataset[idx[i]]);
    return out;
}

namespace {

// Smooth per-image background: coarse value grid blown up bilinearly, plus a
// little per-pixel jitter. Bright enough never to look like a motif.
void fill_background(SourceImage& img, Rng& rng) {
    const int W = img.width, H = img.height;
    const int cell = 16;
    const int gw = W / cell + 2, gh = H / cell + 2;
    std::vector<double> base(3);
    for (auto& b : base) b = rng.uniform(150.0, 215.0);
    std::vector<double> grid(static_cast<std::size_t>(gw * gh * 3));
    for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j)
            for (int c = 0; c < 3; ++c)
                grid[static_cast<std::size_t>((i * gw + j) * 3 + c)] =
                    base[static_cast<std::size_t>(c)] + rng.uniform(-28.0, 28.0);
    for (int y = 0; y < H; ++y) {
        const int gy = y / cell;
        const double fy = static_cast<double>(y % cell) / cell;
        for (int x = 0; x < W; ++x) {
            const int gx = x / cell;
            const double fx = static_cast<double>(x % cell) / cell;
            std::uint8_t* px = img.px(x, y);
            const double jitter = rng.uniform(-5.0, 5.0);
            for (int c = 0; c < 3; ++c) {
                const double v00 = grid[static_cast<std::size_t>((gy * gw + gx) * 3 + c)];
                const double v01 = grid[static_cast<std::size_t>((gy * gw + gx + 1) * 3 + c)];
                const double v10 = grid[static_cast<std::size_t>(((gy + 1) * gw + gx) * 3 + c)];
                const double v11 = grid[static_cast<std::size_t>(((gy + 1) * gw + gx + 1) * 3 + c)];
                const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                 fy * ((1 - fx) * v10 + fx * v11) + jitter;
                px[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        }
    }
}

// Dark filled disc, kept strictly inside its patch cell.
void draw_motif(SourceImage& img, std::int64_t cell_row, std::int64_t cell_col,
                std::int64_t patch, Rng& rng) {
    const double cx = static_cast<double>(cell_col * patch) + patch / 2.0 +
                      rng.uniform(-0.08, 0.08) * static_cast<double>(patch);
    const double cy = static_cast<double>(cell_row * patch) + patch / 2.0 +
                      rng.uniform(-0.08, 0.08) * static_cast<double>(patch);
    const double radius = rng.uniform(0.24, 0.36) * static_cast<double>(patch);
    std::uint8_t shade[3];
    for (auto& s : shade) s = static_cast<std::uint8_t>(rng.uniform(10.0, 55.0));
    const int x0 = std::max(0, static_cast<int>(cx - radius) - 1);
    const int x1 = std::min(img.width - 1, static_cast<int>(cx + radius) + 1);
    const int y0 = std::max(0, static_cast<int>(cy - radius) - 1);
    const int y1 = std::min(img.height - 1, static_cast<int>(cy + radius) + 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= radius * radius) {
                std::uint8_t* px = img.px(x, y);
                px[0] = shade[0];
                px[1] = shade[1];
                px[2] = shade[2];
            }
        }
}

}  // namespace

SynthDataset synth_generate(const SynthSpec& spec) {
    if (spec.n_bags < 1) throw ContractError("synth_generate: need at least one bag");
    if (spec.grid_rows < 1 || spec.grid_cols < 1 || spec.patch_size < 1)
        throw ContractError("synth_generate: grid and patch size must be positive");
    if (!(spec.motif_rate > 0.0 && spec.motif_rate <= 1.0))
        throw ContractError("synth_generate: motif_rate must lie in (0, 1]");
    if (spec.positive_fraction < 0.0 || spec.positive_fraction > 1.0)
        throw ContractError("synth_generate: positive_fraction must lie in [0, 1]");

    const int n = spec.n_bags;
    const int n_pos = static_cast<int>(std::lround(spec.positive_fraction * n));
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    std::fill(labels.begin(), labels.begin() + n_pos, 1);
    {
        Rng rng = rng_for(spec.seed, {stream::kSynth, 0});
        rng.shuffle(labels);
    }

    const std::int64_t cells = spec.grid_rows * spec.grid_cols;
    SynthDataset ds;
    ds.images.reserve(static_cast<std::size_t>(n));
    ds.truth_cells.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng = rng_for(spec.seed, {stream::kSynth, static_cast<std::uint64_t>(i) + 1});
        SourceImage img = make_image(static_cast<int>(spec.grid_cols * spec.patch_size),
                                     static_cast<int>(spec.grid_rows * spec.patch_size));
        fill_background(img, rng);
        img.label = labels[static_cast<std::size_t>(i)];
        char name[32];
        std::snprintf(name, sizeof name, "bag_%04d.png", i);
        img.id = name;
        if (img.label == 1) {
            auto& truth = ds.truth_cells[static_cast<std::size_t>(i)];
            while (truth.empty()) {
                for (std::int64_t cidx = 0; cidx < cells; ++cidx)
                    if (rng.bernoulli(spec.motif_rate)) truth.push_back(static_cast<int>(cidx));
            }
            for (int cidx : truth)
                draw_motif(img, cidx / spec.grid_cols, cidx % spec.grid_cols, spec.patch_size,
                           rng);
        }
        ds.images.push_back(std::move(img));
    }
    return ds;
}

void write_labels_csv(const std::string& path, const std::vector<std::string>& ids,
                      const std::vector<int>& labels) {
    if (ids.size() != labels.size()) throw ContractError("labels csv: ids/labels size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create file: " + path);
    out << "path,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << ',' << labels[i] << '\n';
}

void write_truth_csv(const std::string& path, const std::vector<std::string>& ids,
                     const std::vector<std::vector<int>>& cells) {
    if (ids.size() != cells.size()) throw ContractError("truth csv: ids/cells size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create file: " + path);
    out << "path,cells\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out << ids[i] << ',';
        for (std::size_t j = 0; j < cells[i].size(); ++j) out << (j ? ";" : "") << cells[i][j];
        out << '\n';
    }
}

std::vector<std::pair<std::string, std::vector<int>>> read_truth_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open truth file: " + path);
    std::vector<std::pair<std::string, std::vector<int>>> out;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (row == 1 && iequals(t, "path,cells")) continue;
        const auto comma = t.rfind(',');
        if (comma == std::string::npos)
            throw IngestionError("truth row " + std::to_string(row) + " is not `path,cells`");
        std::vector<int> cells;
        std::stringstream ss(t.substr(comma + 1));
        std::string tok;
        while (std::getline(ss, tok, ';')) {
            tok = trim(tok);
            if (!tok.empty()) cells.push_back(std::stoi(tok));
        }
        out.emplace_back(trim(t.substr(0, comma)), std::move(cells));
    }
    return out;
}

}  // namespace amil
