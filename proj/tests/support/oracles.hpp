#pragma once

// Brute-force reference implementations used as independent oracles. These
// never call into the library's operator code paths: plain scalar loops only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

// C[m x n] = A[m x k] * B[k x n], triple loop.
inline std::vector<double> matmul(const std::vector<double>& A, const std::vector<double>& B,
                                  std::int64_t m, std::int64_t k, std::int64_t n) {
    std::vector<double> C(static_cast<std::size_t>(m * n), 0.0);
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
            C[i * n + j] = acc;
        }
    return C;
}

// Valid cross-correlation, six nested loops.
inline std::vector<double> conv2d(const std::vector<double>& x, std::int64_t Ci, std::int64_t H,
                                  std::int64_t W, const std::vector<double>& k, std::int64_t Co,
                                  std::int64_t K, const std::vector<double>& bias,
                                  std::int64_t stride) {
    const std::int64_t Ho = (H - K) / stride + 1;
    const std::int64_t Wo = (W - K) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(Co * Ho * Wo), 0.0);
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t oh = 0; oh < Ho; ++oh)
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
                double acc = bias[co];
                for (std::int64_t ci = 0; ci < Ci; ++ci)
                    for (std::int64_t i = 0; i < K; ++i)
                        for (std::int64_t j = 0; j < K; ++j)
                            acc += x[(ci * H + oh * stride + i) * W + ow * stride + j] *
                                   k[((co * Ci + ci) * K + i) * K + j];
                out[(co * Ho + oh) * Wo + ow] = acc;
            }
    return out;
}

// Per-window maximum scan.
inline std::vector<double> maxpool2d(const std::vector<double>& x, std::int64_t C, std::int64_t H,
                                     std::int64_t W, std::int64_t win) {
    const std::int64_t Ho = H / win, Wo = W / win;
    std::vector<double> out(static_cast<std::size_t>(C * Ho * Wo));
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t oh = 0; oh < Ho; ++oh)
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
                double best = -1e300;
                for (std::int64_t i = 0; i < win; ++i)
                    for (std::int64_t j = 0; j < win; ++j)
                        best = std::max(best, x[(c * H + oh * win + i) * W + ow * win + j]);
                out[(c * Ho + oh) * Wo + ow] = best;
            }
    return out;
}

// Softmax at long double precision, max-shifted.
inline std::vector<double> softmax(const std::vector<double>& x) {
    long double mx = x[0];
    for (double v : x) mx = std::max<long double>(mx, v);
    long double total = 0.0L;
    std::vector<long double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = expl(static_cast<long double>(x[i]) - mx);
        total += e[i];
    }
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / total);
    return out;
}

// Literal transcription of the attention weight formula:
// a_p = exp(w^T tanh(V h_p^T)) / sum_j exp(w^T tanh(V h_j^T)).
inline std::vector<double> attention_weights(const std::vector<double>& H, std::int64_t m,
                                             std::int64_t L, const std::vector<double>& V,
                                             std::int64_t D, const std::vector<double>& w) {
    std::vector<double> score(static_cast<std::size_t>(m), 0.0);
    for (std::int64_t p = 0; p < m; ++p) {
        double s = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            double vh = 0.0;
            for (std::int64_t l = 0; l < L; ++l) vh += V[d * L + l] * H[p * L + l];
            s += w[d] * std::tanh(vh);
        }
        score[static_cast<std::size_t>(p)] = s;
    }
    double total = 0.0;
    std::vector<double> a(static_cast<std::size_t>(m));
    for (std::int64_t p = 0; p < m; ++p) total += std::exp(score[static_cast<std::size_t>(p)]);
    for (std::int64_t p = 0; p < m; ++p)
        a[static_cast<std::size_t>(p)] = std::exp(score[static_cast<std::size_t>(p)]) / total;
    return a;
}

// z = sum_p a_p h_p, scalar loops.
inline std::vector<double> aggregate(const std::vector<double>& H, std::int64_t m, std::int64_t L,
                                     const std::vector<double>& a) {
    std::vector<double> z(static_cast<std::size_t>(L), 0.0);
    for (std::int64_t p = 0; p < m; ++p)
        for (std::int64_t l = 0; l < L; ++l) z[l] += a[p] * H[p * L + l];
    return z;
}

inline std::vector<double> colwise_max(const std::vector<double>& H, std::int64_t m,
                                       std::int64_t L) {
    std::vector<double> out(static_cast<std::size_t>(L), -1e300);
    for (std::int64_t p = 0; p < m; ++p)
        for (std::int64_t l = 0; l < L; ++l) out[l] = std::max(out[l], H[p * L + l]);
    return out;
}

inline std::vector<double> colwise_mean(const std::vector<double>& H, std::int64_t m,
                                        std::int64_t L) {
    std::vector<double> out(static_cast<std::size_t>(L), 0.0);
    for (std::int64_t p = 0; p < m; ++p)
        for (std::int64_t l = 0; l < L; ++l) out[l] += H[p * L + l];
    for (auto& v : out) v /= static_cast<double>(m);
    return out;
}

// Tiling grid by exhaustive scan: counts placements where a patch fits.
inline std::pair<std::int64_t, std::int64_t> tile_grid_scan(std::int64_t W, std::int64_t H,
                                                            std::int64_t s, std::int64_t stride) {
    std::int64_t rows = 0, cols = 0;
    for (std::int64_t y = 0; y + s <= H; y += stride) ++rows;
    for (std::int64_t x = 0; x + s <= W; x += stride) ++cols;
    return {rows, cols};
}

// recall@k by full sort and set intersection; ties broken toward the lower index.
inline double recall_at_k(const std::vector<double>& cells, const std::vector<int>& truth,
                          int k) {
    std::vector<int> idx(cells.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return cells[a] > cells[b]; });
    int hits = 0;
    for (int i = 0; i < k && i < static_cast<int>(idx.size()); ++i)
        if (std::find(truth.begin(), truth.end(), idx[i]) != truth.end()) ++hits;
    const int denom = std::min<int>(k, static_cast<int>(truth.size()));
    return denom == 0 ? 0.0 : static_cast<double>(hits) / denom;
}

}  // namespace oracle
