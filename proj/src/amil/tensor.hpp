#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "amil/errors.hpp"
#include "amil/rng.hpp"

namespace amil {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

template <std::floating_point S>
struct TensorData {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty = zero everywhere; sized lazily on first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
    }
};

}  // namespace detail

// Dense row-major tensor. Copying a Tensor copies a handle to shared storage
// (tape closures and the caller must see the same buffer); clone() deep-copies.
template <std::floating_point S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : d_(std::make_shared<detail::TensorData<S>>()) {
        for (auto e : shape)
            if (e <= 0)
                throw ContractError("tensor extents must be positive, got " + shape_str(shape));
        d_->value.assign(static_cast<std::size_t>(numel(shape)), S(0));
        d_->shape = std::move(shape);
        d_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), requires_grad);
    }

    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.d_->value.begin(), t.d_->value.end(), v);
        return t;
    }

    static Tensor scalar(S v) {
        Tensor t(Shape{1});
        t.d_->value[0] = v;
        return t;
    }

    static Tensor from_vector(Shape shape, std::vector<S> values, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        if (static_cast<std::int64_t>(values.size()) != t.size())
            throw DimensionError("value count " + std::to_string(values.size()) +
                                 " does not fill shape " + shape_str(t.shape()));
        t.d_->value = std::move(values);
        return t;
    }

    static Tensor uniform(Shape shape, S lo, S hi, Rng& rng, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        for (auto& v : t.d_->value) v = static_cast<S>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(d_->value.size()); }
    std::int64_t dim(std::size_t i) const { return d_->shape[i]; }
    std::size_t rank() const { return d_->shape.size(); }

    S* data() { return d_->value.data(); }
    const S* data() const { return d_->value.data(); }
    S& operator[](std::int64_t i) { return d_->value[static_cast<std::size_t>(i)]; }
    S operator[](std::int64_t i) const { return d_->value[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }

    bool has_grad() const { return !d_->grad.empty(); }
    S* grad() { return d_->grad.empty() ? nullptr : d_->grad.data(); }
    const S* grad() const { return d_->grad.empty() ? nullptr : d_->grad.data(); }
    S* ensure_grad() {
        d_->ensure_grad();
        return d_->grad.data();
    }
    void zero_grad() {
        std::fill(d_->grad.begin(), d_->grad.end(), S(0));
    }

    S item() const {
        if (size() != 1)
            throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
        return d_->value[0];
    }

    Tensor clone() const {
        Tensor t(d_->shape, d_->requires_grad);
        t.d_->value = d_->value;
        return t;
    }

    std::shared_ptr<detail::TensorData<S>> ptr() const { return d_; }

private:
    std::shared_ptr<detail::TensorData<S>> d_;
};

// Ordered record of executed operations. backward() replays the adjoints in
// reverse execution order, once each; gradients accumulate additively where a
// tensor feeds several consumers. One tape serves one thread.
template <std::floating_point S>
class Tape {
public:
    void record(std::function<void()> backfn) { nodes_.push_back(std::move(backfn)); }

    std::size_t num_ops() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    void backward(Tensor<S> loss) {
        if (loss.size() != 1)
            throw ContractError("backward() requires a scalar loss, got " +
                                shape_str(loss.shape()));
        loss.ensure_grad()[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <std::floating_point S>
inline bool want_grad(const Tape<S>* tape, std::initializer_list<const Tensor<S>*> ins) {
    if (!tape) return false;
    for (auto* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    if (detail::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto da = a.ptr(), db = b.ptr(), dout = out.ptr();
        tape->record([da, db, dout] {
            if (dout->grad.empty()) return;
            const std::size_t n = dout->grad.size();
            if (da->requires_grad) {
                da->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) da->grad[i] += dout->grad[i];
            }
            if (db->requires_grad) {
                db->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) db->grad[i] += dout->grad[i];
            }
        });
    }
    return out;
}

template <std::floating_point S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    if (detail::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto da = a.ptr(), db = b.ptr(), dout = out.ptr();
        tape->record([da, db, dout] {
            if (dout->grad.empty()) return;
            const std::size_t n = dout->grad.size();
            if (da->requires_grad) {
                da->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) da->grad[i] += dout->grad[i] * db->value[i];
            }
            if (db->requires_grad) {
                db->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) db->grad[i] += dout->grad[i] * da->value[i];
            }
        });
    }
    return out;
}

template <std::floating_point S>
Tensor<S> scale(const Tensor<S>& a, S c, std::type_identity_t<Tape<S>*> tape) {
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = c * pa[i];
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout, c] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            for (std::size_t i = 0; i < dout->grad.size(); ++i)
                da->grad[i] += c * dout->grad[i];
        });
    }
    return out;
}

template <std::floating_point S>
Tensor<S> relu(const Tensor<S>& a, std::type_identity_t<Tape<S>*> tape) {
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            // subgradient at 0 is 0
            for (std::size_t i = 0; i < dout->grad.size(); ++i)
                da->grad[i] += da->value[i] > S(0) ? dout->grad[i] : S(0);
        });
    }
    return out;
}

template <std::floating_point S>
Tensor<S> tanh(const Tensor<S>& a, std::type_identity_t<Tape<S>*> tape) {
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = std::tanh(pa[i]);
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            for (std::size_t i = 0; i < dout->grad.size(); ++i) {
                const S y = dout->value[i];
                da->grad[i] += (S(1) - y * y) * dout->grad[i];
            }
        });
    }
    return out;
}

template <std::floating_point S>
Tensor<S> sigmoid(const Tensor<S>& a, std::type_identity_t<Tape<S>*> tape) {
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    S* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const S x = pa[i];
        po[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                          : std::exp(x) / (S(1) + std::exp(x));
    }
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            for (std::size_t i = 0; i < dout->grad.size(); ++i) {
                const S y = dout->value[i];
                da->grad[i] += y * (S(1) - y) * dout->grad[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape, std::type_identity_t<Tape<S>*> tape) {
    if (numel(shape) != a.size())
        throw DimensionError("reshape: " + shape_str(a.shape()) + " has " +
                             std::to_string(a.size()) + " elements, target " +
                             shape_str(shape) + " wants " + std::to_string(numel(shape)));
    Tensor<S> out(std::move(shape));
    std::copy(a.data(), a.data() + a.size(), out.data());
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            for (std::size_t i = 0; i < dout->grad.size(); ++i) da->grad[i] += dout->grad[i];
        });
    }
    return out;
}

template <std::floating_point S>
Tensor<S> transpose(const Tensor<S>& a, std::type_identity_t<Tape<S>*> tape) {
    if (a.rank() != 2)
        throw DimensionError("transpose: expected a matrix, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    Tensor<S> out(Shape{n, m});
    const S* pa = a.data();
    S* po = out.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout, m, n] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t i = 0; i < m; ++i)
                    da->grad[static_cast<std::size_t>(i * n + j)] +=
                        dout->grad[static_cast<std::size_t>(j * m + i)];
        });
    }
    return out;
}

// Stacks rank-1 tensors of equal length into one [m x L] matrix.
template <std::floating_point S>
Tensor<S> stack_rows(std::span<const Tensor<S>> rows, std::type_identity_t<Tape<S>*> tape) {
    if (rows.empty()) throw ContractError("stack_rows: no rows given");
    const std::int64_t L = rows[0].size();
    for (const auto& r : rows) {
        if (r.rank() != 1 || r.size() != L)
            throw DimensionError("stack_rows: row shape " + shape_str(r.shape()) +
                                 " does not match length " + std::to_string(L));
    }
    const std::int64_t m = static_cast<std::int64_t>(rows.size());
    Tensor<S> out(Shape{m, L});
    S* po = out.data();
    bool any_grad = false;
    for (std::int64_t i = 0; i < m; ++i) {
        std::copy(rows[i].data(), rows[i].data() + L, po + i * L);
        any_grad = any_grad || rows[i].requires_grad();
    }
    if (tape && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<detail::TensorData<S>>> ins;
        ins.reserve(rows.size());
        for (const auto& r : rows) ins.push_back(r.ptr());
        auto dout = out.ptr();
        tape->record([ins = std::move(ins), dout, L] {
            if (dout->grad.empty()) return;
            for (std::size_t i = 0; i < ins.size(); ++i) {
                if (!ins[i]->requires_grad) continue;
                ins[i]->ensure_grad();
                const S* g = dout->grad.data() + i * static_cast<std::size_t>(L);
                for (std::int64_t j = 0; j < L; ++j) ins[i]->grad[static_cast<std::size_t>(j)] += g[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> sum(const Tensor<S>& a, std::type_identity_t<Tape<S>*> tape) {
    Tensor<S> out(Shape{1});
    S acc = 0;
    const S* pa = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i) acc += pa[i];
    out.data()[0] = acc;
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            const S g = dout->grad[0];
            for (auto& v : da->grad) v += g;
        });
    }
    return out;
}

// Per-column maximum of an [m x L] matrix; gradient goes to the first
// (lowest row index) maximal element of each column.
template <std::floating_point S>
Tensor<S> colwise_max(const Tensor<S>& a, std::type_identity_t<Tape<S>*> tape) {
    if (a.rank() != 2)
        throw DimensionError("colwise_max: expected a matrix, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), L = a.dim(1);
    Tensor<S> out(Shape{L});
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(L), 0);
    const S* pa = a.data();
    S* po = out.data();
    for (std::int64_t j = 0; j < L; ++j) po[j] = pa[j];
    for (std::int64_t i = 1; i < m; ++i) {
        const S* row = pa + i * L;
        for (std::int64_t j = 0; j < L; ++j) {
            if (row[j] > po[j]) {
                po[j] = row[j];
                argmax[static_cast<std::size_t>(j)] = static_cast<std::int32_t>(i);
            }
        }
    }
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout, argmax = std::move(argmax), L] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            for (std::int64_t j = 0; j < L; ++j)
                da->grad[static_cast<std::size_t>(argmax[static_cast<std::size_t>(j)] * L + j)] +=
                    dout->grad[static_cast<std::size_t>(j)];
        });
    }
    return out;
}

template <std::floating_point S>
Tensor<S> colwise_mean(const Tensor<S>& a, std::type_identity_t<Tape<S>*> tape) {
    if (a.rank() != 2)
        throw DimensionError("colwise_mean: expected a matrix, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), L = a.dim(1);
    Tensor<S> out(Shape{L});
    const S* pa = a.data();
    S* po = out.data();
    // accumulate row * (1/m) term by term: identical arithmetic to a weighted
    // sum with uniform weights 1/m
    const S inv = S(1) / static_cast<S>(m);
    for (std::int64_t i = 0; i < m; ++i) {
        const S* row = pa + i * L;
        for (std::int64_t j = 0; j < L; ++j) po[j] += row[j] * inv;
    }
    if (detail::want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        auto da = a.ptr();
        auto dout = out.ptr();
        tape->record([da, dout, m, L, inv] {
            if (dout->grad.empty()) return;
            da->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i) {
                S* g = da->grad.data() + i * L;
                for (std::int64_t j = 0; j < L; ++j)
                    g[j] += inv * dout->grad[static_cast<std::size_t>(j)];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[m x n] += A[m x k] * B[k x n], row-major, j contiguous in the inner loop.
template <std::floating_point S>
inline void gemm_acc(const S* A, const S* B, S* C, std::int64_t m, std::int64_t k,
                     std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const S* arow = A + i * k;
        S* crow = C + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const S a = arow[p];
            const S* brow = B + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// Dot product with eight independent accumulator lanes so the compiler can
// vectorize the reduction without reassociating a single serial chain.
template <std::floating_point S>
inline S dot(const S* a, const S* b, std::int64_t n) {
    constexpr std::int64_t L = 8;
    S lanes[L] = {};
    std::int64_t t = 0;
    for (; t + L <= n; t += L)
        for (std::int64_t l = 0; l < L; ++l) lanes[l] += a[t + l] * b[t + l];
    S acc = 0;
    for (std::int64_t l = 0; l < L; ++l) acc += lanes[l];
    for (; t < n; ++t) acc += a[t] * b[t];
    return acc;
}

// C[m x n] += A[m x p] * B^T where B is [n x p]; rows of A and B are dotted.
template <std::floating_point S>
inline void gemm_abt_acc(const S* A, const S* B, S* C, std::int64_t m, std::int64_t p,
                         std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const S* arow = A + i * p;
        S* crow = C + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += dot(arow, B + j * p, p);
    }
}

}  // namespace detail

template <std::floating_point S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, std::type_identity_t<Tape<S>*> tape) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                             shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out(Shape{m, n});
    detail::gemm_acc(a.data(), b.data(), out.data(), m, k, n);
    if (detail::want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        auto da = a.ptr(), db = b.ptr(), dout = out.ptr();
        tape->record([da, db, dout, m, k, n] {
            if (dout->grad.empty()) return;
            const S* G = dout->grad.data();
            if (da->requires_grad) {
                da->ensure_grad();
                // gA[i,p] += sum_j G[i,j] * B[p,j]
                detail::gemm_abt_acc(G, db->value.data(), da->grad.data(), m, n, k);
            }
            if (db->requires_grad) {
                db->ensure_grad();
                // gB[p,j] += sum_i A[i,p] * G[i,j]
                S* gB = db->grad.data();
                const S* A = da->value.data();
                for (std::int64_t i = 0; i < m; ++i) {
                    const S* arow = A + i * k;
                    const S* grow = G + i * n;
                    for (std::int64_t p = 0; p < k; ++p) {
                        const S av = arow[p];
                        S* gbrow = gB + p * n;
                        for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution / pooling
// ---------------------------------------------------------------------------

// Valid (unpadded) cross-correlation of x[Cin x H x W] with kernels
// [Cout x Cin x K x K] plus per-channel bias, square kernel, given stride.
template <std::floating_point S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernels, const Tensor<S>& bias,
                 std::int64_t stride, std::type_identity_t<Tape<S>*> tape) {
    if (x.rank() != 3 || kernels.rank() != 4)
        throw DimensionError("conv2d: expected x[C x H x W] and kernels[Co x Ci x K x K], got " +
                             shape_str(x.shape()) + " and " + shape_str(kernels.shape()));
    const std::int64_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::int64_t Co = kernels.dim(0), K = kernels.dim(2);
    if (kernels.dim(1) != Ci)
        throw DimensionError("conv2d: kernel input channels " + shape_str(kernels.shape()) +
                             " do not match input " + shape_str(x.shape()));
    if (kernels.dim(3) != K)
        throw DimensionError("conv2d: kernels must be square, got " + shape_str(kernels.shape()));
    if (bias.rank() != 1 || bias.dim(0) != Co)
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " must have length " +
                             std::to_string(Co));
    if (stride < 1) throw ContractError("conv2d: stride must be positive");
    if (H < K || W < K || (H - K) % stride != 0 || (W - K) % stride != 0)
        throw GeometryError("conv2d: input " + shape_str(x.shape()) + " with kernel " +
                            std::to_string(K) + " and stride " + std::to_string(stride) +
                            " has no integral output extent");
    const std::int64_t Ho = (H - K) / stride + 1;
    const std::int64_t Wo = (W - K) / stride + 1;
    const std::int64_t R = Ci * K * K;   // im2col rows
    const std::int64_t N = Ho * Wo;      // output pixels per channel

    // im2col: col[(ci,kh,kw)][oh*Wo+ow] = x[ci][oh*stride+kh][ow*stride+kw],
    // then out = kernels_flat[Co x R] * col[R x N] plus bias.
    std::vector<S> col(static_cast<std::size_t>(R * N));
    {
        const S* px = x.data();
        S* pc = col.data();
        for (std::int64_t ci = 0; ci < Ci; ++ci) {
            const S* xplane = px + ci * H * W;
            for (std::int64_t kh = 0; kh < K; ++kh) {
                for (std::int64_t kw = 0; kw < K; ++kw) {
                    for (std::int64_t oh = 0; oh < Ho; ++oh) {
                        const S* xrow = xplane + (oh * stride + kh) * W + kw;
                        if (stride == 1) {
                            std::copy(xrow, xrow + Wo, pc);
                            pc += Wo;
                        } else {
                            for (std::int64_t ow = 0; ow < Wo; ++ow) *pc++ = xrow[ow * stride];
                        }
                    }
                }
            }
        }
    }

    Tensor<S> out(Shape{Co, Ho, Wo});
    {
        S* po = out.data();
        const S* pb = bias.data();
        for (std::int64_t co = 0; co < Co; ++co)
            std::fill(po + co * N, po + (co + 1) * N, pb[co]);
        detail::gemm_acc(kernels.data(), col.data(), po, Co, R, N);
    }

    if (detail::want_grad(tape, {&x, &kernels, &bias})) {
        out.set_requires_grad(true);
        auto dx = x.ptr(), dk = kernels.ptr(), db = bias.ptr(), dout = out.ptr();
        tape->record([dx, dk, db, dout, col = std::move(col), Ci, H, W, Co, K, Ho, Wo, R, N,
                      stride] {
            if (dout->grad.empty()) return;
            const S* G = dout->grad.data();
            if (db->requires_grad) {
                db->ensure_grad();
                for (std::int64_t co = 0; co < Co; ++co) {
                    const S* gplane = G + co * N;
                    S acc = 0;
                    for (std::int64_t i = 0; i < N; ++i) acc += gplane[i];
                    db->grad[static_cast<std::size_t>(co)] += acc;
                }
            }
            if (dk->requires_grad) {
                dk->ensure_grad();
                // gK[co, r] += sum_j G[co, j] * col[r, j]
                detail::gemm_abt_acc(G, col.data(), dk->grad.data(), Co, N, R);
            }
            if (dx->requires_grad) {
                dx->ensure_grad();
                // gcol = kernels^T[R x Co] * G[Co x N], then scatter back to x
                std::vector<S> kt(static_cast<std::size_t>(R * Co));
                const S* pk = dk->value.data();
                for (std::int64_t co = 0; co < Co; ++co)
                    for (std::int64_t r = 0; r < R; ++r)
                        kt[static_cast<std::size_t>(r * Co + co)] = pk[co * R + r];
                std::vector<S> gcol(static_cast<std::size_t>(R * N), S(0));
                detail::gemm_acc(kt.data(), G, gcol.data(), R, Co, N);
                const S* pg = gcol.data();
                for (std::int64_t ci = 0; ci < Ci; ++ci) {
                    S* gxplane = dx->grad.data() + ci * H * W;
                    for (std::int64_t kh = 0; kh < K; ++kh) {
                        for (std::int64_t kw = 0; kw < K; ++kw) {
                            for (std::int64_t oh = 0; oh < Ho; ++oh) {
                                S* gxrow = gxplane + (oh * stride + kh) * W + kw;
                                if (stride == 1) {
                                    for (std::int64_t ow = 0; ow < Wo; ++ow) gxrow[ow] += pg[ow];
                                } else {
                                    for (std::int64_t ow = 0; ow < Wo; ++ow)
                                        gxrow[ow * stride] += pg[ow];
                                }
                                pg += Wo;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Non-overlapping window maximum over x[C x H x W]. Backward routes the
// gradient to the first (row-major) maximal element of each window.
template <std::floating_point S>
Tensor<S> maxpool2d(const Tensor<S>& x, std::int64_t window, std::type_identity_t<Tape<S>*> tape) {
    if (x.rank() != 3)
        throw DimensionError("maxpool2d: expected x[C x H x W], got " + shape_str(x.shape()));
    if (window < 1) throw ContractError("maxpool2d: window must be positive");
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H % window != 0 || W % window != 0)
        throw GeometryError("maxpool2d: extents of " + shape_str(x.shape()) +
                            " are not divisible by window " + std::to_string(window));
    const std::int64_t Ho = H / window, Wo = W / window;
    Tensor<S> out(Shape{C, Ho, Wo});
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(C * Ho * Wo));
    const S* px = x.data();
    S* po = out.data();
    for (std::int64_t c = 0; c < C; ++c) {
        const S* xplane = px + c * H * W;
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
            for (std::int64_t ow = 0; ow < Wo; ++ow) {
                S best = xplane[oh * window * W + ow * window];
                std::int64_t besti = oh * window * W + ow * window;
                for (std::int64_t i = 0; i < window; ++i) {
                    const S* row = xplane + (oh * window + i) * W + ow * window;
                    for (std::int64_t j = 0; j < window; ++j) {
                        if (row[j] > best) {
                            best = row[j];
                            besti = (oh * window + i) * W + ow * window + j;
                        }
                    }
                }
                po[(c * Ho + oh) * Wo + ow] = best;
                argmax[static_cast<std::size_t>((c * Ho + oh) * Wo + ow)] =
                    static_cast<std::int32_t>(besti);
            }
        }
    }
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        auto dx = x.ptr();
        auto dout = out.ptr();
        tape->record([dx, dout, argmax = std::move(argmax), C, H, W, Ho, Wo] {
            if (dout->grad.empty()) return;
            dx->ensure_grad();
            for (std::int64_t c = 0; c < C; ++c) {
                S* gxplane = dx->grad.data() + c * H * W;
                const S* gplane = dout->grad.data() + c * Ho * Wo;
                const std::int32_t* am = argmax.data() + c * Ho * Wo;
                for (std::int64_t i = 0; i < Ho * Wo; ++i) gxplane[am[i]] += gplane[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / loss
// ---------------------------------------------------------------------------

// Softmax over a rank-1 tensor, computed with max subtraction.
template <std::floating_point S>
Tensor<S> softmax(const Tensor<S>& x, std::type_identity_t<Tape<S>*> tape) {
    if (x.rank() != 1)
        throw DimensionError("softmax: expected a vector, got " + shape_str(x.shape()));
    const std::int64_t m = x.dim(0);
    Tensor<S> out(Shape{m});
    const S* px = x.data();
    S* po = out.data();
    S mx = px[0];
    for (std::int64_t i = 1; i < m; ++i) mx = std::max(mx, px[i]);
    S total = 0;
    for (std::int64_t i = 0; i < m; ++i) {
        po[i] = std::exp(px[i] - mx);
        total += po[i];
    }
    const S inv = S(1) / total;
    for (std::int64_t i = 0; i < m; ++i) po[i] *= inv;
    if (detail::want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        auto dx = x.ptr();
        auto dout = out.ptr();
        tape->record([dx, dout, m] {
            if (dout->grad.empty()) return;
            dx->ensure_grad();
            const S* y = dout->value.data();
            const S* g = dout->grad.data();
            S dot = 0;
            for (std::int64_t i = 0; i < m; ++i) dot += g[i] * y[i];
            for (std::int64_t i = 0; i < m; ++i)
                dx->grad[static_cast<std::size_t>(i)] += y[i] * (g[i] - dot);
        });
    }
    return out;
}

inline constexpr double kBceEps = 1e-7;

// Binary cross-entropy of a probability scalar against a {0,1} label. The
// probability is clamped to [eps, 1-eps] so the loss stays finite.
template <std::floating_point S>
Tensor<S> bce_loss(const Tensor<S>& p, int label, std::type_identity_t<Tape<S>*> tape) {
    if (p.size() != 1)
        throw ContractError("bce_loss: probability must be scalar, got " + shape_str(p.shape()));
    if (label != 0 && label != 1)
        throw ContractError("bce_loss: label must be 0 or 1, got " + std::to_string(label));
    const S eps = static_cast<S>(kBceEps);
    const S raw = p.data()[0];
    const S ph = std::min(std::max(raw, eps), S(1) - eps);
    Tensor<S> out(Shape{1});
    out.data()[0] = label == 1 ? -std::log(ph) : -std::log(S(1) - ph);
    if (detail::want_grad(tape, {&p})) {
        out.set_requires_grad(true);
        auto dp = p.ptr();
        auto dout = out.ptr();
        tape->record([dp, dout, ph, raw, eps, label] {
            if (dout->grad.empty()) return;
            if (raw <= eps || raw >= S(1) - eps) return;  // clamp region: zero slope
            dp->ensure_grad();
            const S d = label == 1 ? -S(1) / ph : S(1) / (S(1) - ph);
            dp->grad[0] += d * dout->grad[0];
        });
    }
    return out;
}

}  // namespace amil
