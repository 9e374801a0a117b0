#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "amil/gradcheck.hpp"
#include "amil/rng.hpp"
#include "amil/tensor.hpp"
#include "support/oracles.hpp"

using amil::Rng;
using amil::Shape;
using amil::Tape;
using DT = amil::Tensor<double>;

namespace {

std::vector<double> to_vec(const DT& t) {
    return {t.data(), t.data() + t.size()};
}

bool all_finite(const DT& t) {
    for (std::int64_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

// Scalar loss that mixes every output coordinate with a fixed random weight,
// so a misrouted adjoint cannot cancel out.
DT weighted_sum(const DT& out, const DT& weights, Tape<double>* tape) {
    return amil::sum(amil::mul(out, weights, tape), tape);
}

}  // namespace

TEST_CASE("tensor construction enforces positive extents and size") {
    CHECK_THROWS_AS(DT(Shape{3, 0}), amil::ContractError);
    CHECK_THROWS_AS(DT::from_vector(Shape{2, 2}, {1.0, 2.0, 3.0}), amil::DimensionError);
    DT t = DT::from_vector(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.shape() == Shape{2, 3});
}

TEST_CASE("matmul identity and scalar cases") {
    DT I = DT::from_vector(Shape{2, 2}, {1, 0, 0, 1});
    DT v = DT::from_vector(Shape{2, 1}, {3, 4});
    DT r = amil::matmul(I, v, nullptr);
    CHECK(r[0] == 3.0);
    CHECK(r[1] == 4.0);

    DT a = DT::from_vector(Shape{1, 1}, {2});
    DT b = DT::from_vector(Shape{1, 1}, {3});
    CHECK(amil::matmul(a, b, nullptr).item() == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    DT a = DT::uniform(Shape{3, 4}, -1, 1, rng);
    DT b = DT::uniform(Shape{4, 2}, -1, 1, rng);
    DT c = amil::matmul(a, b, nullptr);
    auto ref = oracle::matmul(to_vec(a), to_vec(b), 3, 4, 2);
    for (std::int64_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("matmul rejects mismatched inner extents naming both shapes") {
    DT a(Shape{2, 3}), b(Shape{4, 2});
    try {
        amil::matmul(a, b, nullptr);
        FAIL("expected DimensionError");
    } catch (const amil::DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("conv2d produces the expected output geometry") {
    Rng rng(3);
    DT x = DT::uniform(Shape{3, 28, 28}, 0, 1, rng);
    DT k = DT::uniform(Shape{20, 3, 5, 5}, -0.1, 0.1, rng);
    DT b(Shape{20});
    DT y = amil::conv2d(x, k, b, 1, nullptr);
    CHECK(y.shape() == Shape{20, 24, 24});
}

TEST_CASE("conv2d identity kernel reproduces the input") {
    DT x = DT::from_vector(Shape{1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    DT k = DT::from_vector(Shape{1, 1, 1, 1}, {1});
    DT b(Shape{1});
    DT y = amil::conv2d(x, k, b, 1, nullptr);
    CHECK(y.shape() == Shape{1, 3, 3});
    for (std::int64_t i = 0; i < 9; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d matches nested-loop oracle") {
    Rng rng(5);
    DT x = DT::uniform(Shape{2, 6, 6}, -1, 1, rng);
    DT k = DT::uniform(Shape{3, 2, 3, 3}, -1, 1, rng);
    DT b = DT::uniform(Shape{3}, -1, 1, rng);
    for (std::int64_t stride : {1, 3}) {
        DT y = amil::conv2d(x, k, b, stride, nullptr);
        auto ref = oracle::conv2d(to_vec(x), 2, 6, 6, to_vec(k), 3, 3, to_vec(b), stride);
        REQUIRE(y.size() == static_cast<std::int64_t>(ref.size()));
        for (std::int64_t i = 0; i < y.size(); ++i)
            CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv2d rejects non-integral output extents") {
    DT x(Shape{1, 6, 6}), k(Shape{1, 1, 3, 3}), b(Shape{1});
    CHECK_THROWS_AS(amil::conv2d(x, k, b, 2, nullptr), amil::GeometryError);
    DT small(Shape{1, 2, 2});
    CHECK_THROWS_AS(amil::conv2d(small, k, b, 1, nullptr), amil::GeometryError);
}

TEST_CASE("maxpool2d geometry, constant input and oracle agreement") {
    Rng rng(7);
    DT big = DT::uniform(Shape{20, 24, 24}, -1, 1, rng);
    CHECK(amil::maxpool2d(big, 2, nullptr).shape() == Shape{20, 12, 12});

    DT c = DT::full(Shape{2, 4, 4}, 3.5);
    DT pooled = amil::maxpool2d(c, 2, nullptr);
    CHECK(pooled.shape() == Shape{2, 2, 2});
    for (std::int64_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == 3.5);

    DT x = DT::uniform(Shape{1, 4, 4}, -2, 2, rng);
    DT y = amil::maxpool2d(x, 2, nullptr);
    auto ref = oracle::maxpool2d(to_vec(x), 1, 4, 4, 2);
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == ref[i]);

    DT odd(Shape{1, 5, 4});
    CHECK_THROWS_AS(amil::maxpool2d(odd, 2, nullptr), amil::GeometryError);
}

TEST_CASE("elementwise activation values") {
    DT x = DT::from_vector(Shape{4}, {0.0, -1.5, 2.5, 0.0});
    CHECK(amil::tanh(x, nullptr)[0] == 0.0);
    CHECK(amil::sigmoid(x, nullptr)[0] == 0.5);
    DT r = amil::relu(x, nullptr);
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 2.5);
}

TEST_CASE("softmax of uniform logits and singletons") {
    DT z(Shape{4});
    DT s = amil::softmax(z, nullptr);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(0.25).epsilon(1e-15));

    for (double v : {-123.0, 0.0, 1e6}) {
        DT one = DT::from_vector(Shape{1}, {v});
        CHECK(amil::softmax(one, nullptr).item() == 1.0);
    }
}

TEST_CASE("softmax stays finite on huge logits and matches the shifted oracle") {
    DT x = DT::from_vector(Shape{2}, {1000.0, 1000.5});
    DT s = amil::softmax(x, nullptr);
    CHECK(all_finite(s));
    auto ref = oracle::softmax({1000.0, 1000.5});
    CHECK(s[0] == doctest::Approx(ref[0]).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(ref[1]).epsilon(1e-12));
}

TEST_CASE("softmax sums to one and is shift invariant") {
    Rng rng(13);
    for (int it = 0; it < 50; ++it) {
        const std::int64_t m = 1 + static_cast<std::int64_t>(rng.below(12));
        DT x = DT::uniform(Shape{m}, -30, 30, rng);
        DT s = amil::softmax(x, nullptr);
        double total = 0;
        for (std::int64_t i = 0; i < m; ++i) {
            CHECK(s[i] > 0.0);
            total += s[i];
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

        const double c = rng.uniform(-100, 100);
        DT shifted(Shape{m});
        for (std::int64_t i = 0; i < m; ++i) shifted[i] = x[i] + c;
        DT s2 = amil::softmax(shifted, nullptr);
        for (std::int64_t i = 0; i < m; ++i) CHECK(std::abs(s2[i] - s[i]) < 1e-9);
    }
}

TEST_CASE("bce_loss values") {
    CHECK(amil::bce_loss(DT::scalar(0.5), 1, nullptr).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(amil::bce_loss(DT::scalar(1.0 - 1e-7), 1, nullptr).item() ==
          doctest::Approx(1e-7).epsilon(1e-3));
    CHECK(amil::bce_loss(DT::scalar(0.2), 0, nullptr).item() ==
          doctest::Approx(-std::log(0.8)).epsilon(1e-12));
    // clamping keeps the loss finite at the endpoints
    CHECK(std::isfinite(amil::bce_loss(DT::scalar(0.0), 1, nullptr).item()));
    CHECK(std::isfinite(amil::bce_loss(DT::scalar(1.0), 0, nullptr).item()));
    CHECK_THROWS_AS(amil::bce_loss(DT(Shape{2}), 1, nullptr), amil::ContractError);
    CHECK_THROWS_AS(amil::bce_loss(DT::scalar(0.5), 2, nullptr), amil::ContractError);
}

TEST_CASE("tape replays adjoints once each, in reverse order") {
    Tape<double> tape;
    std::vector<int> order;
    tape.record([&] { order.push_back(0); });
    tape.record([&] { order.push_back(1); });
    tape.record([&] { order.push_back(2); });
    tape.backward(DT::scalar(0.0));
    CHECK(order == std::vector<int>{2, 1, 0});
    CHECK_THROWS_AS(tape.backward(DT(Shape{3})), amil::ContractError);
}

TEST_CASE("backward on sum gives an all-ones gradient") {
    DT x(Shape{3, 4}, true);
    Tape<double> tape;
    DT loss = amil::sum(x, &tape);
    tape.backward(loss);
    REQUIRE(x.has_grad());
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("backward through sigmoid(w.x) matches finite differences") {
    Rng rng(17);
    DT x = DT::uniform(Shape{1, 6}, -1, 1, rng);
    DT w0 = DT::uniform(Shape{6, 1}, -1, 1, rng);
    auto f = [&](const DT& w, Tape<double>* tape) {
        return amil::sigmoid(amil::matmul(x, w, tape), tape);
    };
    CHECK(amil::finite_diff_check<double>(f, w0, 1e-5) < 1e-5);
}

TEST_CASE("gradients accumulate additively across consumers") {
    Rng rng(19);
    DT x0 = DT::uniform(Shape{5}, -1, 1, rng);

    auto grad_of = [&](auto&& branch) {
        DT x = x0.clone();
        x.set_requires_grad(true);
        Tape<double> tape;
        tape.backward(branch(x, &tape));
        std::vector<double> g(x.grad(), x.grad() + x.size());
        return g;
    };

    auto g_tanh = grad_of([](const DT& x, Tape<double>* t) { return amil::sum(amil::tanh(x, t), t); });
    auto g_sig = grad_of(
        [](const DT& x, Tape<double>* t) { return amil::sum(amil::sigmoid(x, t), t); });
    auto g_both = grad_of([](const DT& x, Tape<double>* t) {
        return amil::add(amil::sum(amil::tanh(x, t), t), amil::sum(amil::sigmoid(x, t), t), t);
    });
    for (std::size_t i = 0; i < g_both.size(); ++i)
        CHECK(g_both[i] == doctest::Approx(g_tanh[i] + g_sig[i]).epsilon(1e-14));
}

TEST_CASE("finite_diff_check on analytic cases") {
    Rng rng(23);
    // 0.5 * ||x||^2 has gradient exactly x
    auto quad = [](const DT& x, Tape<double>* t) {
        return amil::scale(amil::sum(amil::mul(x, x, t), t), 0.5, t);
    };
    DT x = DT::uniform(Shape{8}, -2, 2, rng);
    CHECK(amil::finite_diff_check<double>(quad, x, 1e-5) < 1e-9);

    auto tanh_sum = [](const DT& x, Tape<double>* t) { return amil::sum(amil::tanh(x, t), t); };
    CHECK(amil::finite_diff_check<double>(tanh_sum, DT::uniform(Shape{10}, -1.5, 1.5, rng), 1e-5) <
          1e-7);
}

TEST_CASE("finite_diff_check through maxpool away from ties") {
    Rng rng(29);
    DT wfix = DT::uniform(Shape{2, 2, 2}, 0.5, 1.5, rng);
    auto f = [&](const DT& x, Tape<double>* t) {
        return weighted_sum(amil::maxpool2d(x, 2, t), wfix, t);
    };
    DT x = DT::uniform(Shape{2, 4, 4}, -3, 3, rng);  // continuous draw: ties have measure zero
    CHECK(amil::finite_diff_check<double>(f, x, 1e-5) < 1e-6);
}

TEST_CASE("every differentiable op passes finite differences on 10 seeds") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        DT w_mat = DT::uniform(Shape{3, 4}, 0.5, 1.5, rng);
        DT w_vec = DT::uniform(Shape{6}, 0.5, 1.5, rng);
        DT w_conv = DT::uniform(Shape{2, 2, 2}, 0.5, 1.5, rng);
        DT fixed_b = DT::uniform(Shape{4, 4}, -1, 1, rng);
        DT fixed_x = DT::uniform(Shape{3, 4}, -1, 1, rng);
        DT conv_x = DT::uniform(Shape{2, 4, 4}, -1, 1, rng);
        DT conv_k = DT::uniform(Shape{2, 2, 3, 3}, -1, 1, rng);
        DT conv_b = DT::uniform(Shape{2}, -1, 1, rng);

        struct Case {
            const char* name;
            std::function<DT(const DT&, Tape<double>*)> f;
            DT x;
            double tol;
        };
        std::vector<Case> cases;
        cases.push_back({"matmul_lhs",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::matmul(x, fixed_b, t), w_mat, t);
                         },
                         DT::uniform(Shape{3, 4}, -1, 1, rng), 1e-5});
        cases.push_back({"matmul_rhs",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::matmul(fixed_x, x, t), w_mat, t);
                         },
                         DT::uniform(Shape{4, 4}, -1, 1, rng), 1e-5});
        cases.push_back({"conv_input",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::conv2d(x, conv_k, conv_b, 1, t), w_conv, t);
                         },
                         DT::uniform(Shape{2, 4, 4}, -1, 1, rng), 1e-5});
        cases.push_back({"conv_kernels",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::conv2d(conv_x, x, conv_b, 1, t), w_conv, t);
                         },
                         DT::uniform(Shape{2, 2, 3, 3}, -1, 1, rng), 1e-5});
        cases.push_back({"conv_bias",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::conv2d(conv_x, conv_k, x, 1, t), w_conv, t);
                         },
                         DT::uniform(Shape{2}, -1, 1, rng), 1e-5});
        cases.push_back({"relu",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::relu(x, t), w_vec, t);
                         },
                         // bounded away from the kink at zero
                         DT::uniform(Shape{6}, 0.2, 2.0, rng), 1e-5});
        cases.push_back({"tanh",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::tanh(x, t), w_vec, t);
                         },
                         DT::uniform(Shape{6}, -2, 2, rng), 1e-5});
        cases.push_back({"sigmoid",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::sigmoid(x, t), w_vec, t);
                         },
                         DT::uniform(Shape{6}, -2, 2, rng), 1e-5});
        cases.push_back({"softmax",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::softmax(x, t), w_vec, t);
                         },
                         DT::uniform(Shape{6}, -2, 2, rng), 1e-5});
        cases.push_back({"bce",
                         [&](const DT& x, Tape<double>* t) { return amil::bce_loss(x, 1, t); },
                         DT::from_vector(Shape{1}, {0.2 + 0.6 * rng.next_double()}), 1e-5});
        cases.push_back({"add",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::add(x, fixed_x, t), w_mat, t);
                         },
                         DT::uniform(Shape{3, 4}, -1, 1, rng), 1e-5});
        cases.push_back({"mul",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::mul(x, fixed_x, t), w_mat, t);
                         },
                         DT::uniform(Shape{3, 4}, -1, 1, rng), 1e-5});
        cases.push_back({"scale",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::scale(x, -1.75, t), w_mat, t);
                         },
                         DT::uniform(Shape{3, 4}, -1, 1, rng), 1e-5});
        cases.push_back({"transpose",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::transpose(x, t), amil::transpose(w_mat, nullptr), t);
                         },
                         DT::uniform(Shape{3, 4}, -1, 1, rng), 1e-5});
        cases.push_back({"reshape",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::reshape(x, Shape{12}, t),
                                                 amil::reshape(w_mat, Shape{12}, nullptr), t);
                         },
                         DT::uniform(Shape{3, 4}, -1, 1, rng), 1e-5});
        cases.push_back({"colwise_max",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::colwise_max(x, t), w_vec, t);
                         },
                         DT::uniform(Shape{4, 6}, -3, 3, rng), 1e-5});
        cases.push_back({"colwise_mean",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::colwise_mean(x, t), w_vec, t);
                         },
                         DT::uniform(Shape{4, 6}, -3, 3, rng), 1e-5});
        cases.push_back({"maxpool",
                         [&](const DT& x, Tape<double>* t) {
                             return weighted_sum(amil::maxpool2d(x, 2, t), w_conv, t);
                         },
                         DT::uniform(Shape{2, 4, 4}, -3, 3, rng), 1e-5});

        for (auto& c : cases) {
            const double err = amil::finite_diff_check<double>(c.f, c.x, 1e-5);
            INFO("op = " << c.name << " seed = " << seed);
            CHECK(err < c.tol);
        }
    }
}

TEST_CASE("stack_rows concatenates and routes gradients per row") {
    Rng rng(31);
    std::vector<DT> rows;
    for (int i = 0; i < 3; ++i) {
        DT r = DT::uniform(Shape{4}, -1, 1, rng);
        r.set_requires_grad(true);
        rows.push_back(r);
    }
    Tape<double> tape;
    DT H = amil::stack_rows<double>(rows, &tape);
    CHECK(H.shape() == Shape{3, 4});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(H[i * 4 + j] == rows[static_cast<std::size_t>(i)][j]);

    DT w = DT::uniform(Shape{3, 4}, 0.5, 1.5, rng);
    tape.backward(weighted_sum(H, w, &tape));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(rows[static_cast<std::size_t>(i)].grad()[j] ==
                  doctest::Approx(w[i * 4 + j]).epsilon(1e-14));
}

TEST_CASE("forward chains on finite inputs never produce NaN or Inf") {
    Rng rng(37);
    for (int it = 0; it < 20; ++it) {
        DT x = DT::uniform(Shape{2, 8, 8}, -50, 50, rng);
        DT k = DT::uniform(Shape{4, 2, 3, 3}, -5, 5, rng);
        DT b = DT::uniform(Shape{4}, -5, 5, rng);
        DT y = amil::relu(amil::conv2d(x, k, b, 1, nullptr), nullptr);
        DT p = amil::maxpool2d(y, 2, nullptr);
        DT flat = amil::reshape(p, Shape{1, p.size()}, nullptr);
        DT w = DT::uniform(Shape{p.size(), 3}, -1, 1, rng);
        DT logits = amil::matmul(flat, w, nullptr);
        DT sm = amil::softmax(amil::reshape(logits, Shape{3}, nullptr), nullptr);
        CHECK(all_finite(y));
        CHECK(all_finite(p));
        CHECK(all_finite(sm));
    }
}
