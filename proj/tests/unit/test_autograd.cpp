// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "autograd.hpp"
#include "doctest.h"
#include "../support/gradcheck.hpp"
#include "../support/op_cases.hpp"

using namespace podar;
using podar::testing::random_tensor;

TEST_CASE("conv1d with an identity kernel reproduces the input") {
    std::mt19937_64 rng(7);
    auto x = ad::constant(random_tensor({2, 3, 11}, rng));
    TensorD w(Shape{3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) w[(c * 3 + c) * 3 + 1] = 1.0;
    auto y = ad::conv1d(x, ad::constant(w), ad::VarD{}, 1, 1);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < y.value().size(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("tanh(0) and layer norm of a constant vector") {
    auto z = ad::tanh(ad::constant(TensorD(Shape{3}, 0.0)));
    for (double v : z.value().values()) CHECK(v == 0.0);
    auto ln = ad::layer_norm(ad::constant(TensorD(Shape{2, 4}, 3.25)));
    for (double v : ln.value().values()) CHECK(v == 0.0);
}

TEST_CASE("matmul agrees with a naive triple loop") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_tensor({2, 3}, rng);
        auto b = random_tensor({3, 2}, rng);
        auto c = ad::matmul(ad::constant(a), ad::constant(b)).value();
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                double ref = 0.0;
                for (std::size_t k = 0; k < 3; ++k) ref += a[i * 3 + k] * b[k * 2 + j];
                CHECK(std::abs(c[i * 2 + j] - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
            }
    }
}

TEST_CASE("shape mismatches are rejected with both shapes in the message") {
    auto a = ad::constant(TensorD(Shape{2, 3}));
    auto b = ad::constant(TensorD(Shape{4, 2}));
    try {
        (void)ad::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 2]") != std::string::npos);
    }
    CHECK_THROWS_AS((void)ad::add(a, ad::constant(TensorD(Shape{2, 2}))), ShapeError);
    CHECK_THROWS_AS((void)ad::concat<double>({a, b}, 1), ShapeError);
}

TEST_CASE("backward of sum gives all ones") {
    std::mt19937_64 rng(3);
    auto x = ad::parameter(random_tensor({2, 4}, rng));
    ad::backward(ad::sum(x));
    REQUIRE(x.grad().shape() == x.shape());
    for (double g : x.grad().values()) CHECK(g == 1.0);
}

TEST_CASE("backward of mean squared error is 2(x - y) / N") {
    std::mt19937_64 rng(5);
    auto xt = random_tensor({6}, rng);
    auto yt = random_tensor({6}, rng);
    auto x = ad::parameter(xt);
    auto loss = ad::mean(ad::square(ad::sub(x, ad::constant(yt))));
    ad::backward(loss);
    for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * (xt[i] - yt[i]) / 6.0).epsilon(1e-14));
}

TEST_CASE("non-scalar loss is rejected") {
    auto x = ad::parameter(TensorD(Shape{3}, 1.0));
    CHECK_THROWS_AS(ad::backward(ad::square(x)), ShapeError);
}

TEST_CASE("diamond graph accumulates gradients from both paths") {
    auto x = ad::parameter(TensorD(Shape{1}, 1.5));
    auto a = ad::scale(x, 2.0);
    auto b = ad::square(x);
    ad::backward(ad::sum(ad::add(a, b)));
    CHECK(x.grad()[0] == doctest::Approx(2.0 + 2.0 * 1.5));
}

TEST_CASE("leaf gradients accumulate until explicitly zeroed") {
    auto x = ad::parameter(TensorD(Shape{2}, 1.0));
    ad::backward(ad::sum(x));
    ad::backward(ad::sum(x));
    CHECK(x.grad()[0] == 2.0);
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("forward is bit-deterministic") {
    std::mt19937_64 rng(9);
    auto x = random_tensor({2, 3, 16}, rng);
    auto w = random_tensor({4, 3, 4}, rng);
    auto run = [&] {
        return ad::tanh(ad::conv1d(ad::constant(x), ad::constant(w), ad::VarD{}, 2, 1)).value().storage();
    };
    CHECK(run() == run());
}

TEST_CASE("every registered op matches central finite differences") {
    for (const auto& c : podar::testing::registered_op_cases()) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            auto r = podar::testing::check_op(c, seed);
            INFO(c.name << " seed " << seed << " rel " << r.max_rel_err);
            CHECK(r.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("conv_transpose1d output length and adjointness") {
    std::mt19937_64 rng(21);
    auto x = random_tensor({1, 2, 5}, rng);
    auto w = random_tensor({2, 3, 8}, rng);
    auto y = ad::conv_transpose1d(ad::constant(x), ad::constant(w), ad::VarD{}, 4, 2);
    CHECK(y.shape() == Shape{1, 3, 20});
    // <convT(x), z> == <x, conv(z)> with the same weights.
    auto z = random_tensor({1, 3, 20}, rng);
    TensorD wt(Shape{2, 3, 8});
    wt = w;
    // conv1d expects (Cout, Cin, K): here Cout = 2, Cin = 3, matching w's (Cin_t, Cout_t, K).
    auto cz = ad::conv1d(ad::constant(z), ad::constant(wt), ad::VarD{}, 4, 2);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < z.size(); ++i) lhs += y.value()[i] * z[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * cz.value()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
