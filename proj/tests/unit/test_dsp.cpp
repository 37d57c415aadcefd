// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "dsp.hpp"
#include "../support/gradcheck.hpp"

using namespace podar;
using dsp::Complex;

namespace {

std::vector<Complex> naive_dft(const std::vector<Complex>& x) {
    const std::size_t n = x.size();
    std::vector<Complex> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc(0, 0);
        for (std::size_t t = 0; t < n; ++t) {
            const double a = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
            acc += x[t] * Complex(std::cos(a), std::sin(a));
        }
        out[k] = acc;
    }
    return out;
}

}  // namespace

TEST_CASE("fft of impulse and constant") {
    auto imp = dsp::fft(std::vector<Complex>{1, 0, 0, 0});
    for (auto v : imp) CHECK(std::abs(v - Complex(1, 0)) < 1e-15);
    auto cst = dsp::fft(std::vector<Complex>{1, 1, 1, 1});
    CHECK(std::abs(cst[0] - Complex(4, 0)) < 1e-15);
    for (int k = 1; k < 4; ++k) CHECK(std::abs(cst[k]) < 1e-15);
}

TEST_CASE("fft matches the naive DFT and satisfies Parseval") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    for (std::size_t n : {4u, 64u, 256u}) {
        std::vector<Complex> x(n);
        for (auto& v : x) v = Complex(nd(rng), nd(rng));
        auto fast = dsp::fft(x);
        auto slow = naive_dft(x);
        double err = 0, e_t = 0, e_f = 0;
        for (std::size_t i = 0; i < n; ++i) {
            err = std::max(err, std::abs(fast[i] - slow[i]));
            e_t += std::norm(x[i]);
            e_f += std::norm(fast[i]);
        }
        CHECK(err < 1e-9);
        CHECK(std::abs(e_f / static_cast<double>(n) - e_t) / e_t < 1e-9);
    }
}

TEST_CASE("fft rejects non power-of-two lengths") {
    CHECK_THROWS_AS(dsp::fft(std::vector<Complex>(6)), std::invalid_argument);
    CHECK_THROWS_AS(dsp::fft(std::vector<Complex>{}), std::invalid_argument);
}

TEST_CASE("stft config validation") {
    dsp::StftConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.fft_sizes = {500};
    CHECK_THROWS(cfg.validate());
    cfg.fft_sizes = {256};
    cfg.hop_fraction = 0.0;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("multires stft loss identities") {
    std::mt19937_64 rng(2);
    auto x = podar::testing::random_tensor({2, 1, 1024}, rng);
    dsp::StftConfig cfg;
    auto same = dsp::multires_stft_loss(ad::constant(x), ad::constant(x), cfg);
    CHECK(same.item() == 0.0);

    // x_hat = 0: every spectral-convergence term is exactly one.
    dsp::StftConfig single{{128}, 0.25};
    auto zero = ad::constant(TensorD(x.shape()));
    auto loss = dsp::multires_stft_loss(ad::constant(x), zero, single).item();
    auto mag = dsp::stft_magnitude(ad::constant(x.reshaped({2, 1024})), 128, 32);
    double lm = 0;
    for (double m : mag.value().values()) lm += std::abs(std::log(m + dsp::kLogMagFloor) - std::log(dsp::kLogMagFloor));
    lm /= static_cast<double>(mag.value().size());
    CHECK(loss - lm == doctest::Approx(1.0).epsilon(1e-12));

    auto other = podar::testing::random_tensor({2, 1, 1024}, rng);
    CHECK(dsp::multires_stft_loss(ad::constant(x), ad::constant(other), cfg).item() > 0.0);
    CHECK_THROWS_AS(dsp::multires_stft_loss(ad::constant(x), ad::constant(TensorD(Shape{2, 1, 1000})), cfg), ShapeError);
}

TEST_CASE("multires stft loss gradient matches finite differences") {
    std::mt19937_64 rng(4);
    auto target = ad::constant(podar::testing::random_tensor({1, 256}, rng));
    auto x_hat = podar::testing::random_tensor({1, 256}, rng);
    dsp::StftConfig cfg{{64, 32}, 0.25};
    auto r = podar::testing::gradcheck(
        [&](const std::vector<ad::VarD>& v) { return dsp::multires_stft_loss(target, v[0], cfg); }, {x_hat});
    CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("energy ratio in dB") {
    std::vector<double> x{0.1, -0.3, 0.25, 0.05};
    std::vector<double> twice, tenth;
    for (double v : x) {
        twice.push_back(2.0 * v);
        tenth.push_back(v / std::sqrt(10.0));
    }
    CHECK(dsp::energy_ratio_db<double>(x, x) == 0.0);
    CHECK(dsp::energy_ratio_db<double>(twice, x) == doctest::Approx(6.0206).epsilon(1e-5));
    CHECK(dsp::energy_ratio_db<double>(tenth, x) == doctest::Approx(-10.0).epsilon(1e-12));
    std::vector<double> silent(4, 0.0);
    CHECK_THROWS_AS(dsp::energy_ratio_db<double>(x, silent), std::invalid_argument);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> gain(0.05, 5.0);
    for (int i = 0; i < 50; ++i) {
        const double g = gain(rng);
        std::vector<double> s;
        for (double v : x) s.push_back(g * v);
        CHECK(dsp::energy_ratio_db<double>(s, x) == doctest::Approx(20.0 * std::log10(g)).epsilon(1e-12));
    }
}
