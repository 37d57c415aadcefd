// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "parallel.hpp"
#include "support/toy_codecs.hpp"
#include "swap.hpp"

using namespace podar;
using podar::testing::FrameCodec;

namespace {

std::vector<corpus::Utterance> utterances(std::size_t n) {
    corpus::CorpusConfig cfg;
    cfg.min_tokens = 2;
    cfg.max_tokens = 4;
    std::vector<corpus::Utterance> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto u = corpus::synthesize_utterance(corpus::random_tokens(i, cfg), i, cfg);
        u.id = "u" + std::to_string(i);
        out.push_back(std::move(u));
    }
    return out;
}

}  // namespace

TEST_CASE("zero-gain swap is a no-op for any model") {
    auto utts = utterances(6);
    codec::CodecModel random_codec(codec::CodecArch{}, 17);
    FrameCodec eq(4, FrameCodec::Mode::Equivariant), norm(4, FrameCodec::Mode::Normalized);
    for (const codec::Autoencoder* m : std::initializer_list<const codec::Autoencoder*>{&random_codec, &eq, &norm})
        for (const auto& u : utts) CHECK(std::abs(swap::swap_test(*m, u.waveform, 1, 0.0).rdb) < 1e-4);
}

TEST_CASE("gain-equivariant codec passes the full +6 dB through") {
    FrameCodec eq(4, FrameCodec::Mode::Equivariant);
    for (const auto& u : utterances(5)) {
        auto r = swap::swap_test(eq, u.waveform, 1);
        CHECK(std::abs(r.rdb - 6.0206) < 0.01);
        CHECK(std::abs(swap::swap_test(eq, u.waveform, 1, swap::kDefaultGainDb, false).rdb - 6.0206) < 0.01);
    }
}

TEST_CASE("perfectly disentangled codec neutralizes the gain") {
    FrameCodec norm(4, FrameCodec::Mode::Normalized);
    for (const auto& u : utterances(5)) {
        CHECK(std::abs(swap::swap_test(norm, u.waveform, 1).rdb) < 1e-4);
        CHECK(std::abs(swap::swap_test(norm, u.waveform, 1).rdb_vs_input) < 1e-4);
        // Without the copy the boosted latent decodes to the boosted signal.
        CHECK(std::abs(swap::swap_test(norm, u.waveform, 1, swap::kDefaultGainDb, false).rdb - 6.0206) < 0.01);
    }
}

TEST_CASE("swap_test input validation") {
    FrameCodec eq(4, FrameCodec::Mode::Equivariant);
    corpus::Waveform silent{std::vector<float>(64, 0.0f), 16000};
    CHECK_THROWS_AS(swap::swap_test(eq, silent, 1), std::invalid_argument);
    corpus::Waveform w{std::vector<float>(64, 0.1f), 16000};
    CHECK_THROWS_AS(swap::swap_test(eq, w, 0), std::invalid_argument);
    CHECK_THROWS_AS(swap::swap_test(eq, w, 5), std::invalid_argument);
}

TEST_CASE("mean and 95% interval") {
    auto mc = swap::mean_ci95({1.0, 2.0, 3.0, 4.0});
    CHECK(mc.mean == 2.5);
    CHECK(mc.ci95 == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-14));
    CHECK(swap::mean_ci95({3.0}).ci95 == 0.0);
    CHECK_THROWS_AS(swap::mean_ci95({}), std::invalid_argument);
}

TEST_CASE("swap report aggregates exactly and deterministically") {
    auto utts = utterances(30);
    codec::CodecModel m(podar::testing::tiny_arch(), 3);
    set_num_threads(1);
    auto a = swap::swap_report(m, utts, 1);
    auto b = swap::swap_report(m, utts, 1);
    CHECK(a.per_utterance_rdb == b.per_utterance_rdb);
    double s = 0.0;
    for (double v : a.per_utterance_rdb) s += v;
    CHECK(a.mean_rdb == s / 30.0);
    CHECK(a.ids.front() == "u0");
    CHECK(a.gain_db_applied == swap::kDefaultGainDb);

    set_num_threads(3);
    auto c = swap::swap_report(m, utts, 1);
    set_num_threads(1);
    CHECK(c.per_utterance_rdb == a.per_utterance_rdb);

    CHECK_THROWS_AS(swap::swap_report(m, {}, 1), std::invalid_argument);
    CHECK_THROWS_AS(swap::swap_report(m, std::vector<corpus::Utterance>(utts.begin(), utts.begin() + 29), 1),
                    std::invalid_argument);
}

TEST_CASE("power probe") {
    CHECK(swap::pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
    CHECK(swap::pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(swap::pearson({1, 1, 1}, {1, 2, 3}), std::invalid_argument);

    auto utts = utterances(30);
    FrameCodec norm(4, FrameCodec::Mode::Normalized);
    CHECK(swap::power_probe(norm, utts) > 1.0 - 1e-6);
    std::vector<corpus::Utterance> same(30, utts[0]);
    CHECK_THROWS_AS(swap::power_probe(norm, same), std::invalid_argument);
}
