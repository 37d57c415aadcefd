// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Swap test for power localization and related disentanglement probes.
//
// swap_test encodes x and g*x with the posterior mean, copies the first k
// rows of the clean latent into the boosted one, decodes, and reports the
// energy of the result in dB. The primary reference is the unswapped
// reconstruction Dec(Enc(x)), so the codec's own reconstruction gain error
// cancels and a no-op swap reads exactly 0 dB for any model; the ratio
// against the input waveform is reported alongside.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "codec.hpp"
#include "json.hpp"

namespace podar::swap {

/// +6 dB as a factor of exactly 2.
inline constexpr double kDefaultGainDb = 6.020599913279624;

struct SwapResult {
    double rdb = 0.0;            // vs. the unswapped reconstruction
    double rdb_vs_input = 0.0;   // vs. the input waveform
};

/// copy_power = false skips the row copy (decodes Enc(g*x) unchanged).
SwapResult swap_test(const codec::Autoencoder& m, const corpus::Waveform& x, std::size_t k,
                     double gain_db = kDefaultGainDb, bool copy_power = true);

struct SwapReport {
    std::vector<std::string> ids;
    std::vector<double> per_utterance_rdb;
    std::vector<double> per_utterance_rdb_input;
    double mean_rdb = 0.0;
    double ci95 = 0.0;  // 1.96 * sample std / sqrt(n)
    double mean_rdb_input = 0.0;
    std::size_t k = 1;
    double gain_db_applied = kDefaultGainDb;
};

struct MeanCi {
    double mean = 0.0;
    double ci95 = 0.0;
};
/// Mean and 95% half-width of the mean; half-width 0 for a single value.
MeanCi mean_ci95(const std::vector<double>& v);

SwapReport swap_report(const codec::Autoencoder& m, const std::vector<corpus::Utterance>& split, std::size_t k,
                       double gain_db = kDefaultGainDb, std::size_t min_utterances = 30);

/// Pearson correlation; throws on constant input.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Correlation between the frame-averaged first power row and each
/// utterance's RMS level in dB.
double power_probe(const codec::Autoencoder& m, const std::vector<corpus::Utterance>& split,
                   std::size_t min_utterances = 30);

void write_report_csv(const std::filesystem::path& path, const SwapReport& r);
nlohmann::json report_summary(const SwapReport& r);

}  // namespace podar::swap
