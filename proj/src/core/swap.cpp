// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "swap.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "checkpoint.hpp"
#include "dsp.hpp"
#include "parallel.hpp"

namespace podar::swap {

SwapResult swap_test(const codec::Autoencoder& m, const corpus::Waveform& x, std::size_t k, double gain_db,
                     bool copy_power) {
    if (dsp::power_stats<float>(x.samples).total_energy <= 0.0)
        throw std::invalid_argument("swap_test: input has zero energy");
    if (k < 1 || k >= m.latent_channels())
        throw std::invalid_argument("swap_test: k must lie in [1, " + std::to_string(m.latent_channels()) + ")");
    const double g = dsp::db_to_gain(gain_db);
    corpus::Waveform boosted = x;
    for (auto& s : boosted.samples) s = static_cast<float>(g * s);

    const codec::Latent z = codec::encode_mean(m, x);
    codec::Latent z2 = codec::encode_mean(m, boosted);
    if (copy_power) {
        const std::size_t T = z.frames();
        std::copy(z.values.data(), z.values.data() + k * T, z2.values.data());
    }
    const auto x_rec = codec::decode(m, z, x.size(), x.sample_rate);
    const auto x_swap = codec::decode(m, z2, x.size(), x.sample_rate);
    SwapResult r;
    r.rdb = dsp::energy_ratio_db<float>(x_swap.samples, x_rec.samples);
    r.rdb_vs_input = dsp::energy_ratio_db<float>(x_swap.samples, x.samples);
    return r;
}

MeanCi mean_ci95(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_ci95: no values");
    const double n = static_cast<double>(v.size());
    MeanCi out;
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() < 2) return out;
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    return out;
}

SwapReport swap_report(const codec::Autoencoder& m, const std::vector<corpus::Utterance>& split, std::size_t k,
                       double gain_db, std::size_t min_utterances) {
    if (split.empty()) throw std::invalid_argument("swap_report: empty split");
    if (split.size() < min_utterances)
        throw std::invalid_argument("swap_report: need at least " + std::to_string(min_utterances) +
                                    " utterances, got " + std::to_string(split.size()));
    SwapReport r;
    r.k = k;
    r.gain_db_applied = gain_db;
    r.per_utterance_rdb.resize(split.size());
    r.per_utterance_rdb_input.resize(split.size());
    parallel_for(split.size(), [&](std::size_t i) {
        auto s = swap_test(m, split[i].waveform, k, gain_db);
        r.per_utterance_rdb[i] = s.rdb;
        r.per_utterance_rdb_input[i] = s.rdb_vs_input;
    });
    for (const auto& u : split) r.ids.push_back(u.id);
    const auto mc = mean_ci95(r.per_utterance_rdb);
    r.mean_rdb = mc.mean;
    r.ci95 = mc.ci95;
    r.mean_rdb_input = mean_ci95(r.per_utterance_rdb_input).mean;
    return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two equal-length series");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) throw std::invalid_argument("pearson: constant input, correlation undefined");
    return sab / std::sqrt(saa * sbb);
}

double power_probe(const codec::Autoencoder& m, const std::vector<corpus::Utterance>& split,
                   std::size_t min_utterances) {
    if (split.size() < min_utterances)
        throw std::invalid_argument("power_probe: need at least " + std::to_string(min_utterances) + " utterances");
    std::vector<double> zp(split.size()), level(split.size());
    parallel_for(split.size(), [&](std::size_t i) {
        const auto& w = split[i].waveform;
        const auto z = codec::encode_mean(m, w);
        double acc = 0.0;
        for (std::size_t t = 0; t < z.frames(); ++t) acc += z.values[t];
        zp[i] = acc / static_cast<double>(z.frames());
        const double rms = dsp::power_stats<float>(w.samples).rms;
        if (rms <= 0.0) throw std::invalid_argument("power_probe: silent utterance " + split[i].id);
        level[i] = dsp::gain_to_db(rms);
    });
    return pearson(zp, level);
}

void write_report_csv(const std::filesystem::path& path, const SwapReport& r) {
    std::string out = "id,rdb,rdb_vs_input\n";
    char buf[128];
    for (std::size_t i = 0; i < r.per_utterance_rdb.size(); ++i) {
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", r.per_utterance_rdb[i], r.per_utterance_rdb_input[i]);
        out += r.ids[i] + buf;
    }
    ckpt::write_atomic(path, out);
}

nlohmann::json report_summary(const SwapReport& r) {
    return nlohmann::json{{"n", r.per_utterance_rdb.size()}, {"mean_rdb", r.mean_rdb},
                          {"ci95", r.ci95},                  {"mean_rdb_vs_input", r.mean_rdb_input},
                          {"k", r.k},                        {"gain_db_applied", r.gain_db_applied}};
}

}  // namespace podar::swap
