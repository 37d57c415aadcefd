// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Desk-scale metrics and the two ablations: a guidance-scale sweep over
// full and partial CFG, and a sweep over the consistency weight.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "codec.hpp"
#include "generator.hpp"
#include "json.hpp"
#include "swap.hpp"

namespace podar::eval {

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

/// Edit distance between the oracle transcript and the reference, divided
/// by the reference length.
double token_error_rate(const corpus::Waveform& generated, const std::vector<int>& reference,
                        const corpus::CorpusConfig& cfg = {});

/// |energy ratio| in dB. Rejects silent inputs.
double power_deviation_db(const corpus::Waveform& generated, const corpus::Waveform& reference);

/// Multi-resolution STFT loss between two equal-length waveforms.
double stft_distance(const corpus::Waveform& a, const corpus::Waveform& b, const dsp::StftConfig& cfg = {});

/// Pearson correlation of per-frame spectral centroids. Descriptive only.
double centroid_correlation(const corpus::Waveform& a, const corpus::Waveform& b, std::size_t fft = 512);

struct EvalRecord {
    std::string metric;
    double mean = 0.0, ci95 = 0.0;
    std::size_t n = 0;
    nlohmann::json fingerprint;
    std::vector<double> values;  // per item, in item order
};

EvalRecord make_record(std::string metric, std::vector<double> values, nlohmann::json fingerprint);

struct CfgSweepConfig {
    std::vector<double> scales{1, 2, 3, 4, 5, 6};
    std::vector<gen::GuidanceMode> modes{gen::GuidanceMode::Full, gen::GuidanceMode::Partial};
    std::size_t samples = 30;
    std::size_t crop_tokens = 4;
    std::size_t prompt_tokens = 1;
    std::size_t nfe = 32;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const CfgSweepConfig& c);
void from_json(const nlohmann::json& j, CfgSweepConfig& c);

/// One generated utterance of a sweep cell.
struct SampleMetrics {
    std::string id;
    double ter = 0.0, power_dev_db = 0.0, stft = 0.0, centroid_corr = 0.0;
};

struct CfgCell {
    double w = 1.0;
    gen::GuidanceMode mode = gen::GuidanceMode::Full;
    std::vector<SampleMetrics> items;
    std::vector<EvalRecord> records;  // ter, power_dev_db, stft, centroid_corr
};

/// Item i uses validation utterance i mod |split|: its first crop_tokens
/// tokens are the text, its first prompt_tokens token segments are the
/// prompt, and the sampler stream is keyed by (seed, i), so every cell sees
/// the same initial noise. Metrics other than TER are measured on the
/// continuation after the prompt.
CfgCell run_cfg_cell(const codec::Autoencoder& codec, const gen::LoadedGenerator& g,
                     const std::vector<corpus::Utterance>& split, double w, gen::GuidanceMode mode,
                     const CfgSweepConfig& cfg, const corpus::CorpusConfig& ccfg = {});

/// All (w, mode) cells. With out_dir set, each cell's per-item CSV and
/// fingerprint are stored and reused on re-invocation with the same
/// fingerprint; records.csv summarizes the sweep.
std::vector<CfgCell> cfg_sweep(const codec::Autoencoder& codec, const gen::LoadedGenerator& g,
                               const std::vector<corpus::Utterance>& split, const CfgSweepConfig& cfg,
                               const std::filesystem::path& out_dir = {}, const nlohmann::json& context = {},
                               const corpus::CorpusConfig& ccfg = {});

/// First logged step whose validation loss is at or below target; npos if never.
std::size_t steps_to_reach(const std::vector<gen::GenLogRow>& log, double target);

/// Centered moving average with a window of w (truncated at the ends).
std::vector<double> smooth(const std::vector<double>& v, std::size_t w);

struct LambdaRun {
    double lambda = 0.0;
    swap::SwapReport swap;
    double recon_stft = 0.0;  // validation reconstruction distance
    std::vector<gen::GenLogRow> gen_log;
};

struct LambdaSweepConfig {
    std::vector<double> lambdas{0.0, 0.1, 0.5, 0.75};
    codec::CodecTrainConfig codec;
    gen::GenTrainConfig gen;
    bool train_generators = true;
};

/// Per lambda: trains (or reuses) a codec under out_dir/lambda_<x>, runs the
/// swap report and reconstruction distance on the validation split, then
/// trains a generator on its latents. Finished stages are skipped when the
/// stored config matches.
std::vector<LambdaRun> lambda_sweep(const corpus::Corpus& data, const LambdaSweepConfig& cfg,
                                    const std::filesystem::path& out_dir);

/// lambda, swap_rdb, swap_ci95, recon_stft, gen_final_val_loss, steps_to_baseline
void write_lambda_summary(const std::filesystem::path& path, const std::vector<LambdaRun>& runs);
void write_records_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records);

}  // namespace podar::eval
