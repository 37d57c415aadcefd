// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic token-to-waveform corpus and 16-bit WAV I/O.
//
// Each token is rendered as a fixed-duration harmonic stack whose
// fundamental and spectral envelope identify it uniquely; neighbouring
// segments are joined with complementary raised-cosine crossfades. The
// utterance is peak-normalized to `peak` and then attenuated by a random
// gain, so every synthesized sample stays within the headroom that a +6 dB
// augmentation needs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace podar::corpus {

struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;

    std::size_t size() const noexcept { return samples.size(); }
};

struct CorpusConfig {
    int sample_rate = 16000;
    double token_seconds = 0.1;
    std::size_t vocab_size = 16;
    std::size_t min_tokens = 8;
    std::size_t max_tokens = 16;
    double gain_min_db = -12.0;
    double gain_max_db = 0.0;
    double peak = 0.45;
    double crossfade_seconds = 0.01;
    double f0_jitter = 0.01;
    double val_fraction = 0.1;

    std::size_t segment_samples() const;
    void validate() const;
};

struct Utterance {
    std::string id;
    std::vector<int> tokens;
    Waveform waveform;
    double gain_db = 0.0;
    std::uint64_t seed = 0;
};

/// Deterministic given (tokens, seed, cfg). Rejects empty or out-of-vocabulary input.
Utterance synthesize_utterance(std::span<const int> tokens, std::uint64_t seed, const CorpusConfig& cfg);

struct Transcript {
    std::vector<int> tokens;
    std::vector<double> confidence;  // cosine similarity of the winning template
    bool low_confidence = false;
};

inline constexpr double kLowConfidence = 0.5;

/// Per-segment template matching on amplitude-normalized magnitude spectra.
/// Rejects waveforms shorter than one segment; trailing partial segments are
/// ignored.
Transcript transcribe_oracle(const Waveform& w, const CorpusConfig& cfg);

struct Corpus {
    std::vector<Utterance> train;
    std::vector<Utterance> val;
};

/// n utterances from one master seed; every tenth utterance (by index) goes
/// to validation when val_fraction is 0.1.
Corpus generate_corpus(std::size_t n, std::uint64_t master_seed, const CorpusConfig& cfg);

/// Random token sequence with length in [min_tokens, max_tokens].
std::vector<int> random_tokens(std::uint64_t seed, const CorpusConfig& cfg);

// 16-bit PCM mono little-endian RIFF/WAVE. Errors throw std::runtime_error
// with a diagnostic naming the file.
void wav_write(const std::filesystem::path& path, const Waveform& w);
Waveform wav_read(const std::filesystem::path& path);

struct ManifestEntry {
    std::string id;
    std::vector<int> tokens;
    double gain_db = 0.0;
    std::uint64_t seed = 0;
    std::string path;
    std::string split;
};

/// One JSON object per line.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Writes WAVs plus manifest.jsonl into `dir`.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
/// Loads a corpus previously written by write_corpus.
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace podar::corpus
