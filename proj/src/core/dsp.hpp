// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <span>
#include <vector>

#include "autograd.hpp"

namespace podar::dsp {

using Complex = std::complex<double>;

bool is_power_of_two(std::size_t n) noexcept;

/// In-place radix-2 FFT. Forward transform uses e^{-2 pi i k n / N}; the
/// inverse is unnormalized. Throws std::invalid_argument unless the length
/// is a power of two.
void fft_inplace(std::vector<Complex>& buf, bool inverse = false);
std::vector<Complex> fft(std::span<const Complex> signal);

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

struct StftConfig {
    std::vector<std::size_t> fft_sizes{512, 256, 128};
    double hop_fraction = 0.25;

    void validate() const;
    std::size_t hop(std::size_t fft_size) const;
};

/// Frames needed to cover n samples with window m and the given hop; short
/// tails are zero-padded.
std::size_t stft_frames(std::size_t n, std::size_t fft_size, std::size_t hop);

/// Hann-windowed STFT magnitude of the last axis. (..., N) -> (..., F, fft/2+1).
/// Differentiable; bins with exactly zero magnitude pass no gradient.
template <class T>
ad::Var<T> stft_magnitude(const ad::Var<T>& x, std::size_t fft_size, std::size_t hop);

inline constexpr double kLogMagFloor = 1e-7;

/// Sum over resolutions of spectral convergence (per-row Frobenius ratio,
/// averaged over rows) plus mean absolute log-magnitude difference. The
/// first argument is the reference.
template <class T>
ad::Var<T> multires_stft_loss(const ad::Var<T>& x, const ad::Var<T>& x_hat, const StftConfig& cfg);

struct PowerStats {
    double total_energy = 0.0;
    double rms = 0.0;
};

template <class T>
PowerStats power_stats(std::span<const T> samples);

/// 10 log10(sum x'^2 / sum x^2). Throws if the reference has zero energy.
template <class T>
double energy_ratio_db(std::span<const T> x_prime, std::span<const T> x);

inline double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }
inline double gain_to_db(double g) { return 20.0 * std::log10(g); }

}  // namespace podar::dsp
