// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace podar::dsp {

namespace {

const std::vector<Complex>& twiddles(std::size_t n) {
    thread_local std::unordered_map<std::size_t, std::vector<Complex>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<Complex> w(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        w[k] = Complex(std::cos(a), std::sin(a));
    }
    return cache.emplace(n, std::move(w)).first->second;
}

const std::vector<double>& cached_hann(std::size_t n) {
    thread_local std::unordered_map<std::size_t, std::vector<double>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    return cache.emplace(n, hann_window(n)).first->second;
}

}  // namespace

bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

void fft_inplace(std::vector<Complex>& buf, bool inverse) {
    const std::size_t n = buf.size();
    if (!is_power_of_two(n)) throw std::invalid_argument("fft: length " + std::to_string(n) + " is not a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(buf[i], buf[j]);
    }
    const auto& w = twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t k = 0; k < half; ++k) {
                Complex tw = w[k * step];
                if (inverse) tw = std::conj(tw);
                const Complex a = buf[start + k];
                const Complex b = buf[start + k + half] * tw;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
    }
}

std::vector<Complex> fft(std::span<const Complex> signal) {
    std::vector<Complex> out(signal.begin(), signal.end());
    fft_inplace(out);
    return out;
}

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

void StftConfig::validate() const {
    if (fft_sizes.empty()) throw std::invalid_argument("stft: at least one resolution is required");
    for (auto m : fft_sizes)
        if (!is_power_of_two(m) || m < 4)
            throw std::invalid_argument("stft: fft size " + std::to_string(m) + " is not a power of two >= 4");
    if (!(hop_fraction > 0.0 && hop_fraction <= 1.0))
        throw std::invalid_argument("stft: hop fraction must lie in (0, 1]");
}

std::size_t StftConfig::hop(std::size_t fft_size) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(hop_fraction * static_cast<double>(fft_size))));
}

std::size_t stft_frames(std::size_t n, std::size_t fft_size, std::size_t hop) {
    if (n <= fft_size) return 1;
    return 1 + (n - fft_size + hop - 1) / hop;
}

template <class T>
ad::Var<T> stft_magnitude(const ad::Var<T>& x, std::size_t fft_size, std::size_t hop) {
    if (!is_power_of_two(fft_size))
        throw std::invalid_argument("stft: fft size " + std::to_string(fft_size) + " is not a power of two");
    if (x.shape().empty() || hop == 0) throw ShapeError("stft: input must have a time axis, got " + shape_str(x.shape()));
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.value().size() / n;
    const std::size_t frames = stft_frames(n, fft_size, hop);
    const std::size_t bins = fft_size / 2 + 1;
    Shape os(x.shape().begin(), x.shape().end() - 1);
    os.push_back(frames);
    os.push_back(bins);

    const auto& win = cached_hann(fft_size);
    auto load_frame = [&win, n, fft_size](const T* row, std::size_t start, std::vector<Complex>& buf) {
        for (std::size_t i = 0; i < fft_size; ++i) {
            const std::size_t pos = start + i;
            buf[i] = Complex(pos < n ? win[i] * static_cast<double>(row[pos]) : 0.0, 0.0);
        }
    };

    Tensor<T> out(os);
    std::vector<Complex> buf(fft_size);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t f = 0; f < frames; ++f) {
            load_frame(x.value().data() + r * n, f * hop, buf);
            fft_inplace(buf);
            T* dst = out.data() + (r * frames + f) * bins;
            for (std::size_t k = 0; k < bins; ++k) dst[k] = static_cast<T>(std::abs(buf[k]));
        }
    }

    return ad::make_op<T>(
        std::move(out), {x},
        [x, n, rows, frames, bins, fft_size, hop, load_frame](ad::Node<T>& self) {
            if (!x.requires_grad()) return;
            const auto& win = cached_hann(fft_size);
            T* gx = x.node()->grad_buffer().data();
            std::vector<Complex> spec(fft_size), adj(fft_size);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t f = 0; f < frames; ++f) {
                    load_frame(x.value().data() + r * n, f * hop, spec);
                    fft_inplace(spec);
                    const T* g = self.grad.data() + (r * frames + f) * bins;
                    std::fill(adj.begin(), adj.end(), Complex(0.0, 0.0));
                    for (std::size_t k = 0; k < bins; ++k) {
                        const double mag = std::abs(spec[k]);
                        if (mag > 0.0) adj[k] = static_cast<double>(g[k]) * std::conj(spec[k]) / mag;
                    }
                    // d|X_k|/dx[n] = w[n] Re(conj(X_k) e^{-2 pi i k n / M}) / |X_k|
                    fft_inplace(adj);
                    const std::size_t start = f * hop;
                    for (std::size_t i = 0; i < fft_size && start + i < n; ++i)
                        gx[r * n + start + i] += static_cast<T>(win[i] * adj[i].real());
                }
            }
        },
        "stft_magnitude");
}

template <class T>
ad::Var<T> multires_stft_loss(const ad::Var<T>& x, const ad::Var<T>& x_hat, const StftConfig& cfg) {
    cfg.validate();
    if (x.shape() != x_hat.shape())
        throw ShapeError("multires_stft_loss: length mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(x_hat.shape()));
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.value().size() / n;
    auto flat_x = ad::reshape(x, {rows, n});
    auto flat_y = ad::reshape(x_hat, {rows, n});
    const T floor = static_cast<T>(kLogMagFloor);

    ad::Var<T> total;
    for (auto m : cfg.fft_sizes) {
        auto mag_x = stft_magnitude(flat_x, m, cfg.hop(m));
        auto mag_y = stft_magnitude(flat_y, m, cfg.hop(m));
        // (rows, F, K) -> per-row Frobenius norms
        auto row_norm = [](const ad::Var<T>& v) { return ad::sqrt(ad::sum_axis(ad::sum_axis(ad::square(v), 2), 1)); };
        auto num = row_norm(ad::sub(mag_x, mag_y));
        auto den = row_norm(mag_x);
        // A silent reference row would make the ratio undefined; keep it finite.
        den = ad::add_scalar(den, std::numeric_limits<T>::min());
        auto sc = ad::mean(ad::div(num, den));
        auto lm = ad::mean(ad::abs(ad::sub(ad::log(ad::add_scalar(mag_x, floor)), ad::log(ad::add_scalar(mag_y, floor)))));
        auto term = ad::add(sc, lm);
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

template <class T>
PowerStats power_stats(std::span<const T> samples) {
    PowerStats s;
    for (T v : samples) s.total_energy += static_cast<double>(v) * static_cast<double>(v);
    s.rms = samples.empty() ? 0.0 : std::sqrt(s.total_energy / static_cast<double>(samples.size()));
    return s;
}

template <class T>
double energy_ratio_db(std::span<const T> x_prime, std::span<const T> x) {
    const double ref = power_stats(x).total_energy;
    if (!(ref > 0.0)) throw std::invalid_argument("energy_ratio_db: reference signal has zero energy");
    const double num = power_stats(x_prime).total_energy;
    if (!(num > 0.0)) throw std::invalid_argument("energy_ratio_db: signal has zero energy");
    return 10.0 * std::log10(num / ref);
}

template ad::Var<float> stft_magnitude(const ad::Var<float>&, std::size_t, std::size_t);
template ad::Var<double> stft_magnitude(const ad::Var<double>&, std::size_t, std::size_t);
template ad::Var<float> multires_stft_loss(const ad::Var<float>&, const ad::Var<float>&, const StftConfig&);
template ad::Var<double> multires_stft_loss(const ad::Var<double>&, const ad::Var<double>&, const StftConfig&);
template PowerStats power_stats(std::span<const float>);
template PowerStats power_stats(std::span<const double>);
template double energy_ratio_db(std::span<const float>, std::span<const float>);
template double energy_ratio_db(std::span<const double>, std::span<const double>);

}  // namespace podar::dsp
