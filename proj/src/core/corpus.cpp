// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "dsp.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace podar::corpus {

namespace {

constexpr std::array<double, 4> kFundamentals{150.0, 205.0, 280.0, 380.0};
constexpr std::array<double, 4> kFormants{450.0, 900.0, 1700.0, 3000.0};
constexpr double kMaxHarmonicHz = 7000.0;

double fundamental(int token) { return kFundamentals[static_cast<std::size_t>(token) % kFundamentals.size()]; }

double formant(int token) {
    return kFormants[(static_cast<std::size_t>(token) / kFundamentals.size()) % kFormants.size()];
}

double harmonic_amplitude(int token, double freq, int h) {
    const double octaves = std::log2(freq / formant(token)) / 0.5;
    return (0.15 + std::exp(-0.5 * octaves * octaves)) / std::sqrt(static_cast<double>(h));
}

/// Adds the windowed harmonic stack for one token into `out`, whose first
/// element corresponds to absolute sample index `begin`.
void render_token(int token, double f0, std::span<const double> phases, int sample_rate, std::size_t begin,
                  std::span<const double> window, std::span<double> out) {
    const double sr = static_cast<double>(sample_rate);
    const double nyq = std::min(kMaxHarmonicHz, 0.45 * sr);
    for (int h = 1; h * f0 < nyq && static_cast<std::size_t>(h - 1) < phases.size(); ++h) {
        const double f = h * f0;
        const double a = harmonic_amplitude(token, f, h);
        const double w = 2.0 * std::numbers::pi * f / sr;
        const double ph = phases[static_cast<std::size_t>(h - 1)];
        // Phasor recursion; drift over one segment is far below float precision.
        std::complex<double> z = std::polar(1.0, w * static_cast<double>(begin) + ph);
        const std::complex<double> step = std::polar(1.0, w);
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] += window[j] * a * z.imag();
            z *= step;
        }
    }
}

std::size_t analysis_size(const CorpusConfig& cfg) {
    const std::size_t seg = cfg.segment_samples();
    const std::size_t xf = static_cast<std::size_t>(std::lround(cfg.crossfade_seconds * cfg.sample_rate));
    std::size_t m = 1;
    while (m * 2 + xf <= seg) m *= 2;
    return m;
}

/// Amplitude-normalized, lightly smoothed magnitude spectrum of one segment.
std::vector<double> segment_feature(const float* seg, std::size_t seg_len, std::size_t m, double& norm_out) {
    const std::size_t offset = (seg_len - m) / 2;
    const auto win = dsp::hann_window(m);
    std::vector<dsp::Complex> buf(m);
    for (std::size_t i = 0; i < m; ++i) buf[i] = dsp::Complex(win[i] * static_cast<double>(seg[offset + i]), 0.0);
    dsp::fft_inplace(buf);
    const std::size_t bins = m / 2 + 1;
    std::vector<double> mag(bins), smooth(bins, 0.0);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(buf[k]);
    // Triangular smoothing over +-2 bins tolerates the per-utterance f0 jitter.
    constexpr std::array<double, 5> kern{1.0, 2.0, 3.0, 2.0, 1.0};
    for (std::size_t k = 0; k < bins; ++k)
        for (std::size_t j = 0; j < kern.size(); ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(k + j) - 2;
            if (src >= 0 && src < static_cast<std::ptrdiff_t>(bins)) smooth[k] += kern[j] * mag[static_cast<std::size_t>(src)];
        }
    double norm = 0.0;
    for (double v : smooth) norm += v * v;
    norm = std::sqrt(norm);
    norm_out = norm;
    if (norm > 0.0)
        for (double& v : smooth) v /= norm;
    return smooth;
}

struct TemplateBank {
    std::vector<std::vector<double>> templates;
};

const TemplateBank& templates_for(const CorpusConfig& cfg) {
    static std::mutex mu;
    static std::map<std::string, TemplateBank> cache;
    const std::string key = std::to_string(cfg.sample_rate) + "/" + std::to_string(cfg.segment_samples()) + "/" +
                            std::to_string(cfg.vocab_size) + "/" + std::to_string(cfg.crossfade_seconds);
    std::lock_guard lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    TemplateBank bank;
    const std::size_t seg = cfg.segment_samples();
    const std::size_t m = analysis_size(cfg);
    const std::vector<double> ones(seg, 1.0);
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
        std::vector<double> acc;
        Rng rng = Rng::substream(0, "oracle-templates", t);
        constexpr int kDraws = 4;
        for (int d = 0; d < kDraws; ++d) {
            std::vector<double> phases(64);
            for (auto& p : phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
            std::vector<double> sig(seg, 0.0);
            render_token(static_cast<int>(t), fundamental(static_cast<int>(t)), phases, cfg.sample_rate, 0, ones, sig);
            std::vector<float> f(sig.begin(), sig.end());
            double norm = 0.0;
            auto feat = segment_feature(f.data(), seg, m, norm);
            if (acc.empty()) acc.assign(feat.size(), 0.0);
            for (std::size_t k = 0; k < feat.size(); ++k) acc[k] += feat[k];
        }
        double norm = 0.0;
        for (double v : acc) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : acc) v /= norm;
        bank.templates.push_back(std::move(acc));
    }
    return cache.emplace(key, std::move(bank)).first->second;
}

void put_u16(std::ostream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
    os.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

std::size_t CorpusConfig::segment_samples() const {
    return static_cast<std::size_t>(std::lround(token_seconds * sample_rate));
}

void CorpusConfig::validate() const {
    if (sample_rate <= 0) throw std::invalid_argument("corpus: sample_rate must be positive");
    if (vocab_size == 0 || vocab_size > kFundamentals.size() * kFormants.size())
        throw std::invalid_argument("corpus: vocab_size must lie in [1, 16]");
    if (min_tokens == 0 || min_tokens > max_tokens) throw std::invalid_argument("corpus: invalid token count range");
    if (gain_min_db > gain_max_db || gain_max_db > 0.0)
        throw std::invalid_argument("corpus: gain range must satisfy min <= max <= 0 dB");
    if (!(peak > 0.0 && peak <= 1.0)) throw std::invalid_argument("corpus: peak must lie in (0, 1]");
    const std::size_t xf = static_cast<std::size_t>(std::lround(crossfade_seconds * sample_rate));
    if (segment_samples() < 64 || xf >= segment_samples())
        throw std::invalid_argument("corpus: segment too short for the crossfade");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("corpus: val_fraction must lie in [0, 1)");
}

Utterance synthesize_utterance(std::span<const int> tokens, std::uint64_t seed, const CorpusConfig& cfg) {
    cfg.validate();
    if (tokens.empty()) throw std::invalid_argument("synthesize_utterance: empty token list");
    for (int t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw std::invalid_argument("synthesize_utterance: token id " + std::to_string(t) + " outside vocabulary of " +
                                        std::to_string(cfg.vocab_size));

    Rng rng = Rng::substream(seed, "synth");
    const std::size_t seg = cfg.segment_samples();
    const std::size_t xf = static_cast<std::size_t>(std::lround(cfg.crossfade_seconds * cfg.sample_rate));
    const std::size_t half = xf / 2;
    const std::size_t n = seg * tokens.size();
    std::vector<double> sig(n, 0.0);

    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::size_t start = i * seg;
        const std::size_t begin = start >= half ? start - half : 0;
        const std::size_t end = std::min(n, start + seg + (xf - half));
        // Complementary raised-cosine ramps: neighbouring windows sum to one.
        std::vector<double> window(end - begin, 1.0);
        for (std::size_t k = begin; k < end; ++k) {
            const double rel_in = static_cast<double>(k + half) - static_cast<double>(start);
            const double rel_out = static_cast<double>(start + seg + half) - static_cast<double>(k);
            double w = 1.0;
            if (rel_in < static_cast<double>(xf)) w *= 0.5 - 0.5 * std::cos(std::numbers::pi * (rel_in + 0.5) / xf);
            if (rel_out < static_cast<double>(xf)) w *= 0.5 - 0.5 * std::cos(std::numbers::pi * (rel_out - 0.5) / xf);
            window[k - begin] = w;
        }
        const double f0 = fundamental(tokens[i]) * (1.0 + rng.uniform(-cfg.f0_jitter, cfg.f0_jitter));
        std::vector<double> phases(64);
        for (auto& p : phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);

        std::vector<double> part(end - begin, 0.0);
        render_token(tokens[i], f0, phases, cfg.sample_rate, begin, window, part);
        double energy = 0.0;
        for (std::size_t k = start; k < std::min(end, start + seg); ++k) energy += part[k - begin] * part[k - begin];
        const double rms = std::sqrt(energy / static_cast<double>(seg));
        for (std::size_t k = begin; k < end; ++k) sig[k] += part[k - begin] / rms;
    }

    double peak = 0.0;
    for (double v : sig) peak = std::max(peak, std::abs(v));
    Utterance u;
    u.seed = seed;
    u.tokens.assign(tokens.begin(), tokens.end());
    u.gain_db = rng.uniform(cfg.gain_min_db, cfg.gain_max_db);
    const double scale = cfg.peak / peak * dsp::db_to_gain(u.gain_db);
    u.waveform.sample_rate = cfg.sample_rate;
    u.waveform.samples.resize(n);
    for (std::size_t k = 0; k < n; ++k) u.waveform.samples[k] = static_cast<float>(sig[k] * scale);
    return u;
}

Transcript transcribe_oracle(const Waveform& w, const CorpusConfig& cfg) {
    cfg.validate();
    const std::size_t seg = cfg.segment_samples();
    if (w.size() < seg)
        throw std::invalid_argument("transcribe_oracle: waveform of " + std::to_string(w.size()) +
                                    " samples is shorter than one segment (" + std::to_string(seg) + ")");
    const auto& bank = templates_for(cfg);
    const std::size_t m = analysis_size(cfg);
    Transcript out;
    for (std::size_t i = 0; i + seg <= w.size(); i += seg) {
        double norm = 0.0;
        auto feat = segment_feature(w.samples.data() + i, seg, m, norm);
        int best = 0;
        double best_score = 0.0;
        if (norm > 0.0) {
            best_score = -1.0;
            for (std::size_t t = 0; t < bank.templates.size(); ++t) {
                double s = 0.0;
                for (std::size_t k = 0; k < feat.size(); ++k) s += feat[k] * bank.templates[t][k];
                if (s > best_score) {
                    best_score = s;
                    best = static_cast<int>(t);
                }
            }
        }
        out.tokens.push_back(best);
        out.confidence.push_back(best_score);
        if (best_score < kLowConfidence) out.low_confidence = true;
    }
    return out;
}

std::vector<int> random_tokens(std::uint64_t seed, const CorpusConfig& cfg) {
    Rng rng = Rng::substream(seed, "tokens");
    const std::size_t len = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
    std::vector<int> t(len);
    for (auto& v : t) v = static_cast<int>(rng.below(cfg.vocab_size));
    return t;
}

Corpus generate_corpus(std::size_t n, std::uint64_t master_seed, const CorpusConfig& cfg) {
    cfg.validate();
    Corpus c;
    const std::size_t period =
        cfg.val_fraction > 0.0 ? static_cast<std::size_t>(std::lround(1.0 / cfg.val_fraction)) : 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t seed = Rng::substream(master_seed, "corpus", i).next_u64();
        auto tokens = random_tokens(seed, cfg);
        auto u = synthesize_utterance(tokens, seed, cfg);
        char id[32];
        std::snprintf(id, sizeof id, "utt%05zu", i);
        u.id = id;
        if (period && i % period == period - 1)
            c.val.push_back(std::move(u));
        else
            c.train.push_back(std::move(u));
    }
    return c;
}

void wav_write(const std::filesystem::path& path, const Waveform& w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("wav_write: cannot open " + path.string());
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    os.write("RIFF", 4);
    put_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    put_u32(os, 16);
    put_u16(os, 1);  // PCM
    put_u16(os, 1);  // mono
    put_u32(os, static_cast<std::uint32_t>(w.sample_rate));
    put_u32(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
    put_u16(os, 2);
    put_u16(os, 16);
    os.write("data", 4);
    put_u32(os, data_bytes);
    for (float s : w.samples) {
        const double c = std::clamp(static_cast<double>(s), -1.0, 1.0);
        put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
    }
    if (!os) throw std::runtime_error("wav_write: write failed for " + path.string());
}

Waveform wav_read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("wav_read: cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& why) { throw std::runtime_error("wav_read: " + path.string() + ": " + why); };
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        fail("not a RIFF/WAVE file");

    Waveform w;
    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t len = get_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16 || body + 16 > bytes.size()) fail("truncated fmt chunk");
            const std::uint16_t format = get_u16(bytes.data() + body);
            const std::uint16_t channels = get_u16(bytes.data() + body + 2);
            w.sample_rate = static_cast<int>(get_u32(bytes.data() + body + 4));
            const std::uint16_t bits = get_u16(bytes.data() + body + 14);
            if (format != 1) fail("unsupported format tag " + std::to_string(format) + " (PCM required)");
            if (channels != 1) fail("unsupported channel count " + std::to_string(channels) + " (mono required)");
            if (bits != 16) fail("unsupported bit depth " + std::to_string(bits) + " (16-bit required)");
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) fail("data chunk precedes fmt chunk");
            if (body + len > bytes.size()) fail("truncated data chunk");
            if (len % 2 != 0) fail("odd data chunk length");
            w.samples.resize(len / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i)
                w.samples[i] = static_cast<float>(static_cast<std::int16_t>(get_u16(bytes.data() + body + 2 * i)) / 32767.0);
            return w;
        }
        pos = body + len + (len & 1u);
    }
    fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
    return w;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_manifest: cannot open " + path.string());
    for (const auto& e : entries) {
        nlohmann::json j{{"id", e.id}, {"tokens", e.tokens}, {"gain_db", e.gain_db},
                         {"seed", e.seed}, {"path", e.path}, {"split", e.split}};
        os << j.dump() << '\n';
    }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_manifest: cannot open " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.id = j.at("id").get<std::string>();
            e.tokens = j.at("tokens").get<std::vector<int>>();
            e.gain_db = j.at("gain_db").get<double>();
            e.seed = j.at("seed").get<std::uint64_t>();
            e.path = j.at("path").get<std::string>();
            e.split = j.value("split", std::string("train"));
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw std::runtime_error("read_manifest: " + path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
    std::filesystem::create_directories(dir / "wavs");
    std::vector<ManifestEntry> entries;
    auto add = [&](const Utterance& u, const char* split) {
        const std::string rel = "wavs/" + u.id + ".wav";
        wav_write(dir / rel, u.waveform);
        entries.push_back({u.id, u.tokens, u.gain_db, u.seed, rel, split});
    };
    for (const auto& u : corpus.train) add(u, "train");
    for (const auto& u : corpus.val) add(u, "val");
    write_manifest(dir / "manifest.jsonl", entries);
}

Corpus load_corpus(const std::filesystem::path& dir) {
    Corpus c;
    for (const auto& e : read_manifest(dir / "manifest.jsonl")) {
        Utterance u;
        u.id = e.id;
        u.tokens = e.tokens;
        u.gain_db = e.gain_db;
        u.seed = e.seed;
        u.waveform = wav_read(dir / e.path);
        (e.split == "val" ? c.val : c.train).push_back(std::move(u));
    }
    return c;
}

}  // namespace podar::corpus
