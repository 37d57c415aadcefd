// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "codec.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "checkpoint.hpp"
#include "json_util.hpp"

namespace podar::codec {

using nlohmann::json;

void Latent::validate() const {
    if (values.rank() != 2) throw ShapeError("latent: expected (L, T), got " + shape_str(values.shape()));
    if (k < 1 || k >= values.dim(0))
        throw std::invalid_argument("latent: power channel count " + std::to_string(k) + " must lie in [1, " +
                                    std::to_string(values.dim(0)) + ")");
}

std::size_t frames_for(std::size_t n, std::size_t hop) { return (n + hop - 1) / hop; }

std::pair<Latent, Latent> encode(const Autoencoder& m, const Waveform& x) {
    if (x.samples.empty()) throw std::invalid_argument("encode: empty waveform");
    ad::NoGradGuard ng;
    auto post = m.encode_graph(ad::constant(TensorF({1, 1, x.size()}, x.samples)));
    const std::size_t L = m.latent_channels(), T = post.mu.dim(2);
    return {Latent{post.mu.value().reshaped({L, T}), m.power_channels()},
            Latent{post.logvar.value().reshaped({L, T}), m.power_channels()}};
}

Latent encode_mean(const Autoencoder& m, const Waveform& x) { return encode(m, x).first; }

Latent sample_latent(const Latent& mu, const Latent& logvar, Rng& rng) {
    if (mu.values.shape() != logvar.values.shape())
        throw ShapeError("sample_latent: mu " + shape_str(mu.values.shape()) + " vs logvar " +
                         shape_str(logvar.values.shape()));
    Latent z = mu;
    for (std::size_t i = 0; i < z.values.size(); ++i)
        z.values[i] = static_cast<float>(mu.values[i] + std::exp(0.5 * logvar.values[i]) * rng.normal());
    return z;
}

Waveform decode(const Autoencoder& m, const Latent& z, std::size_t n, int sample_rate) {
    z.validate();
    if (z.channels() != m.latent_channels())
        throw ShapeError("decode: latent has " + std::to_string(z.channels()) + " channels, model expects " +
                         std::to_string(m.latent_channels()));
    ad::NoGradGuard ng;
    if (n == 0) n = z.frames() * m.hop();
    auto y = m.decode_graph(ad::constant(z.values.reshaped({1, z.channels(), z.frames()})), n);
    return Waveform{y.value().to_vector(), sample_rate};
}

std::size_t CodecArch::hop() const {
    return std::accumulate(strides.begin(), strides.end(), std::size_t{1}, std::multiplies<>());
}

void CodecArch::validate() const {
    if (strides.empty() || strides.size() != widths.size())
        throw ConfigError("codec.arch: strides and widths must be non-empty and of equal length");
    for (auto s : strides)
        if (s < 2 || s % 2) throw ConfigError("codec.arch: strides must be even and >= 2");
    for (auto w : widths)
        if (w == 0) throw ConfigError("codec.arch: widths must be positive");
    if (stem_width == 0) throw ConfigError("codec.arch: stem_width must be positive");
    if (power_channels < 1 || power_channels >= latent_channels)
        throw ConfigError("codec.arch: need 1 <= power_channels < latent_channels");
}

void to_json(json& j, const CodecArch& a) {
    j = json{{"latent_channels", a.latent_channels}, {"power_channels", a.power_channels},
             {"strides", a.strides},                 {"widths", a.widths},
             {"stem_width", a.stem_width},           {"logvar_init", a.logvar_init}};
}

void from_json(const json& j, CodecArch& a) {
    const std::string w = "codec.arch";
    check_keys(j, {"latent_channels", "power_channels", "strides", "widths", "stem_width", "logvar_init"}, w);
    read_opt(j, "latent_channels", a.latent_channels, w);
    read_opt(j, "power_channels", a.power_channels, w);
    read_opt(j, "strides", a.strides, w);
    read_opt(j, "widths", a.widths, w);
    read_opt(j, "stem_width", a.stem_width, w);
    read_opt(j, "logvar_init", a.logvar_init, w);
}

CodecModel::CodecModel(const CodecArch& arch, std::uint64_t seed) : arch_(arch) {
    arch_.validate();
    Rng rng = Rng::substream(seed, "init");
    const std::size_t L = arch_.latent_channels;
    stem_ = nn::Conv1d::make(params_, "enc.stem", 1, arch_.stem_width, 7, 1, 3, rng);
    std::size_t c = arch_.stem_width;
    for (std::size_t i = 0; i < arch_.strides.size(); ++i) {
        const std::size_t s = arch_.strides[i];
        down_.push_back(nn::Conv1d::make(params_, "enc.down" + std::to_string(i), c, arch_.widths[i], 2 * s, s,
                                         s / 2, rng));
        c = arch_.widths[i];
    }
    norm_ = nn::LayerNorm::make(params_, "enc.norm", c);
    mu_head_ = nn::Conv1d::make(params_, "enc.mu", 2 * c, L, 3, 1, 1, rng);
    logvar_head_ = nn::Conv1d::make(params_, "enc.logvar", 2 * c, L, 3, 1, 1, rng);
    for (auto& w : logvar_head_.w.mutable_value().storage()) w *= 0.1f;
    logvar_head_.b.mutable_value().fill(static_cast<float>(arch_.logvar_init));

    dec_in_ = nn::Conv1d::make(params_, "dec.in", L, c, 3, 1, 1, rng);
    for (std::size_t i = arch_.strides.size(); i-- > 0;) {
        const std::size_t s = arch_.strides[i];
        const std::size_t out = i > 0 ? arch_.widths[i - 1] : arch_.stem_width;
        up_.push_back(nn::ConvTranspose1d::make(params_, "dec.up" + std::to_string(i), arch_.widths[i], out, 2 * s,
                                                s, s / 2, rng));
    }
    dec_out_ = nn::Conv1d::make(params_, "dec.out", arch_.stem_width, 1, 7, 1, 3, rng);
    env_head_ = nn::Conv1d::make(params_, "dec.env", L, 1, 3, 1, 1, rng);
    env_head_.w.mutable_value().fill(0.0f);
    env_head_.b.mutable_value().fill(1.0f);

    // Triangular kernel: transposed conv with it interpolates linearly
    // between frame centres, and overlapping taps sum to one.
    const std::size_t S = arch_.hop();
    TensorF tri({1, 1, 2 * S});
    for (std::size_t j = 0; j < 2 * S; ++j)
        tri[j] = static_cast<float>(1.0 - std::abs(static_cast<double>(j) + 0.5 - static_cast<double>(S)) / S);
    env_kernel_ = ad::constant(std::move(tri));
}

void CodecModel::check_finite() const {
    const std::string bad = params_.first_non_finite();
    if (!bad.empty()) throw NonFiniteError("codec parameter '" + bad + "' contains NaN or infinity");
}

Autoencoder::Posterior CodecModel::encode_graph(const VarF& x) const {
    if (x.value().rank() != 3 || x.dim(1) != 1)
        throw ShapeError("codec encode: expected (B, 1, N), got " + shape_str(x.shape()));
    if (x.dim(2) == 0) throw ShapeError("codec encode: empty input");
    check_finite();
    const std::size_t B = x.dim(0), N = x.dim(2), S = hop();
    const std::size_t T = frames_for(N, S);
    VarF h = x;
    if (T * S != N) h = ad::concat<float>({x, ad::constant(TensorF({B, 1, T * S - N}))}, 2);
    h = ad::elu(stem_(h));
    for (const auto& d : down_) h = ad::elu(d(h));
    VarF hn = ad::permute(norm_(ad::permute(h, {0, 2, 1})), {0, 2, 1});
    VarF feat = ad::concat<float>({h, hn}, 1);
    return {mu_head_(feat), logvar_head_(feat)};
}

VarF CodecModel::decode_graph(const VarF& z, std::size_t n) const {
    if (z.value().rank() != 3 || z.dim(1) != latent_channels())
        throw ShapeError("codec decode: expected (B, " + std::to_string(latent_channels()) + ", T), got " +
                         shape_str(z.shape()));
    check_finite();
    const std::size_t B = z.dim(0), T = z.dim(2), S = hop();
    VarF h = ad::elu(dec_in_(z));
    for (const auto& u : up_) h = ad::elu(u(h));
    VarF wave = dec_out_(h);  // (B, 1, T*S)

    VarF env = env_head_(z);  // (B, 1, T)
    // Replicate the edge frames so the interpolation has no boundary taper.
    env = ad::concat<float>({ad::slice(env, 2, 0, 1), env, ad::slice(env, 2, T - 1, T)}, 2);
    env = ad::conv_transpose1d(env, env_kernel_, VarF{}, S, S / 2);  // (B, 1, (T+2)*S)
    env = ad::slice(env, 2, S, S + T * S);

    VarF y = ad::tanh(ad::mul(wave, env));
    if (n < T * S) return ad::slice(y, 2, 0, n);
    if (n > T * S) return ad::concat<float>({y, ad::constant(TensorF({B, 1, n - T * S}))}, 2);
    return y;
}

Waveform apply_gain(const Waveform& x, double u_db) {
    const double g = dsp::db_to_gain(u_db);
    double peak = 0.0;
    for (float s : x.samples) peak = std::max(peak, std::abs(static_cast<double>(s)));
    if (peak * g > 1.0)
        throw std::invalid_argument("power_augment: gain " + std::to_string(u_db) + " dB would clip (peak " +
                                    std::to_string(peak) + ")");
    Waveform out = x;
    for (auto& s : out.samples) s = static_cast<float>(g * s);
    return out;
}

Augmented power_augment(const Waveform& x, Rng& rng, double max_db) {
    if (!(max_db >= 0.0)) throw std::invalid_argument("power_augment: max gain must be non-negative");
    double peak = 0.0;
    for (float s : x.samples) peak = std::max(peak, std::abs(static_cast<double>(s)));
    if (peak * dsp::db_to_gain(max_db) > 1.0)
        throw std::invalid_argument("power_augment: peak " + std::to_string(peak) + " leaves no headroom for +" +
                                    std::to_string(max_db) + " dB");
    const double u = rng.uniform(-max_db, max_db);
    return {apply_gain(x, u), u};
}

VarF consistency_loss(const VarF& mu, const VarF& mu_tilde, std::size_t k, ConsistencyReduction r) {
    if (mu.shape() != mu_tilde.shape() || mu.value().rank() != 3)
        throw ShapeError("podar_loss: means must share a (B, L, T) shape, got " + shape_str(mu.shape()) + " and " +
                         shape_str(mu_tilde.shape()));
    const std::size_t L = mu.dim(1);
    if (k < 1 || k >= L) throw std::invalid_argument("podar_loss: need 1 <= k < L");
    auto sq = ad::square(ad::sub(ad::slice(mu, 1, k, L), ad::slice(mu_tilde, 1, k, L)));
    if (r == ConsistencyReduction::Mean) return ad::mean(sq);
    return ad::scale(ad::sum(sq), 1.0f / static_cast<float>(mu.dim(0)));
}

VarF podar_loss(const Autoencoder& m, const TensorF& x, const TensorF& x_tilde, ConsistencyGradient mode,
                ConsistencyReduction r) {
    if (x.shape() != x_tilde.shape())
        throw ShapeError("podar_loss: x " + shape_str(x.shape()) + " vs x_tilde " + shape_str(x_tilde.shape()));
    VarF mu = m.encode_graph(ad::constant(x)).mu;
    VarF mu_t = m.encode_graph(ad::constant(x_tilde)).mu;
    if (mode == ConsistencyGradient::StopAugmented) mu_t = ad::detach(mu_t);
    return consistency_loss(mu, mu_t, m.power_channels(), r);
}

VarF kl_divergence(const VarF& mu, const VarF& logvar) {
    auto t = ad::sub(ad::add(ad::square(mu), ad::exp(logvar)), ad::add_scalar(logvar, 1.0f));
    return ad::scale(ad::mean(t), 0.5f);
}

ObjectiveTerms codec_objective(const Autoencoder& m, const TensorF& x, const std::vector<double>& u_db,
                               const TensorF& eps, const LossWeights& w) {
    if (x.rank() != 3 || x.dim(1) != 1 || x.dim(0) == 0)
        throw ShapeError("codec_objective: batch must be (B, 1, N) with B > 0, got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), N = x.dim(2);
    if (u_db.size() != B) throw std::invalid_argument("codec_objective: need one gain per batch item");
    if (w.lambda_podar < 0.0) throw std::invalid_argument("codec_objective: lambda_podar must be >= 0");

    VarF X = ad::constant(x);
    auto post = m.encode_graph(X);
    if (eps.shape() != post.mu.shape())
        throw ShapeError("codec_objective: eps " + shape_str(eps.shape()) + " vs latent " +
                         shape_str(post.mu.shape()));
    VarF z = ad::add(post.mu, ad::mul(ad::exp(ad::scale(post.logvar, 0.5f)), ad::constant(eps)));
    VarF x_hat = ad::reshape(m.decode_graph(z, N), {B, N});
    VarF x_ref = ad::reshape(X, {B, N});

    ObjectiveTerms out;
    VarF recon = dsp::multires_stft_loss(x_ref, x_hat, w.stft);
    VarF l1 = ad::mean(ad::abs(ad::sub(x_hat, x_ref)));
    VarF kl = kl_divergence(post.mu, post.logvar);

    TensorF xt = x;
    for (std::size_t b = 0; b < B; ++b) {
        const double g = dsp::db_to_gain(u_db[b]);
        for (std::size_t i = 0; i < N; ++i) xt[b * N + i] = static_cast<float>(g * x[b * N + i]);
    }
    VarF pod;
    if (w.lambda_podar > 0.0) {
        VarF mu_t = m.encode_graph(ad::constant(xt)).mu;
        if (w.grad_mode == ConsistencyGradient::StopAugmented) mu_t = ad::detach(mu_t);
        pod = consistency_loss(post.mu, mu_t, m.power_channels(), w.reduction);
    } else {
        ad::NoGradGuard ng;
        pod = consistency_loss(ad::detach(post.mu), m.encode_graph(ad::constant(xt)).mu, m.power_channels(),
                               w.reduction);
    }

    VarF total = ad::add(ad::add(recon, ad::scale(l1, static_cast<float>(w.l1))),
                         ad::scale(kl, static_cast<float>(w.kl)));
    if (w.lambda_podar > 0.0) total = ad::add(total, ad::scale(pod, static_cast<float>(w.lambda_podar)));

    out.total = total;
    out.recon = recon.item();
    out.l1 = l1.item();
    out.kl = kl.item();
    out.podar = pod.item();
    out.total_value = out.recon + w.l1 * out.l1 + w.kl * out.kl + w.lambda_podar * out.podar;
    return out;
}

void CodecTrainConfig::validate() const {
    arch.validate();
    loss.stft.validate();
    if (loss.lambda_podar < 0.0) throw ConfigError("codec: lambda_podar must be >= 0");
    if (loss.kl < 0.0 || loss.l1 < 0.0) throw ConfigError("codec: loss weights must be >= 0");
    if (!(adam.lr > 0.0)) throw ConfigError("codec: lr must be positive");
    if (batch_size == 0 || steps == 0) throw ConfigError("codec: steps and batch_size must be positive");
    if (crop_samples < arch.hop()) throw ConfigError("codec: crop_samples must cover at least one frame");
    if (std::abs(gain_min_db + gain_max_db) > 1e-12 || gain_max_db < 0.0)
        throw ConfigError("codec: gain range must be symmetric around 0 dB");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("codec: ema_decay must lie in [0, 1)");
    if (checkpoint_every == 0) throw ConfigError("codec: checkpoint_every must be positive");
}

namespace {

const char* grad_mode_name(ConsistencyGradient g) {
    return g == ConsistencyGradient::Symmetric ? "symmetric" : "stop_augmented";
}

const char* reduction_name(ConsistencyReduction r) { return r == ConsistencyReduction::Sum ? "sum" : "mean"; }

ConsistencyReduction reduction_from(const std::string& s) {
    if (s == "sum") return ConsistencyReduction::Sum;
    if (s == "mean") return ConsistencyReduction::Mean;
    throw ConfigError("codec.consistency_reduction: expected 'sum' or 'mean', got '" + s + "'");
}

ConsistencyGradient grad_mode_from(const std::string& s) {
    if (s == "symmetric") return ConsistencyGradient::Symmetric;
    if (s == "stop_augmented") return ConsistencyGradient::StopAugmented;
    throw ConfigError("codec.consistency_gradient: expected 'symmetric' or 'stop_augmented', got '" + s + "'");
}

}  // namespace

void to_json(json& j, const CodecTrainConfig& c) {
    j = json{{"arch", c.arch},
             {"lambda_podar", c.loss.lambda_podar},
             {"kl_weight", c.loss.kl},
             {"l1_weight", c.loss.l1},
             {"consistency_gradient", grad_mode_name(c.loss.grad_mode)},
             {"consistency_reduction", reduction_name(c.loss.reduction)},
             {"stft_fft_sizes", c.loss.stft.fft_sizes},
             {"stft_hop_fraction", c.loss.stft.hop_fraction},
             {"lr", c.adam.lr},
             {"grad_clip", c.adam.grad_clip},
             {"steps", c.steps},
             {"batch_size", c.batch_size},
             {"crop_samples", c.crop_samples},
             {"gain_min_db", c.gain_min_db},
             {"gain_max_db", c.gain_max_db},
             {"ema_decay", c.ema_decay},
             {"seed", c.seed},
             {"checkpoint_every", c.checkpoint_every},
             {"min_corpus", c.min_corpus}};
}

void from_json(const json& j, CodecTrainConfig& c) {
    const std::string w = "codec";
    check_keys(j,
               {"arch", "lambda_podar", "kl_weight", "l1_weight", "consistency_gradient", "consistency_reduction",
                "stft_fft_sizes",
                "stft_hop_fraction", "lr", "grad_clip", "steps", "batch_size", "crop_samples", "gain_min_db",
                "gain_max_db", "ema_decay", "seed", "checkpoint_every", "min_corpus"},
               w);
    if (j.contains("arch")) from_json(j.at("arch"), c.arch);
    read_opt(j, "lambda_podar", c.loss.lambda_podar, w);
    read_opt(j, "kl_weight", c.loss.kl, w);
    read_opt(j, "l1_weight", c.loss.l1, w);
    std::string gm = grad_mode_name(c.loss.grad_mode);
    read_opt(j, "consistency_gradient", gm, w);
    c.loss.grad_mode = grad_mode_from(gm);
    std::string red = reduction_name(c.loss.reduction);
    read_opt(j, "consistency_reduction", red, w);
    c.loss.reduction = reduction_from(red);
    read_opt(j, "stft_fft_sizes", c.loss.stft.fft_sizes, w);
    read_opt(j, "stft_hop_fraction", c.loss.stft.hop_fraction, w);
    read_opt(j, "lr", c.adam.lr, w);
    read_opt(j, "grad_clip", c.adam.grad_clip, w);
    read_opt(j, "steps", c.steps, w);
    read_opt(j, "batch_size", c.batch_size, w);
    read_opt(j, "crop_samples", c.crop_samples, w);
    read_opt(j, "gain_min_db", c.gain_min_db, w);
    read_opt(j, "gain_max_db", c.gain_max_db, w);
    read_opt(j, "ema_decay", c.ema_decay, w);
    read_opt(j, "seed", c.seed, w);
    read_opt(j, "checkpoint_every", c.checkpoint_every, w);
    read_opt(j, "min_corpus", c.min_corpus, w);
}

namespace {

constexpr const char* kLogHeader = "step,recon,l1,kl,podar,total,u_mean";

std::string format_row(const TrainLogRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.step, r.recon, r.l1, r.kl, r.podar,
                  r.total, r.u_mean);
    return buf;
}

/// Keeps the header and rows with step <= last_step, so a resumed run
/// appends exactly where its checkpoint left off.
void truncate_log(const std::filesystem::path& path, std::size_t last_step) {
    std::ifstream in(path);
    std::string line, out;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            out += line + "\n";
            header = false;
            continue;
        }
        if (std::stoull(line.substr(0, line.find(','))) <= last_step) out += line + "\n";
    }
    in.close();
    ckpt::write_atomic(path, out);
}

json rng_state(const std::vector<std::pair<std::string, Rng*>>& rngs) {
    json j = json::object();
    for (const auto& [n, r] : rngs) j[n] = r->state();
    return j;
}

/// Random crop of `len` samples from a random training utterance, zero
/// padded when the utterance is shorter.
void fill_crop(const std::vector<corpus::Utterance>& train, Rng& rng, std::size_t len, float* dst) {
    const auto& w = train[rng.below(train.size())].waveform.samples;
    std::fill(dst, dst + len, 0.0f);
    if (w.size() <= len) {
        std::copy(w.begin(), w.end(), dst);
        return;
    }
    const std::size_t off = rng.below(w.size() - len + 1);
    std::copy(w.begin() + static_cast<std::ptrdiff_t>(off), w.begin() + static_cast<std::ptrdiff_t>(off + len), dst);
}

}  // namespace

CodecTrainResult train_codec(const CodecTrainConfig& cfg, const corpus::Corpus& data, const TrainIo& io) {
    cfg.validate();
    const std::size_t total_utts = data.train.size() + data.val.size();
    if (total_utts < cfg.min_corpus)
        throw std::invalid_argument("train_codec: corpus has " + std::to_string(total_utts) + " utterances, need " +
                                    std::to_string(cfg.min_corpus));
    if (data.train.empty()) throw std::invalid_argument("train_codec: empty training split");

    CodecTrainResult res;
    res.model = std::make_unique<CodecModel>(cfg.arch, cfg.seed);
    CodecModel& model = *res.model;
    nn::Adam opt(model.params(), cfg.adam);
    std::unique_ptr<nn::Ema> ema;
    if (cfg.ema_decay > 0.0) ema = std::make_unique<nn::Ema>(model.params(), cfg.ema_decay);

    Rng batch_rng = Rng::substream(cfg.seed, "batch");
    Rng aug_rng = Rng::substream(cfg.seed, "augment");
    Rng noise_rng = Rng::substream(cfg.seed, "latent-noise");
    const std::vector<std::pair<std::string, Rng*>> rngs{
        {"batch", &batch_rng}, {"augment", &aug_rng}, {"latent-noise", &noise_rng}};

    std::size_t start = 0, over = 0;
    double initial = 0.0;
    const bool write = !io.out_dir.empty();
    const auto ckpt_path = io.out_dir / "checkpoint.pdar";
    const auto log_path = io.out_dir / "train_log.csv";

    auto save_state = [&](std::size_t step) {
        ckpt::Checkpoint ck;
        ck.add("param/", model.params().snapshot());
        ck.add("", opt.state());
        if (ema) ck.add("ema/", ema->shadow());
        ck.metadata = json{{"kind", "codec-train"}, {"config", cfg},           {"step", step},
                           {"rng", rng_state(rngs)}, {"initial_loss", initial}, {"over_count", over}};
        ckpt::save(ckpt_path, ck);
    };

    if (write) {
        std::filesystem::create_directories(io.out_dir);
        if (io.resume && std::filesystem::exists(ckpt_path)) {
            auto ck = ckpt::load(ckpt_path);
            if (ck.metadata.value("kind", "") != "codec-train")
                throw std::runtime_error(ckpt_path.string() + ": not a codec training checkpoint");
            // The step budget may grow between runs; everything else must match.
            json saved = ck.metadata.at("config"), now = cfg;
            saved.erase("steps");
            now.erase("steps");
            if (saved != now) throw std::runtime_error(ckpt_path.string() + ": config differs from the checkpointed run");
            if (ck.metadata.at("step").get<std::size_t>() > cfg.steps)
                throw std::runtime_error(ckpt_path.string() + ": checkpoint is past the requested step count");
            model.params().load(ck.with_prefix("param/"));
            start = ck.metadata.at("step").get<std::size_t>();
            opt.load_state(ck.f32, start);
            if (ema) ema->set_shadow(ck.with_prefix("ema/"));
            for (const auto& [n, r] : rngs) r->set_state(ck.metadata.at("rng").at(n).get<std::string>());
            initial = ck.metadata.at("initial_loss").get<double>();
            over = ck.metadata.at("over_count").get<std::size_t>();
            truncate_log(log_path, start);
        } else {
            ckpt::write_atomic(log_path, std::string(kLogHeader) + "\n");
        }
    }
    std::ofstream log;
    if (write) log.open(log_path, std::ios::app);

    const std::size_t B = cfg.batch_size, N = cfg.crop_samples, L = cfg.arch.latent_channels;
    const std::size_t T = frames_for(N, cfg.arch.hop());
    for (std::size_t step = start + 1; step <= cfg.steps; ++step) {
        TensorF x({B, 1, N});
        std::vector<double> u(B);
        for (std::size_t b = 0; b < B; ++b) fill_crop(data.train, batch_rng, N, x.data() + b * N);
        for (std::size_t b = 0; b < B; ++b) u[b] = aug_rng.uniform(cfg.gain_min_db, cfg.gain_max_db);
        TensorF eps({B, L, T});
        for (auto& e : eps.storage()) e = static_cast<float>(noise_rng.normal());

        model.params().zero_grad();
        auto terms = codec_objective(model, x, u, eps, cfg.loss);
        if (!std::isfinite(terms.total_value)) {
            std::ostringstream os;
            os << "step " << step << ": non-finite loss (recon=" << terms.recon << " l1=" << terms.l1
               << " kl=" << terms.kl << " podar=" << terms.podar << ")";
            if (write) os << "; last good checkpoint kept at " << ckpt_path.string();
            throw NonFiniteError(os.str());
        }
        ad::backward(terms.total);
        opt.step();
        model.check_finite();
        if (ema) ema->update(model.params());

        TrainLogRow row{step, terms.recon, terms.l1, terms.kl, terms.podar, terms.total_value,
                        std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(B)};
        res.log.push_back(row);
        if (write) log << format_row(row) << "\n" << std::flush;
        if (io.on_step) io.on_step(row, model);

        if (step == 1) initial = terms.total_value;
        over = terms.total_value > cfg.divergence_factor * initial ? over + 1 : 0;
        if (over >= cfg.divergence_patience)
            throw DivergenceError("step " + std::to_string(step) + ": loss above " +
                                  std::to_string(cfg.divergence_factor) + "x its initial value for " +
                                  std::to_string(over) + " consecutive steps");
        if (write && (step % cfg.checkpoint_every == 0 || step == cfg.steps)) save_state(step);
    }

    if (ema) model.params().load(ema->shadow());
    const auto& eval_set = data.val.empty() ? data.train : data.val;
    res.val_recon = reconstruction_loss(model, eval_set, cfg.loss.stft);
    if (write) {
        json extra{{"train_config", cfg}, {"val_recon", res.val_recon}, {"steps", cfg.steps}};
        save_codec(io.out_dir / "codec.pdar", model, extra);
    }
    return res;
}

double reconstruction_loss(const Autoencoder& m, const std::vector<corpus::Utterance>& utts,
                           const dsp::StftConfig& stft) {
    if (utts.empty()) throw std::invalid_argument("reconstruction_loss: no utterances");
    ad::NoGradGuard ng;
    double acc = 0.0;
    for (const auto& u : utts) {
        const auto& w = u.waveform;
        auto mu = encode_mean(m, w);
        auto y = decode(m, mu, w.size(), w.sample_rate);
        auto a = ad::constant(TensorF({1, w.size()}, w.samples));
        auto b = ad::constant(TensorF({1, y.size()}, y.samples));
        acc += dsp::multires_stft_loss(a, b, stft).item();
    }
    return acc / static_cast<double>(utts.size());
}

void save_codec(const std::filesystem::path& path, const CodecModel& m, const json& extra) {
    ckpt::Checkpoint ck;
    ck.add("param/", m.params().snapshot());
    ck.metadata = json{{"kind", "codec"}, {"arch", m.arch()}};
    if (!extra.is_null())
        for (auto it = extra.begin(); it != extra.end(); ++it) ck.metadata[it.key()] = it.value();
    ckpt::save(path, ck);
}

std::unique_ptr<CodecModel> load_codec(const std::filesystem::path& path) {
    auto ck = ckpt::load(path);
    if (ck.metadata.value("kind", "") != "codec")
        throw std::runtime_error(path.string() + ": not a codec checkpoint");
    CodecArch arch;
    try {
        arch = ck.metadata.at("arch").get<CodecArch>();
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": bad codec metadata: " + e.what());
    }
    auto m = std::make_unique<CodecModel>(arch, 0);
    m->params().load(ck.with_prefix("param/"));
    m->check_finite();
    return m;
}

}  // namespace podar::codec
