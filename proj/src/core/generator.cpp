// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "generator.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "checkpoint.hpp"
#include "json_util.hpp"
#include "parallel.hpp"

namespace podar::gen {

using json = nlohmann::json;
using codec::Latent;

LatentStats compute_stats(const std::vector<Latent>& latents) {
    if (latents.empty()) throw std::invalid_argument("compute_stats: no latents");
    const std::size_t L = latents.front().channels();
    std::vector<double> s(L, 0.0), s2(L, 0.0);
    std::size_t n = 0;
    for (const auto& z : latents) {
        if (z.channels() != L) throw std::invalid_argument("compute_stats: channel count mismatch");
        const std::size_t T = z.frames();
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t t = 0; t < T; ++t) s[l] += z.values[l * T + t];
        n += T;
    }
    LatentStats st;
    st.mu.resize(L);
    st.sigma.resize(L);
    for (std::size_t l = 0; l < L; ++l) st.mu[l] = static_cast<float>(s[l] / static_cast<double>(n));
    // Second pass around the mean for accuracy.
    for (const auto& z : latents) {
        const std::size_t T = z.frames();
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t t = 0; t < T; ++t) {
                const double d = z.values[l * T + t] - static_cast<double>(st.mu[l]);
                s2[l] += d * d;
            }
    }
    for (std::size_t l = 0; l < L; ++l) st.sigma[l] = static_cast<float>(std::sqrt(s2[l] / static_cast<double>(n)));
    return st;
}

namespace {

void check_stats(const Latent& z, const LatentStats& s, const char* where) {
    if (z.values.rank() != 2 || z.channels() != s.channels() || s.sigma.size() != s.mu.size())
        throw std::invalid_argument(std::string(where) + ": latent has " + shape_str(z.values.shape()) +
                                    ", stats have " + std::to_string(s.channels()) + " channels");
    for (std::size_t l = 0; l < s.channels(); ++l)
        if (!std::isfinite(s.mu[l]) || !std::isfinite(s.sigma[l]) || s.sigma[l] < 0.0f)
            throw std::invalid_argument(std::string(where) + ": invalid stats in channel " + std::to_string(l));
}

}  // namespace

Latent normalize(const Latent& z, const LatentStats& s) {
    check_stats(z, s, "normalize");
    Latent out = z;
    const std::size_t T = z.frames();
    for (std::size_t l = 0; l < z.channels(); ++l) {
        const double m = s.mu[l], d = static_cast<double>(s.sigma[l]) + kStatsEps;
        for (std::size_t t = 0; t < T; ++t)
            out.values[l * T + t] = static_cast<float>((z.values[l * T + t] - m) / d);
    }
    return out;
}

Latent denormalize(const Latent& z, const LatentStats& s) {
    check_stats(z, s, "denormalize");
    Latent out = z;
    const std::size_t T = z.frames();
    for (std::size_t l = 0; l < z.channels(); ++l) {
        const double m = s.mu[l], d = static_cast<double>(s.sigma[l]) + kStatsEps;
        for (std::size_t t = 0; t < T; ++t)
            out.values[l * T + t] = static_cast<float>(z.values[l * T + t] * d + m);
    }
    return out;
}

void FlowArch::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("flow arch: " + m); };
    if (latent_channels < 2) fail("latent_channels must be at least 2");
    if (power_channels < 1 || power_channels >= latent_channels) fail("power_channels must be in [1, L)");
    if (vocab_size < 1) fail("vocab_size must be positive");
    if (patch < 1 || frames_per_token % patch != 0) fail("patch must divide frames_per_token");
    if (width == 0 || heads == 0 || width % heads != 0) fail("width must be a positive multiple of heads");
    if (blocks == 0 || ff_mult == 0) fail("blocks and ff_mult must be positive");
    if (time_dim < 2 || time_dim % 2 != 0) fail("time_dim must be even");
}

void to_json(json& j, const FlowArch& a) {
    j = json{{"latent_channels", a.latent_channels}, {"power_channels", a.power_channels},
             {"vocab_size", a.vocab_size},           {"frames_per_token", a.frames_per_token},
             {"patch", a.patch},                     {"width", a.width},
             {"blocks", a.blocks},                   {"heads", a.heads},
             {"ff_mult", a.ff_mult},                 {"time_dim", a.time_dim}};
}

void from_json(const json& j, FlowArch& a) {
    const char* w = "flow arch";
    check_keys(j,
               {"latent_channels", "power_channels", "vocab_size", "frames_per_token", "patch", "width", "blocks",
                "heads", "ff_mult", "time_dim"},
               w);
    read_opt(j, "latent_channels", a.latent_channels, w);
    read_opt(j, "power_channels", a.power_channels, w);
    read_opt(j, "vocab_size", a.vocab_size, w);
    read_opt(j, "frames_per_token", a.frames_per_token, w);
    read_opt(j, "patch", a.patch, w);
    read_opt(j, "width", a.width, w);
    read_opt(j, "blocks", a.blocks, w);
    read_opt(j, "heads", a.heads, w);
    read_opt(j, "ff_mult", a.ff_mult, w);
    read_opt(j, "time_dim", a.time_dim, w);
}

TensorF timestep_embedding(const std::vector<double>& t, std::size_t dim) {
    const std::size_t half = dim / 2;
    TensorF e({t.size(), dim});
    for (std::size_t b = 0; b < t.size(); ++b)
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double a = 1000.0 * t[b] * freq;
            e[b * dim + i] = static_cast<float>(std::sin(a));
            e[b * dim + half + i] = static_cast<float>(std::cos(a));
        }
    return e;
}

namespace {

VarF silu(const VarF& x) {
    return ad::mul(x, ad::add_scalar(ad::scale(ad::tanh(ad::scale(x, 0.5f)), 0.5f), 0.5f));
}

constexpr std::size_t kMaxPositions = 1024;

}  // namespace

FlowModel::FlowModel(const FlowArch& arch, std::uint64_t seed) : arch_(arch) {
    arch_.validate();
    Rng rng = Rng::substream(seed, "init");
    const std::size_t D = arch_.width, L = arch_.latent_channels, P = arch_.patch;
    const std::size_t in_dim = 2 * P * L + 1;
    token_table_ = params_.add("token_table", nn::uniform_init({arch_.vocab_size + 1, D}, 1.0, rng));
    in_proj_ = nn::Linear::make(params_, "in_proj", in_dim, D, rng);
    time1_ = nn::Linear::make(params_, "time1", arch_.time_dim, D, rng);
    time2_ = nn::Linear::make(params_, "time2", D, D, rng);
    for (std::size_t i = 0; i < arch_.blocks; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        Block b;
        b.ln1 = nn::LayerNorm::make(params_, p + "ln1", D);
        b.qkv = nn::Linear::make(params_, p + "qkv", D, 3 * D, rng);
        b.proj = nn::Linear::make(params_, p + "proj", D, D, rng, 0.5);
        b.ln2 = nn::LayerNorm::make(params_, p + "ln2", D);
        b.ff1 = nn::Linear::make(params_, p + "ff1", D, arch_.ff_mult * D, rng);
        b.ff2 = nn::Linear::make(params_, p + "ff2", arch_.ff_mult * D, D, rng, 0.5);
        blocks_.push_back(b);
    }
    out_norm_ = nn::LayerNorm::make(params_, "out_norm", D);
    out_proj_ = nn::Linear::make(params_, "out_proj", D, P * L, rng, 0.1);

    pos_ = TensorF({kMaxPositions, D});
    std::vector<double> pos(kMaxPositions);
    std::iota(pos.begin(), pos.end(), 0.0);
    for (auto& p : pos) p /= 1000.0;  // timestep_embedding scales by 1000
    pos_ = timestep_embedding(pos, D);
}

VarF FlowModel::forward(const VarF& x, const std::vector<double>& t, const FlowCond& cond) const {
    const Shape& s = x.shape();
    const std::size_t L = arch_.latent_channels, P = arch_.patch, D = arch_.width, H = arch_.heads;
    if (s.size() != 3 || s[1] != L || s[2] % P != 0 || s[2] == 0)
        throw ShapeError("FlowModel: expected (B, " + std::to_string(L) + ", T) with T a multiple of " +
                         std::to_string(P) + ", got " + shape_str(s));
    const std::size_t B = s[0], T = s[2], NP = T / P;
    if (NP > kMaxPositions) throw ShapeError("FlowModel: sequence too long");
    if (t.size() != B || cond.tokens.size() != B || cond.drop_text.size() != B)
        throw ShapeError("FlowModel: conditioning batch mismatch");
    const bool has_prompt = !cond.prompt.empty();
    if (has_prompt && (cond.prompt.shape() != s || cond.prompt_frames.size() != B))
        throw ShapeError("FlowModel: prompt must match x");

    auto patchify = [&](const VarF& v) { return ad::reshape(ad::permute(v, {0, 2, 1}), {B, NP, P * L}); };

    // Prompt context: visible frames copied, the rest zero, plus the visible fraction per patch.
    TensorF ctx({B, NP, P * L + 1});
    if (has_prompt) {
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t vis = std::min(cond.prompt_frames[b], T);
            for (std::size_t f = 0; f < vis; ++f) {
                const std::size_t p = f / P, j = f % P;
                for (std::size_t l = 0; l < L; ++l)
                    ctx[(b * NP + p) * (P * L + 1) + j * L + l] = cond.prompt[(b * L + l) * T + f];
                ctx[(b * NP + p) * (P * L + 1) + P * L] += 1.0f / static_cast<float>(P);
            }
        }
    }
    VarF h = in_proj_(ad::concat<float>({patchify(x), ad::constant(std::move(ctx))}, 2));

    std::vector<std::size_t> idx(B * NP);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < NP; ++p) {
            const std::size_t tok = p * P / arch_.frames_per_token;
            const auto& seq = cond.tokens[b];
            std::size_t id = arch_.vocab_size;
            if (!cond.drop_text[b] && tok < seq.size()) {
                if (seq[tok] < 0 || static_cast<std::size_t>(seq[tok]) >= arch_.vocab_size)
                    throw std::invalid_argument("FlowModel: token out of vocabulary");
                id = static_cast<std::size_t>(seq[tok]);
            }
            idx[b * NP + p] = id;
        }
    h = ad::add(h, ad::reshape(ad::gather_rows(token_table_, idx), {B, NP, D}));

    VarF temb = time2_(silu(time1_(ad::constant(timestep_embedding(t, arch_.time_dim)))));
    h = ad::add(h, ad::reshape(temb, {B, 1, D}));
    {
        TensorF pos({NP, D});
        std::copy(pos_.data(), pos_.data() + NP * D, pos.data());
        h = ad::add(h, ad::constant(std::move(pos)));
    }

    const std::size_t dh = D / H;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));
    for (const auto& blk : blocks_) {
        VarF qkv = ad::permute(ad::reshape(blk.qkv(blk.ln1(h)), {B, NP, 3, H, dh}), {2, 0, 3, 1, 4});
        auto part = [&](std::size_t i) { return ad::reshape(ad::slice(qkv, 0, i, i + 1), {B * H, NP, dh}); };
        VarF q = part(0), k = part(1), v = part(2);
        VarF att = ad::softmax(ad::scale(ad::matmul(q, ad::permute(k, {0, 2, 1})), att_scale));
        VarF o = ad::reshape(ad::permute(ad::reshape(ad::matmul(att, v), {B, H, NP, dh}), {0, 2, 1, 3}), {B, NP, D});
        h = ad::add(h, blk.proj(o));
        h = ad::add(h, blk.ff2(silu(blk.ff1(blk.ln2(h)))));
    }
    VarF out = out_proj_(out_norm_(h));  // (B, NP, P * L)
    return ad::permute(ad::reshape(out, {B, T, L}), {0, 2, 1});
}

TensorF cfg_combine(const TensorF& v0, const TensorF& v_cond, double w) {
    if (v0.shape() != v_cond.shape())
        throw ShapeError("cfg_combine: shapes " + shape_str(v0.shape()) + " and " + shape_str(v_cond.shape()));
    if (w == 1.0) return v_cond;
    if (w == 0.0) return v0;
    TensorF out(v0.shape());
    const float wf = static_cast<float>(w);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v0[i] + wf * (v_cond[i] - v0[i]);
    return out;
}

TensorF partial_cfg_combine(const TensorF& v0, const TensorF& v_cond, double w, std::size_t k) {
    if (v0.shape() != v_cond.shape())
        throw ShapeError("partial_cfg_combine: shapes " + shape_str(v0.shape()) + " and " +
                         shape_str(v_cond.shape()));
    const Shape& s = v0.shape();
    if (s.size() != 2 && s.size() != 3) throw ShapeError("partial_cfg_combine: expected (L, T) or (B, L, T)");
    const std::size_t L = s[s.size() - 2], T = s.back(), B = s.size() == 3 ? s[0] : 1;
    if (k < 1 || k >= L)
        throw std::invalid_argument("partial_cfg_combine: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(L) + ")");
    TensorF out = cfg_combine(v0, v_cond, w);
    for (std::size_t b = 0; b < B; ++b)
        std::copy(v_cond.data() + b * L * T, v_cond.data() + b * L * T + k * T, out.data() + b * L * T);
    return out;
}

const char* mode_name(GuidanceMode m) { return m == GuidanceMode::Full ? "full" : "partial"; }

GuidanceMode mode_from(const std::string& s) {
    if (s == "full") return GuidanceMode::Full;
    if (s == "partial") return GuidanceMode::Partial;
    throw std::invalid_argument("unknown guidance mode '" + s + "' (expected full or partial)");
}

std::vector<double> sway_schedule(std::size_t nfe, double s) {
    if (nfe == 0) throw std::invalid_argument("sway_schedule: nfe must be at least 1");
    std::vector<double> g(nfe + 1);
    for (std::size_t i = 0; i <= nfe; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(nfe);
        g[i] = u + s * (std::cos(std::numbers::pi * u / 2.0) - 1.0 + u);
    }
    g.front() = 0.0;
    g.back() = 1.0;
    return g;
}

TensorF euler_integrate(TensorF x, const std::vector<double>& grid, const VelocityFn& v) {
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        const TensorF vel = v(x, grid[i]);
        if (vel.shape() != x.shape()) throw ShapeError("euler_integrate: velocity shape mismatch");
        const float dt = static_cast<float>(grid[i + 1] - grid[i]);
        for (std::size_t j = 0; j < x.size(); ++j) x[j] += dt * vel[j];
        for (std::size_t j = 0; j < x.size(); ++j)
            if (!std::isfinite(x[j]))
                throw codec::NonFiniteError("sampler: non-finite state after step " + std::to_string(i + 1) + " of " +
                                            std::to_string(grid.size() - 1));
    }
    return x;
}

VarF flow_loss(const FlowModel& m, const TensorF& z1, const FlowCond& cond, const FlowSample& s) {
    if (z1.shape() != s.z0.shape()) throw ShapeError("flow_loss: z0 and z1 differ in shape");
    const std::size_t B = z1.dim(0), per = z1.size() / B;
    if (s.t.size() != B) throw ShapeError("flow_loss: need one t per example");
    TensorF xt(z1.shape()), target(z1.shape());
    for (std::size_t b = 0; b < B; ++b) {
        const float t = static_cast<float>(s.t[b]);
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            xt[i] = (1.0f - t) * s.z0[i] + t * z1[i];
            target[i] = z1[i] - s.z0[i];
        }
    }
    VarF v = m.forward(ad::constant(std::move(xt)), s.t, cond);
    return ad::mean(ad::square(ad::sub(v, ad::constant(std::move(target)))));
}

VarF flow_loss(const FlowModel& m, const TensorF& z1, const std::vector<std::vector<int>>& tokens,
               const FlowLossConfig& cfg, const FlowDraws& draws) {
    const std::size_t B = z1.dim(0), T = z1.dim(2);
    FlowSample s;
    s.t.resize(B);
    for (auto& t : s.t) t = draws.t->uniform();
    s.z0 = TensorF(z1.shape());
    for (auto& e : s.z0.storage()) e = static_cast<float>(draws.noise->normal());
    FlowCond c;
    c.tokens = tokens;
    c.drop_text.resize(B);
    for (std::size_t b = 0; b < B; ++b) c.drop_text[b] = draws.dropout->bernoulli(cfg.p_uncond);
    if (cfg.prompt_conditioning) {
        c.prompt = z1;
        c.prompt_frames.resize(B);
        for (std::size_t b = 0; b < B; ++b) {
            const bool drop = draws.dropout->bernoulli(cfg.p_audio_drop);
            const double frac = draws.dropout->uniform(cfg.prompt_min, cfg.prompt_max);
            c.prompt_frames[b] = drop ? 0 : static_cast<std::size_t>(frac * static_cast<double>(T));
        }
    }
    return flow_loss(m, z1, c, s);
}

Latent sample(const FlowModel& m, const SampleRequest& req, const LatentStats& stats, Rng& rng) {
    const auto& a = m.arch();
    const std::size_t L = a.latent_channels;
    std::size_t T = req.frames ? req.frames : req.tokens.size() * a.frames_per_token;
    if (T == 0) throw std::invalid_argument("sample: empty request");
    if (T % a.patch != 0) T += a.patch - T % a.patch;
    if (req.nfe == 0) throw std::invalid_argument("sample: nfe must be at least 1");
    if (stats.channels() != L) throw std::invalid_argument("sample: stats do not match the model");

    FlowCond cond, uncond;
    cond.tokens = uncond.tokens = {req.tokens};
    cond.drop_text = {false};
    uncond.drop_text = {true};
    if (!req.prompt.empty()) {
        if (req.prompt.rank() != 2 || req.prompt.dim(0) != L)
            throw ShapeError("sample: prompt must be (L, T)");
        TensorF p({1, L, T});
        const std::size_t pt = req.prompt.dim(1), vis = std::min({req.prompt_frames, pt, T});
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t f = 0; f < vis; ++f) p[l * T + f] = req.prompt[l * pt + f];
        cond.prompt = p;
        cond.prompt_frames = {vis};
        // The unconditional branch drops both conditions.
        uncond.prompt = std::move(p);
        uncond.prompt_frames = {0};
    }

    TensorF x({1, L, T});
    for (auto& e : x.storage()) e = static_cast<float>(rng.normal());
    const bool guided = req.w != 1.0;
    auto vel = [&](const TensorF& xs, double t) {
        ad::NoGradGuard ng;
        auto xc = ad::constant(xs);
        TensorF vc = m.forward(xc, {t}, cond).value();
        if (!guided) return vc;
        TensorF v0 = m.forward(xc, {t}, uncond).value();
        return req.mode == GuidanceMode::Full ? cfg_combine(v0, vc, req.w)
                                              : partial_cfg_combine(v0, vc, req.w, a.power_channels);
    };
    x = euler_integrate(std::move(x), sway_schedule(req.nfe, req.sway), vel);

    Latent z;
    z.k = a.power_channels;
    z.values = TensorF({L, T});
    std::copy(x.data(), x.data() + L * T, z.values.data());
    return denormalize(z, stats);
}

void GenTrainConfig::validate() const {
    arch.validate();
    auto fail = [](const std::string& m) { throw ConfigError("generator config: " + m); };
    auto prob = [&](double p, const char* n) {
        if (!(p >= 0.0 && p <= 1.0)) fail(std::string(n) + " must be in [0, 1]");
    };
    prob(loss.p_uncond, "p_uncond");
    prob(loss.p_audio_drop, "p_audio_drop");
    if (!(loss.prompt_min >= 0.0 && loss.prompt_min <= loss.prompt_max && loss.prompt_max < 1.0))
        fail("prompt fractions must satisfy 0 <= min <= max < 1");
    if (!(adam.lr > 0.0)) fail("lr must be positive");
    if (steps == 0 || batch_size == 0 || crop_tokens == 0 || val_every == 0 || val_noise_draws == 0)
        fail("steps, batch_size, crop_tokens, val_every and val_noise_draws must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must lie in [0, 1)");
}

void to_json(json& j, const GenTrainConfig& c) {
    j = json{{"arch", c.arch},
             {"p_uncond", c.loss.p_uncond},
             {"p_audio_drop", c.loss.p_audio_drop},
             {"prompt_conditioning", c.loss.prompt_conditioning},
             {"prompt_min", c.loss.prompt_min},
             {"prompt_max", c.loss.prompt_max},
             {"lr", c.adam.lr},
             {"grad_clip", c.adam.grad_clip},
             {"steps", c.steps},
             {"batch_size", c.batch_size},
             {"crop_tokens", c.crop_tokens},
             {"val_every", c.val_every},
             {"val_noise_draws", c.val_noise_draws},
             {"ema_decay", c.ema_decay},
             {"seed", c.seed}};
}

void from_json(const json& j, GenTrainConfig& c) {
    const char* w = "generator config";
    check_keys(j,
               {"arch", "p_uncond", "p_audio_drop", "prompt_conditioning", "prompt_min", "prompt_max", "lr",
                "grad_clip", "steps", "batch_size", "crop_tokens", "val_every", "val_noise_draws", "ema_decay", "seed"},
               w);
    if (j.contains("arch")) c.arch = j.at("arch").get<FlowArch>();
    read_opt(j, "p_uncond", c.loss.p_uncond, w);
    read_opt(j, "p_audio_drop", c.loss.p_audio_drop, w);
    read_opt(j, "prompt_conditioning", c.loss.prompt_conditioning, w);
    read_opt(j, "prompt_min", c.loss.prompt_min, w);
    read_opt(j, "prompt_max", c.loss.prompt_max, w);
    read_opt(j, "lr", c.adam.lr, w);
    read_opt(j, "grad_clip", c.adam.grad_clip, w);
    read_opt(j, "steps", c.steps, w);
    read_opt(j, "batch_size", c.batch_size, w);
    read_opt(j, "crop_tokens", c.crop_tokens, w);
    read_opt(j, "val_every", c.val_every, w);
    read_opt(j, "val_noise_draws", c.val_noise_draws, w);
    read_opt(j, "ema_decay", c.ema_decay, w);
    read_opt(j, "seed", c.seed, w);
}

LatentCache build_cache(const codec::Autoencoder& m, const corpus::Corpus& data, const corpus::CorpusConfig& ccfg) {
    const std::size_t seg = ccfg.segment_samples();
    if (seg % m.hop() != 0)
        throw std::invalid_argument("build_cache: token length " + std::to_string(seg) +
                                    " is not a multiple of the codec hop " + std::to_string(m.hop()));
    if (data.train.empty()) throw std::invalid_argument("build_cache: empty training split");
    LatentCache c;
    c.frames_per_token = seg / m.hop();
    auto enc = [&](const std::vector<corpus::Utterance>& split) {
        std::vector<Latent> out(split.size());
        parallel_for(split.size(), [&](std::size_t i) { out[i] = codec::encode_mean(m, split[i].waveform); });
        return out;
    };
    auto train = enc(data.train), val = enc(data.val);
    c.stats = compute_stats(train);
    for (auto& z : train) c.train.push_back(normalize(z, c.stats));
    for (auto& z : val) c.val.push_back(normalize(z, c.stats));
    for (const auto& u : data.train) c.train_tokens.push_back(u.tokens);
    for (const auto& u : data.val) c.val_tokens.push_back(u.tokens);
    return c;
}

namespace {

struct Crop {
    TensorF z;  // (B, L, T)
    std::vector<std::vector<int>> tokens;
};

/// Token-aligned crops of crop_tokens segments; utterance and offset drawn from rng,
/// or the leading crop of each utterance when rng is null.
Crop make_crops(const std::vector<Latent>& lat, const std::vector<std::vector<int>>& toks,
                const std::vector<std::size_t>& which, std::size_t crop_tokens, std::size_t fpt, Rng* rng) {
    const std::size_t B = which.size(), L = lat.front().channels(), T = crop_tokens * fpt;
    Crop c;
    c.z = TensorF({B, L, T});
    for (std::size_t b = 0; b < B; ++b) {
        const auto& z = lat[which[b]];
        const auto& tk = toks[which[b]];
        if (tk.size() < crop_tokens || z.frames() < tk.size() * fpt)
            throw std::invalid_argument("generator: utterance shorter than crop_tokens");
        const std::size_t off = rng ? rng->below(tk.size() - crop_tokens + 1) : 0;
        const std::size_t zt = z.frames();
        for (std::size_t l = 0; l < L; ++l)
            std::copy(z.values.data() + l * zt + off * fpt, z.values.data() + l * zt + off * fpt + T,
                      c.z.data() + (b * L + l) * T);
        c.tokens.emplace_back(tk.begin() + static_cast<std::ptrdiff_t>(off),
                              tk.begin() + static_cast<std::ptrdiff_t>(off + crop_tokens));
    }
    return c;
}

}  // namespace

double validation_loss(const FlowModel& m, const LatentCache& cache, const GenTrainConfig& cfg) {
    const auto& lat = cache.val.empty() ? cache.train : cache.val;
    const auto& tok = cache.val.empty() ? cache.train_tokens : cache.val_tokens;
    ad::NoGradGuard ng;
    Rng rng = Rng::substream(cfg.seed, "val-draws");
    double acc = 0.0;
    std::size_t n = 0;
    constexpr std::size_t kChunk = 16;
    for (std::size_t begin = 0; begin < lat.size(); begin += kChunk) {
        std::vector<std::size_t> which;
        for (std::size_t i = begin; i < std::min(lat.size(), begin + kChunk); ++i) which.push_back(i);
        Crop c = make_crops(lat, tok, which, cfg.crop_tokens, cache.frames_per_token, nullptr);
        const std::size_t B = which.size();
        FlowCond cond;
        cond.tokens = c.tokens;
        cond.drop_text.assign(B, false);
        for (std::size_t d = 0; d < cfg.val_noise_draws; ++d) {
            FlowSample s;
            s.t.resize(B);
            // Stratified times keep the estimate low-variance.
            for (std::size_t b = 0; b < B; ++b)
                s.t[b] = (static_cast<double>(d) + rng.uniform()) / static_cast<double>(cfg.val_noise_draws);
            s.z0 = TensorF(c.z.shape());
            for (auto& e : s.z0.storage()) e = static_cast<float>(rng.normal());
            acc += flow_loss(m, c.z, cond, s).item() * static_cast<double>(B);
            n += B;
        }
    }
    return acc / static_cast<double>(n);
}

GenTrainResult train_generator(const GenTrainConfig& cfg_in, const LatentCache& cache, const GenTrainIo& io) {
    GenTrainConfig cfg = cfg_in;
    cfg.validate();
    if (cache.train.empty()) throw std::invalid_argument("train_generator: empty latent cache");
    if (cache.stats.channels() != cfg.arch.latent_channels)
        throw ConfigError("generator config: latent_channels " + std::to_string(cfg.arch.latent_channels) +
                          " does not match the codec's " + std::to_string(cache.stats.channels()));
    if (cache.frames_per_token != cfg.arch.frames_per_token)
        throw ConfigError("generator config: frames_per_token does not match the latent cache");

    GenTrainResult res;
    res.model = std::make_unique<FlowModel>(cfg.arch, cfg.seed);
    FlowModel& model = *res.model;
    nn::Adam opt(model.params(), cfg.adam);
    Rng batch_rng = Rng::substream(cfg.seed, "batch");
    Rng t_rng = Rng::substream(cfg.seed, "flow-t");
    Rng noise_rng = Rng::substream(cfg.seed, "flow-noise");
    Rng drop_rng = Rng::substream(cfg.seed, "dropout");
    const FlowDraws draws{&t_rng, &noise_rng, &drop_rng};
    std::unique_ptr<nn::Ema> ema;
    if (cfg.ema_decay > 0.0) ema = std::make_unique<nn::Ema>(model.params(), cfg.ema_decay);
    // Validation and the saved model use the averaged weights.
    auto validate_ema = [&] {
        if (!ema) return validation_loss(model, cache, cfg);
        const auto raw = model.params().snapshot();
        model.params().load(ema->shadow());
        const double v = validation_loss(model, cache, cfg);
        model.params().load(raw);
        return v;
    };

    const bool write = !io.out_dir.empty();
    std::ofstream log;
    if (write) {
        std::filesystem::create_directories(io.out_dir);
        ckpt::write_atomic(io.out_dir / "gen_log.csv", "step,train_loss,val_loss\n");
        log.open(io.out_dir / "gen_log.csv", std::ios::app);
    }
    auto emit = [&](const GenLogRow& r) {
        res.log.push_back(r);
        if (write) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", r.step, r.train_loss, r.val_loss);
            log << buf << std::flush;
        }
        if (io.on_val) io.on_val(r);
    };
    emit({0, 0.0, validate_ema()});

    double initial = 0.0, acc = 0.0;
    std::size_t over = 0, acc_n = 0;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        std::vector<std::size_t> which(cfg.batch_size);
        for (auto& w : which) w = batch_rng.below(cache.train.size());
        Crop c = make_crops(cache.train, cache.train_tokens, which, cfg.crop_tokens, cache.frames_per_token,
                            &batch_rng);
        model.params().zero_grad();
        VarF loss = flow_loss(model, c.z, c.tokens, cfg.loss, draws);
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw codec::NonFiniteError("generator step " + std::to_string(step) + ": non-finite loss");
        ad::backward(loss);
        opt.step();
        if (ema) ema->update(model.params());
        if (!model.params().all_finite())
            throw codec::NonFiniteError("generator step " + std::to_string(step) + ": non-finite parameter " +
                                        model.params().first_non_finite());
        acc += lv;
        ++acc_n;
        if (step == 1) initial = lv;
        over = lv > cfg.divergence_factor * initial ? over + 1 : 0;
        if (over >= cfg.divergence_patience)
            throw codec::DivergenceError("generator step " + std::to_string(step) + ": loss above " +
                                         std::to_string(cfg.divergence_factor) + "x its initial value for " +
                                         std::to_string(over) + " consecutive steps");
        if (step % cfg.val_every == 0 || step == cfg.steps) {
            emit({step, acc / static_cast<double>(acc_n), validate_ema()});
            acc = 0.0;
            acc_n = 0;
        }
    }
    if (ema) model.params().load(ema->shadow());
    if (write) save_generator(io.out_dir / "gen.pdar", model, cache.stats, json{{"train_config", cfg}});
    return res;
}

void save_generator(const std::filesystem::path& path, const FlowModel& m, const LatentStats& stats,
                    const json& extra) {
    ckpt::Checkpoint ck;
    ck.add("param/", m.params().snapshot());
    const std::size_t L = stats.channels();
    ck.f32.emplace_back("stats/mu", TensorF({L}, stats.mu));
    ck.f32.emplace_back("stats/sigma", TensorF({L}, stats.sigma));
    ck.metadata = json{{"kind", "generator"}, {"arch", m.arch()}};
    if (!extra.is_null())
        for (auto it = extra.begin(); it != extra.end(); ++it) ck.metadata[it.key()] = it.value();
    ckpt::save(path, ck);
}

LoadedGenerator load_generator(const std::filesystem::path& path) {
    auto ck = ckpt::load(path);
    if (ck.metadata.value("kind", "") != "generator")
        throw std::runtime_error(path.string() + ": not a generator checkpoint");
    LoadedGenerator g;
    FlowArch arch;
    try {
        arch = ck.metadata.at("arch").get<FlowArch>();
        arch.validate();
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": bad generator metadata: " + e.what());
    }
    g.model = std::make_unique<FlowModel>(arch, 0);
    g.model->params().load(ck.with_prefix("param/"));
    if (!g.model->params().all_finite())
        throw std::runtime_error(path.string() + ": non-finite parameter " + g.model->params().first_non_finite());
    g.stats.mu = ck.tensor("stats/mu").to_vector();
    g.stats.sigma = ck.tensor("stats/sigma").to_vector();
    if (g.stats.channels() != arch.latent_channels) throw std::runtime_error(path.string() + ": stats size mismatch");
    g.metadata = ck.metadata;
    return g;
}

// Toy flow.

ToyFlow::ToyFlow(std::uint64_t seed, std::size_t hidden) {
    Rng rng = Rng::substream(seed, "init");
    l1_ = nn::Linear::make(params_, "l1", 2 + 16, hidden, rng);
    l2_ = nn::Linear::make(params_, "l2", hidden, hidden, rng);
    l3_ = nn::Linear::make(params_, "l3", hidden, 2, rng);
}

VarF ToyFlow::forward(const VarF& x, const std::vector<double>& t) const {
    std::vector<double> ts(t);
    for (auto& v : ts) v /= 1000.0 / 4.0;  // gentler frequencies for a 2-D field
    VarF in = ad::concat<float>({x, ad::constant(timestep_embedding(ts, 16))}, 1);
    return l3_(silu(l2_(silu(l1_(in)))));
}

std::vector<std::array<double, 2>> sample_mixture(const ToyMixture& mix, std::size_t n, Rng& rng) {
    std::vector<std::array<double, 2>> out(n);
    for (auto& p : out) {
        const double c = rng.bernoulli(mix.weight0) ? -mix.center : mix.center;
        p[0] = c + mix.stddev * rng.normal();
        p[1] = mix.stddev * rng.normal();
    }
    return out;
}

void train_toy_flow(ToyFlow& f, const ToyMixture& mix, std::size_t steps, std::size_t batch, std::uint64_t seed) {
    nn::Adam opt(f.params(), nn::AdamConfig{2e-3, 0.9, 0.999, 1e-8, 1.0});
    nn::Ema ema(f.params(), 0.999);
    Rng data = Rng::substream(seed, "toy-data"), tr = Rng::substream(seed, "flow-t"),
        nr = Rng::substream(seed, "flow-noise");
    for (std::size_t s = 0; s < steps; ++s) {
        auto z1 = sample_mixture(mix, batch, data);
        std::vector<double> t(batch);
        TensorF xt({batch, 2}), target({batch, 2});
        for (std::size_t b = 0; b < batch; ++b) {
            t[b] = tr.uniform();
            for (int d = 0; d < 2; ++d) {
                const double z0 = nr.normal();
                xt[b * 2 + d] = static_cast<float>((1.0 - t[b]) * z0 + t[b] * z1[b][d]);
                target[b * 2 + d] = static_cast<float>(z1[b][d] - z0);
            }
        }
        f.params().zero_grad();
        VarF loss = ad::mean(ad::square(ad::sub(f.forward(ad::constant(std::move(xt)), t), ad::constant(target))));
        ad::backward(loss);
        opt.step();
        ema.update(f.params());
    }
    f.params().load(ema.shadow());
}

TensorF sample_toy_flow(const ToyFlow& f, std::size_t n, std::size_t nfe, std::uint64_t seed) {
    Rng rng = Rng::substream(seed, "sampler");
    TensorF x({n, 2});
    for (auto& e : x.storage()) e = static_cast<float>(rng.normal());
    return euler_integrate(std::move(x), sway_schedule(nfe), [&](const TensorF& xs, double t) {
        ad::NoGradGuard ng;
        return f.forward(ad::constant(xs), std::vector<double>(xs.dim(0), t)).value();
    });
}

}  // namespace podar::gen
