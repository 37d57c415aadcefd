// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Conditional flow matching over z-scored codec latents.
//
// The velocity model is a small pre-norm transformer over latent patches.
// Token conditioning is frame aligned: every token of the synthetic corpus
// lasts a fixed number of frames, so each patch looks up the embedding of
// the token it falls in. A prompt latent (a prefix of the target) can be
// supplied for infilling-style conditioning. Both conditions have learned
// or zero "null" forms used for classifier-free guidance.

#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "codec.hpp"
#include "json.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace podar::gen {

using ad::VarF;

struct LatentStats {
    std::vector<float> mu, sigma;  // per channel

    std::size_t channels() const { return mu.size(); }
};

inline constexpr double kStatsEps = 1e-6;

/// Per-channel mean and population std over all frames of all latents.
LatentStats compute_stats(const std::vector<codec::Latent>& latents);
codec::Latent normalize(const codec::Latent& z, const LatentStats& s);
codec::Latent denormalize(const codec::Latent& z, const LatentStats& s);

struct FlowArch {
    std::size_t latent_channels = 16;
    std::size_t power_channels = 1;
    std::size_t vocab_size = 16;
    std::size_t frames_per_token = 25;
    std::size_t patch = 5;  // frames per transformer position
    std::size_t width = 128;
    std::size_t blocks = 4;
    std::size_t heads = 4;
    std::size_t ff_mult = 2;
    std::size_t time_dim = 64;

    void validate() const;
};

void to_json(nlohmann::json& j, const FlowArch& a);
void from_json(const nlohmann::json& j, FlowArch& a);

/// Per-example conditioning. tokens has one entry per token segment;
/// an empty vector or drop_text selects the null embedding. prompt_frames
/// leading frames of `prompt` are visible to the model.
struct FlowCond {
    std::vector<std::vector<int>> tokens;  // B sequences
    TensorF prompt;                        // (B, L, T) or empty
    std::vector<std::size_t> prompt_frames;
    std::vector<bool> drop_text;
};

class FlowModel {
public:
    FlowModel() = default;
    FlowModel(const FlowArch& arch, std::uint64_t seed);
    FlowModel(const FlowModel&) = delete;
    FlowModel& operator=(const FlowModel&) = delete;

    /// x: (B, L, T) with T a multiple of the patch size; t: B times in
    /// [0, 1]. Returns the velocity, same shape as x.
    VarF forward(const VarF& x, const std::vector<double>& t, const FlowCond& cond) const;

    const FlowArch& arch() const noexcept { return arch_; }
    nn::ParamStore& params() noexcept { return params_; }
    const nn::ParamStore& params() const noexcept { return params_; }

private:
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Linear qkv, proj, ff1, ff2;
    };

    FlowArch arch_;
    nn::ParamStore params_;
    VarF token_table_;  // (vocab + 1, width); last row is the null token
    nn::Linear in_proj_, time1_, time2_;
    std::vector<Block> blocks_;
    nn::LayerNorm out_norm_;
    nn::Linear out_proj_;
    TensorF pos_;  // (max positions, width) sinusoidal
};

/// Sinusoidal embedding of B scalars into `dim` features.
TensorF timestep_embedding(const std::vector<double>& t, std::size_t dim);

/// Velocity model signature shared by the latent flow and the toy flow.
using VelocityFn = std::function<TensorF(const TensorF& x, double t)>;

// Guidance.
TensorF cfg_combine(const TensorF& v0, const TensorF& v_cond, double w);
/// Power rows [0, k) take v_cond; content rows are guided. Works on
/// (L, T) and (B, L, T) tensors.
TensorF partial_cfg_combine(const TensorF& v0, const TensorF& v_cond, double w, std::size_t k);

enum class GuidanceMode { Full, Partial };
const char* mode_name(GuidanceMode m);
GuidanceMode mode_from(const std::string& s);

/// Sway-warped time grid of nfe + 1 points: u + s (cos(pi u / 2) - 1 + u).
std::vector<double> sway_schedule(std::size_t nfe, double s = -1.0);

/// Euler integration of dx/dt = v(x, t) over `grid`. Throws on a
/// non-finite state, naming the step.
TensorF euler_integrate(TensorF x, const std::vector<double>& grid, const VelocityFn& v);

/// Flow-matching loss on one batch. z1: (B, L, T) normalized latents.
/// Draws t, noise and condition dropout from the given streams.
struct FlowDraws {
    Rng* t = nullptr;
    Rng* noise = nullptr;
    Rng* dropout = nullptr;
};

struct FlowLossConfig {
    double p_uncond = 0.2;
    double p_audio_drop = 0.3;
    bool prompt_conditioning = true;
    double prompt_min = 0.1, prompt_max = 0.7;  // fraction of frames
};

/// Explicit draws for a controlled evaluation of the loss.
struct FlowSample {
    std::vector<double> t;  // B
    TensorF z0;             // (B, L, T)
};

VarF flow_loss(const FlowModel& m, const TensorF& z1, const FlowCond& cond, const FlowSample& s);
VarF flow_loss(const FlowModel& m, const TensorF& z1, const std::vector<std::vector<int>>& tokens,
               const FlowLossConfig& cfg, const FlowDraws& draws);

struct SampleRequest {
    std::vector<int> tokens;
    std::size_t frames = 0;   // 0: tokens.size() * frames_per_token
    TensorF prompt;           // (L, T) normalized; empty for none
    std::size_t prompt_frames = 0;
    std::size_t nfe = 32;
    double w = 3.0;
    GuidanceMode mode = GuidanceMode::Full;
    double sway = -1.0;
};

/// Returns the denormalized latent.
codec::Latent sample(const FlowModel& m, const SampleRequest& req, const LatentStats& stats, Rng& rng);

struct GenTrainConfig {
    FlowArch arch;
    FlowLossConfig loss;
    nn::AdamConfig adam{5e-4, 0.9, 0.999, 1e-8, 1.0};
    std::size_t steps = 4000;
    std::size_t batch_size = 16;
    std::size_t crop_tokens = 4;
    std::size_t val_every = 100;
    std::size_t val_noise_draws = 4;
    double ema_decay = 0.999;  // 0 disables
    std::uint64_t seed = 0;
    double divergence_factor = 10.0;
    std::size_t divergence_patience = 100;

    void validate() const;
};

void to_json(nlohmann::json& j, const GenTrainConfig& c);
void from_json(const nlohmann::json& j, GenTrainConfig& c);

/// Encoded training material: mean latents per utterance, normalized.
struct LatentCache {
    std::vector<codec::Latent> train, val;  // normalized
    std::vector<std::vector<int>> train_tokens, val_tokens;
    LatentStats stats;
    std::size_t frames_per_token = 0;
};

LatentCache build_cache(const codec::Autoencoder& m, const corpus::Corpus& data,
                        const corpus::CorpusConfig& ccfg = {});

struct GenLogRow {
    std::size_t step = 0;
    double train_loss = 0.0;  // mean over the steps since the previous row
    double val_loss = 0.0;
};

struct GenTrainResult {
    std::unique_ptr<FlowModel> model;
    std::vector<GenLogRow> log;
};

struct GenTrainIo {
    std::filesystem::path out_dir;  // gen_log.csv and gen.pdar
    std::function<void(const GenLogRow&)> on_val;
};

/// Validation flow loss with fixed draws: for each val crop, val_noise_draws
/// (t, z0) pairs from a stream keyed by the seed. Full conditioning, no prompt.
double validation_loss(const FlowModel& m, const LatentCache& cache, const GenTrainConfig& cfg);

GenTrainResult train_generator(const GenTrainConfig& cfg, const LatentCache& cache, const GenTrainIo& io = {});

void save_generator(const std::filesystem::path& path, const FlowModel& m, const LatentStats& stats,
                    const nlohmann::json& extra = {});
struct LoadedGenerator {
    std::unique_ptr<FlowModel> model;
    LatentStats stats;
    nlohmann::json metadata;
};
LoadedGenerator load_generator(const std::filesystem::path& path);

// Two-dimensional toy flow: N(0, I) to a two-component Gaussian mixture.

struct ToyMixture {
    double weight0 = 0.3;  // weight of the component at (-center, 0)
    double center = 2.0;
    double stddev = 0.35;
};

class ToyFlow {
public:
    explicit ToyFlow(std::uint64_t seed, std::size_t hidden = 64);
    VarF forward(const VarF& x, const std::vector<double>& t) const;  // x: (B, 2)
    nn::ParamStore& params() noexcept { return params_; }

private:
    nn::ParamStore params_;
    nn::Linear l1_, l2_, l3_;
};

std::vector<std::array<double, 2>> sample_mixture(const ToyMixture& mix, std::size_t n, Rng& rng);
void train_toy_flow(ToyFlow& f, const ToyMixture& mix, std::size_t steps, std::size_t batch, std::uint64_t seed);
/// Euler samples (n, 2) with the sway grid.
TensorF sample_toy_flow(const ToyFlow& f, std::size_t n, std::size_t nfe, std::uint64_t seed);

}  // namespace podar::gen
