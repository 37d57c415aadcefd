// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Gaussian-bottleneck waveform autoencoder with power augmentation and a
// content-consistency loss.
//
// The latent is L x T with T = ceil(N / S). Rows [0, k) are the power
// channels and rows [k, L) the content channels; the split is positional
// only. Nothing supervises the power rows directly: the consistency loss
// constrains the content rows of the posterior mean and leaves the model
// to route gain elsewhere.

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "autograd.hpp"
#include "corpus.hpp"
#include "dsp.hpp"
#include "json.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace podar::codec {

using ad::VarF;
using corpus::Waveform;

/// Raised when parameters or losses stop being finite.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when the loss stays above the divergence bound for too long.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Latent {
    TensorF values;  // (L, T)
    std::size_t k = 1;

    std::size_t channels() const { return values.dim(0); }
    std::size_t frames() const { return values.dim(1); }
    void validate() const;
};

/// Encoder/decoder pair operating on batches. x is (B, 1, N); latents are
/// (B, L, T). Implemented by the trainable codec and by hand-built test
/// models.
class Autoencoder {
public:
    struct Posterior {
        VarF mu, logvar;
    };

    virtual ~Autoencoder() = default;
    virtual std::size_t latent_channels() const = 0;
    virtual std::size_t power_channels() const = 0;
    /// Stride product S.
    virtual std::size_t hop() const = 0;
    virtual Posterior encode_graph(const VarF& x) const = 0;
    /// Output is (B, 1, n).
    virtual VarF decode_graph(const VarF& z, std::size_t n) const = 0;
};

std::size_t frames_for(std::size_t n, std::size_t hop);

// Single-waveform conveniences; no graph is recorded.
std::pair<Latent, Latent> encode(const Autoencoder& m, const Waveform& x);
Latent encode_mean(const Autoencoder& m, const Waveform& x);
/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, I).
Latent sample_latent(const Latent& mu, const Latent& logvar, Rng& rng);
/// Decodes to n samples; n = 0 means T * S.
Waveform decode(const Autoencoder& m, const Latent& z, std::size_t n = 0, int sample_rate = 16000);

struct CodecArch {
    std::size_t latent_channels = 16;
    std::size_t power_channels = 1;
    std::vector<std::size_t> strides{4, 4, 4};
    std::vector<std::size_t> widths{32, 64, 128};
    std::size_t stem_width = 16;
    double logvar_init = -5.0;

    std::size_t hop() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const CodecArch& a);
void from_json(const nlohmann::json& j, CodecArch& a);

/// Strided conv encoder with mean and log-variance heads; transposed conv
/// decoder with a tanh output.
///
/// The encoder heads read both the raw features and their per-frame layer
/// norm, so a gain-free description of each frame is one linear map away.
/// The decoder multiplies its waveform branch by a smooth per-frame
/// envelope predicted from the latent, which gives global gain a direct
/// path.
class CodecModel final : public Autoencoder {
public:
    CodecModel() = default;
    CodecModel(const CodecArch& arch, std::uint64_t seed);
    // Layers hold handles into params_; copies would alias them.
    CodecModel(const CodecModel&) = delete;
    CodecModel& operator=(const CodecModel&) = delete;

    std::size_t latent_channels() const override { return arch_.latent_channels; }
    std::size_t power_channels() const override { return arch_.power_channels; }
    std::size_t hop() const override { return arch_.hop(); }
    Posterior encode_graph(const VarF& x) const override;
    VarF decode_graph(const VarF& z, std::size_t n) const override;

    const CodecArch& arch() const noexcept { return arch_; }
    nn::ParamStore& params() noexcept { return params_; }
    const nn::ParamStore& params() const noexcept { return params_; }

    /// Throws NonFiniteError naming the first bad parameter.
    void check_finite() const;

private:
    CodecArch arch_;
    nn::ParamStore params_;
    nn::Conv1d stem_;
    std::vector<nn::Conv1d> down_;
    nn::LayerNorm norm_;
    nn::Conv1d mu_head_, logvar_head_;
    nn::Conv1d dec_in_;
    std::vector<nn::ConvTranspose1d> up_;
    nn::Conv1d dec_out_;
    nn::Conv1d env_head_;
    VarF env_kernel_;
};

// Power augmentation: x_tilde = 10^(u / 20) x.

struct Augmented {
    Waveform x_tilde;
    double u_db = 0.0;
};

/// Exact gain; rejects gains that could push |x| above 1.
Waveform apply_gain(const Waveform& x, double u_db);
/// u ~ Uniform[-max_db, max_db]. Rejects inputs whose peak times the largest
/// gain would exceed full scale.
Augmented power_augment(const Waveform& x, Rng& rng, double max_db = 6.0);

enum class ConsistencyGradient {
    Symmetric,      // gradients through both encoder passes
    StopAugmented,  // augmented branch treated as a constant
};

enum class ConsistencyReduction {
    Sum,   // squared L2 norm over content rows x frames, averaged over the batch
    Mean,  // mean over batch x content rows x frames
};

/// Squared difference of rows [k, L) of two (B, L, T) means.
VarF consistency_loss(const VarF& mu, const VarF& mu_tilde, std::size_t k,
                      ConsistencyReduction r = ConsistencyReduction::Sum);
/// Encodes both inputs with the mean head and compares content rows.
VarF podar_loss(const Autoencoder& m, const TensorF& x, const TensorF& x_tilde,
                ConsistencyGradient mode = ConsistencyGradient::Symmetric,
                ConsistencyReduction r = ConsistencyReduction::Sum);
/// KL(N(mu, exp(logvar)) || N(0, I)), mean over elements.
VarF kl_divergence(const VarF& mu, const VarF& logvar);

struct LossWeights {
    double l1 = 0.1;
    double kl = 1e-4;
    double lambda_podar = 0.0;
    ConsistencyGradient grad_mode = ConsistencyGradient::Symmetric;
    ConsistencyReduction reduction = ConsistencyReduction::Sum;
    dsp::StftConfig stft{};
};

struct ObjectiveTerms {
    VarF total;  // graph to differentiate
    double recon = 0.0, l1 = 0.0, kl = 0.0, podar = 0.0;
    /// recon + w.l1 * l1 + w.kl * kl + lambda * podar, summed in double.
    double total_value = 0.0;
};

/// x is (B, 1, N); u_db has B gains for the augmented copy; eps is (B, L, T)
/// reparameterization noise. With lambda = 0 the consistency term is
/// evaluated for logging only and is not part of the graph.
ObjectiveTerms codec_objective(const Autoencoder& m, const TensorF& x, const std::vector<double>& u_db,
                               const TensorF& eps, const LossWeights& w);

struct CodecTrainConfig {
    CodecArch arch;
    LossWeights loss;
    nn::AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 1.0};
    std::size_t steps = 20000;
    std::size_t batch_size = 8;
    std::size_t crop_samples = 3200;
    double gain_min_db = -6.0;
    double gain_max_db = 6.0;
    double ema_decay = 0.999;  // 0 disables
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 1000;
    std::size_t min_corpus = 200;
    double divergence_factor = 10.0;
    std::size_t divergence_patience = 100;

    void validate() const;
};

void to_json(nlohmann::json& j, const CodecTrainConfig& c);
void from_json(const nlohmann::json& j, CodecTrainConfig& c);

struct TrainLogRow {
    std::size_t step = 0;
    double recon = 0.0, l1 = 0.0, kl = 0.0, podar = 0.0, total = 0.0, u_mean = 0.0;
};

struct CodecTrainResult {
    std::unique_ptr<CodecModel> model;
    std::vector<TrainLogRow> log;
    double val_recon = 0.0;  // mean multi-resolution loss of mean-latent round trips
};

struct TrainIo {
    /// When set: train_log.csv, checkpoint.pdar and the final codec.pdar go here.
    std::filesystem::path out_dir;
    /// Continue from out_dir/checkpoint.pdar when present.
    bool resume = false;
    std::function<void(const TrainLogRow&, const CodecModel&)> on_step;
};

CodecTrainResult train_codec(const CodecTrainConfig& cfg, const corpus::Corpus& data, const TrainIo& io = {});

/// Mean multi-resolution STFT loss of decode(encode_mean(x)) over utterances.
double reconstruction_loss(const Autoencoder& m, const std::vector<corpus::Utterance>& utts,
                           const dsp::StftConfig& stft = {});

void save_codec(const std::filesystem::path& path, const CodecModel& m, const nlohmann::json& extra = {});
std::unique_ptr<CodecModel> load_codec(const std::filesystem::path& path);

}  // namespace podar::codec
