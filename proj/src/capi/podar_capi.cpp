// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "podar/podar.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "checkpoint.hpp"
#include "codec.hpp"
#include "eval.hpp"
#include "generator.hpp"
#include "json_util.hpp"
#include "parallel.hpp"
#include "swap.hpp"

struct podar_corpus {
    podar::corpus::Corpus data;
};

struct podar_codec {
    std::unique_ptr<podar::codec::CodecModel> model;
};

struct podar_generator {
    podar::gen::LoadedGenerator g;
};

namespace {

using json = nlohmann::json;
using namespace podar;

thread_local std::string g_last_error;

podar_status fail(podar_status s, const std::string& msg) {
    g_last_error = msg;
    // Keep diagnostics on one line.
    for (char& c : g_last_error)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

template <class F>
podar_status guarded(const char* where, F&& f) {
    try {
        f();
        return PODAR_OK;
    } catch (const ConfigError& e) {
        return fail(PODAR_ERR_CONFIG, e.what());
    } catch (const json::exception& e) {
        return fail(PODAR_ERR_CONFIG, std::string(where) + ": " + e.what());
    } catch (const codec::NonFiniteError& e) {
        return fail(PODAR_ERR_NON_FINITE, e.what());
    } catch (const codec::DivergenceError& e) {
        return fail(PODAR_ERR_DIVERGED, e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(PODAR_ERR_IO, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(PODAR_ERR_INVALID_ARGUMENT, std::string(where) + ": " + e.what());
    } catch (const std::out_of_range& e) {
        return fail(PODAR_ERR_INVALID_ARGUMENT, std::string(where) + ": " + e.what());
    } catch (const std::runtime_error& e) {
        // Checkpoint, WAV and manifest readers report file problems this way.
        return fail(PODAR_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(PODAR_ERR_INTERNAL, std::string(where) + ": " + e.what());
    } catch (...) {
        return fail(PODAR_ERR_INTERNAL, std::string(where) + ": unknown error");
    }
}

struct NullArg : std::invalid_argument {
    explicit NullArg(const char* name) : std::invalid_argument(std::string("null argument '") + name + "'") {}
};

template <class T>
void need(const T* p, const char* name) {
    if (!p) throw NullArg(name);
}

json parse_config(const char* text) {
    if (!text || !*text) return json::object();
    try {
        json j = json::parse(text);
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

const std::vector<corpus::Utterance>& split_of(const podar_corpus* c, podar_split s) {
    need(c, "corpus");
    if (s == PODAR_SPLIT_TRAIN) return c->data.train;
    if (s == PODAR_SPLIT_VAL) return c->data.val;
    throw std::invalid_argument("unknown split");
}

const corpus::Utterance& utterance(const podar_corpus* c, podar_split s, std::size_t i) {
    const auto& sp = split_of(c, s);
    if (i >= sp.size())
        throw std::invalid_argument("utterance index " + std::to_string(i) + " out of range (" +
                                    std::to_string(sp.size()) + ")");
    return sp[i];
}

template <class T>
void copy_out(const std::vector<T>& src, T* buf, std::size_t cap, std::size_t* len) {
    if (len) *len = src.size();
    if (!buf) return;
    if (cap < src.size())
        throw std::length_error("buffer holds " + std::to_string(cap) + " elements, need " + std::to_string(src.size()));
    std::copy(src.begin(), src.end(), buf);
}

corpus::Waveform wave(const float* x, std::size_t n) {
    need(x, "x");
    return corpus::Waveform{std::vector<float>(x, x + n), 16000};
}

}  // namespace

extern "C" {

const char* podar_version(void) { return "1.0.0"; }

const char* podar_last_error(void) { return g_last_error.c_str(); }

const char* podar_status_name(podar_status s) {
    switch (s) {
        case PODAR_OK: return "ok";
        case PODAR_ERR_INVALID_ARGUMENT: return "invalid argument";
        case PODAR_ERR_CONFIG: return "config error";
        case PODAR_ERR_IO: return "i/o error";
        case PODAR_ERR_NON_FINITE: return "non-finite value";
        case PODAR_ERR_DIVERGED: return "diverged";
        case PODAR_ERR_BUFFER: return "buffer too small";
        case PODAR_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

void podar_set_num_threads(size_t n) { podar::set_num_threads(n); }

}  // extern "C"

namespace {

// Like guarded(), but an undersized caller buffer maps to PODAR_ERR_BUFFER.
template <class F>
podar_status buffered(const char* where, F&& f) {
    try {
        f();
        return PODAR_OK;
    } catch (const std::length_error& e) {
        return fail(PODAR_ERR_BUFFER, std::string(where) + ": " + e.what());
    } catch (...) {
        return guarded(where, [] { throw; });
    }
}

}  // namespace

extern "C" {

podar_status podar_corpus_generate(size_t n, uint64_t seed, podar_corpus** out) {
    return guarded("corpus_generate", [&] {
        need(out, "out");
        *out = nullptr;
        auto c = std::make_unique<podar_corpus>();
        c->data = corpus::generate_corpus(n, seed, {});
        *out = c.release();
    });
}

podar_status podar_corpus_load(const char* dir, podar_corpus** out) {
    return guarded("corpus_load", [&] {
        need(dir, "dir");
        need(out, "out");
        *out = nullptr;
        auto c = std::make_unique<podar_corpus>();
        c->data = corpus::load_corpus(dir);
        *out = c.release();
    });
}

podar_status podar_corpus_save(const podar_corpus* c, const char* dir) {
    return guarded("corpus_save", [&] {
        need(c, "corpus");
        need(dir, "dir");
        corpus::write_corpus(dir, c->data);
    });
}

size_t podar_corpus_size(const podar_corpus* c, podar_split split) {
    if (!c) return 0;
    return split == PODAR_SPLIT_VAL ? c->data.val.size() : c->data.train.size();
}

podar_status podar_corpus_waveform(const podar_corpus* c, podar_split split, size_t i, float* buf, size_t cap,
                                   size_t* len) {
    return buffered("corpus_waveform", [&] { copy_out(utterance(c, split, i).waveform.samples, buf, cap, len); });
}

podar_status podar_corpus_tokens(const podar_corpus* c, podar_split split, size_t i, int* buf, size_t cap,
                                 size_t* len) {
    return buffered("corpus_tokens", [&] { copy_out(utterance(c, split, i).tokens, buf, cap, len); });
}

void podar_corpus_free(podar_corpus* c) { delete c; }

podar_status podar_apply_gain(const float* x, size_t n, double gain_db, float* out) {
    return guarded("apply_gain", [&] {
        need(out, "out");
        auto y = codec::apply_gain(wave(x, n), gain_db);
        std::copy(y.samples.begin(), y.samples.end(), out);
    });
}

podar_status podar_energy_ratio_db(const float* x_prime, const float* x, size_t n, double* out) {
    return guarded("energy_ratio_db", [&] {
        need(x_prime, "x_prime");
        need(x, "x");
        need(out, "out");
        *out = dsp::energy_ratio_db<float>(std::span<const float>(x_prime, n), std::span<const float>(x, n));
    });
}

podar_status podar_token_error_rate(const float* x, size_t n, const int* ref, size_t ref_len, double* out) {
    return guarded("token_error_rate", [&] {
        need(ref, "ref");
        need(out, "out");
        *out = eval::token_error_rate(wave(x, n), std::vector<int>(ref, ref + ref_len));
    });
}

podar_status podar_wav_write(const char* path, const float* x, size_t n, int sample_rate) {
    return guarded("wav_write", [&] {
        need(path, "path");
        auto w = wave(x, n);
        w.sample_rate = sample_rate;
        corpus::wav_write(path, w);
    });
}

podar_status podar_codec_train(const char* config_json, const podar_corpus* corpus, const char* out_dir, int resume,
                               podar_progress_fn progress, void* user, podar_codec** out) {
    return guarded("codec_train", [&] {
        need(corpus, "corpus");
        need(out, "out");
        *out = nullptr;
        auto cfg = parse_config(config_json).get<codec::CodecTrainConfig>();
        codec::TrainIo io;
        if (out_dir) io.out_dir = out_dir;
        io.resume = resume != 0;
        if (progress)
            io.on_step = [&](const codec::TrainLogRow& r, const codec::CodecModel&) {
                progress(r.step, cfg.steps, r.total, user);
            };
        auto res = codec::train_codec(cfg, corpus->data, io);
        auto c = std::make_unique<podar_codec>();
        c->model = std::move(res.model);
        *out = c.release();
    });
}

podar_status podar_codec_load(const char* path, podar_codec** out) {
    return guarded("codec_load", [&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        auto c = std::make_unique<podar_codec>();
        c->model = codec::load_codec(path);
        *out = c.release();
    });
}

podar_status podar_codec_save(const podar_codec* c, const char* path) {
    return guarded("codec_save", [&] {
        need(c, "codec");
        need(path, "path");
        codec::save_codec(path, *c->model);
    });
}

podar_status podar_codec_info(const podar_codec* c, size_t* latent_channels, size_t* power_channels, size_t* hop) {
    return guarded("codec_info", [&] {
        need(c, "codec");
        if (latent_channels) *latent_channels = c->model->latent_channels();
        if (power_channels) *power_channels = c->model->power_channels();
        if (hop) *hop = c->model->hop();
    });
}

podar_status podar_codec_encode(const podar_codec* c, const float* x, size_t n, float* mu, size_t cap,
                                size_t* frames) {
    return buffered("codec_encode", [&] {
        need(c, "codec");
        auto z = codec::encode_mean(*c->model, wave(x, n));
        if (frames) *frames = z.frames();
        copy_out(z.values.to_vector(), mu, cap, nullptr);
    });
}

podar_status podar_codec_decode(const podar_codec* c, const float* z, size_t frames, size_t n, float* out) {
    return guarded("codec_decode", [&] {
        need(c, "codec");
        need(z, "z");
        need(out, "out");
        const std::size_t L = c->model->latent_channels();
        codec::Latent lat;
        lat.k = c->model->power_channels();
        lat.values = TensorF({L, frames}, std::vector<float>(z, z + L * frames));
        auto y = codec::decode(*c->model, lat, n);
        std::copy(y.samples.begin(), y.samples.end(), out);
    });
}

void podar_codec_free(podar_codec* c) { delete c; }

podar_status podar_swap_test(const podar_codec* c, const float* x, size_t n, double gain_db, double* rdb) {
    return guarded("swap_test", [&] {
        need(c, "codec");
        need(rdb, "rdb");
        *rdb = swap::swap_test(*c->model, wave(x, n), c->model->power_channels(), gain_db).rdb;
    });
}

podar_status podar_swap_report(const podar_codec* c, const podar_corpus* corpus, podar_split split, double gain_db,
                               const char* csv_path, const char* summary_path, double* mean_rdb, double* ci95) {
    return guarded("swap_report", [&] {
        need(c, "codec");
        auto r = swap::swap_report(*c->model, split_of(corpus, split), c->model->power_channels(), gain_db);
        if (csv_path) swap::write_report_csv(csv_path, r);
        if (summary_path) {
            json s = swap::report_summary(r);
            s["probe_correlation"] = swap::power_probe(*c->model, split_of(corpus, split));
            ckpt::write_atomic(summary_path, s.dump(2) + "\n");
        }
        if (mean_rdb) *mean_rdb = r.mean_rdb;
        if (ci95) *ci95 = r.ci95;
    });
}

podar_status podar_cfg_combine(const float* v0, const float* v_cond, size_t n, double w, float* out) {
    return guarded("cfg_combine", [&] {
        need(v0, "v0");
        need(v_cond, "v_cond");
        need(out, "out");
        auto r = gen::cfg_combine(TensorF({n}, std::vector<float>(v0, v0 + n)),
                                  TensorF({n}, std::vector<float>(v_cond, v_cond + n)), w);
        std::copy(r.data(), r.data() + n, out);
    });
}

podar_status podar_partial_cfg_combine(const float* v0, const float* v_cond, size_t channels, size_t frames,
                                       size_t k, double w, float* out) {
    return guarded("partial_cfg_combine", [&] {
        need(v0, "v0");
        need(v_cond, "v_cond");
        need(out, "out");
        const std::size_t n = channels * frames;
        auto r = gen::partial_cfg_combine(TensorF({channels, frames}, std::vector<float>(v0, v0 + n)),
                                          TensorF({channels, frames}, std::vector<float>(v_cond, v_cond + n)), w, k);
        std::copy(r.data(), r.data() + n, out);
    });
}

podar_status podar_gen_train(const char* config_json, const podar_codec* codec, const podar_corpus* corpus,
                             const char* out_dir, podar_progress_fn progress, void* user, podar_generator** out) {
    return guarded("gen_train", [&] {
        need(codec, "codec");
        need(corpus, "corpus");
        need(out, "out");
        *out = nullptr;
        auto cfg = parse_config(config_json).get<gen::GenTrainConfig>();
        auto cache = gen::build_cache(*codec->model, corpus->data);
        // Latent geometry always follows the codec.
        cfg.arch.latent_channels = codec->model->latent_channels();
        cfg.arch.power_channels = codec->model->power_channels();
        cfg.arch.frames_per_token = cache.frames_per_token;
        gen::GenTrainIo io;
        if (out_dir) io.out_dir = out_dir;
        if (progress) io.on_val = [&](const gen::GenLogRow& r) { progress(r.step, cfg.steps, r.val_loss, user); };
        auto res = gen::train_generator(cfg, cache, io);
        auto g = std::make_unique<podar_generator>();
        g->g.model = std::move(res.model);
        g->g.stats = cache.stats;
        *out = g.release();
    });
}

podar_status podar_gen_load(const char* path, podar_generator** out) {
    return guarded("gen_load", [&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        auto g = std::make_unique<podar_generator>();
        g->g = gen::load_generator(path);
        *out = g.release();
    });
}

podar_status podar_gen_sample(const podar_generator* g, const podar_codec* codec, const int* tokens,
                              size_t tokens_len, const float* prompt, size_t prompt_len, double w,
                              podar_guidance mode, size_t nfe, uint64_t seed, float* out, size_t cap, size_t* len) {
    return buffered("gen_sample", [&] {
        need(g, "generator");
        need(codec, "codec");
        need(tokens, "tokens");
        if (tokens_len == 0) throw std::invalid_argument("no tokens");
        const auto& m = *codec->model;
        const auto& arch = g->g.model->arch();
        if (arch.latent_channels != m.latent_channels())
            throw std::invalid_argument("generator and codec latent channels differ");
        const std::size_t n = tokens_len * arch.frames_per_token * m.hop();
        if (len) *len = n;
        if (!out) return;
        if (cap < n) throw std::length_error("buffer holds " + std::to_string(cap) + " samples, need " + std::to_string(n));

        gen::SampleRequest req;
        req.tokens.assign(tokens, tokens + tokens_len);
        req.nfe = nfe;
        req.w = w;
        if (mode != PODAR_GUIDANCE_FULL && mode != PODAR_GUIDANCE_PARTIAL)
            throw std::invalid_argument("unknown guidance mode");
        req.mode = mode == PODAR_GUIDANCE_FULL ? gen::GuidanceMode::Full : gen::GuidanceMode::Partial;
        if (prompt_len > 0) {
            need(prompt, "prompt");
            if (prompt_len > n) throw std::invalid_argument("prompt is longer than the requested utterance");
            auto z = codec::encode_mean(m, wave(prompt, prompt_len));
            req.prompt = gen::normalize(z, g->g.stats).values;
            req.prompt_frames = prompt_len / m.hop();
        }
        Rng rng = Rng::substream(seed, "sampler");
        auto y = codec::decode(m, gen::sample(*g->g.model, req, g->g.stats, rng), n);
        std::copy(y.samples.begin(), y.samples.end(), out);
    });
}

void podar_gen_free(podar_generator* g) { delete g; }

podar_status podar_sweep_cfg(const podar_codec* codec, const podar_generator* g, const podar_corpus* corpus,
                             const char* config_json, const char* context_json, const char* out_dir) {
    return guarded("sweep_cfg", [&] {
        need(codec, "codec");
        need(g, "generator");
        need(corpus, "corpus");
        auto cfg = parse_config(config_json).get<eval::CfgSweepConfig>();
        json ctx = context_json && *context_json ? json::parse(context_json) : json();
        const auto& split = corpus->data.val.empty() ? corpus->data.train : corpus->data.val;
        eval::cfg_sweep(*codec->model, g->g, split, cfg, out_dir ? out_dir : "", ctx);
    });
}

podar_status podar_sweep_lambda(const podar_corpus* corpus, const char* config_json, const char* out_dir) {
    return guarded("sweep_lambda", [&] {
        need(corpus, "corpus");
        need(out_dir, "out_dir");
        json j = parse_config(config_json);
        check_keys(j, {"lambdas", "codec", "generator", "train_generators"}, "lambda sweep config");
        eval::LambdaSweepConfig cfg;
        read_opt(j, "lambdas", cfg.lambdas, "lambda sweep config");
        if (j.contains("codec")) cfg.codec = j.at("codec").get<codec::CodecTrainConfig>();
        if (j.contains("generator")) cfg.gen = j.at("generator").get<gen::GenTrainConfig>();
        read_opt(j, "train_generators", cfg.train_generators, "lambda sweep config");
        eval::lambda_sweep(corpus->data, cfg, out_dir);
    });
}

}  // extern "C"
