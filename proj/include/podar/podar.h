/* Copyright 2026 The PoDAR Lab Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the PoDAR lab: synthetic corpus, waveform codec with power
 * augmentation, swap test, latent flow-matching generator and evaluation
 * sweeps.
 *
 * Conventions:
 *   - Every fallible call returns a podar_status. On failure a one-line
 *     message is available from podar_last_error() on the same thread until
 *     the next failing call.
 *   - Objects are opaque handles created by *_generate/_load/_train and
 *     released with the matching *_free (NULL is accepted).
 *   - Configuration is passed as JSON text; unknown keys are rejected.
 *   - Output buffers are caller-owned. Calls that fill a buffer take its
 *     capacity and report the required length; PODAR_ERR_BUFFER is returned
 *     when it is too small.
 */
#ifndef PODAR_PODAR_H_
#define PODAR_PODAR_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PODAR_API __declspec(dllexport)
#else
#define PODAR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum podar_status {
    PODAR_OK = 0,
    PODAR_ERR_INVALID_ARGUMENT = 1,
    PODAR_ERR_CONFIG = 2,
    PODAR_ERR_IO = 3,
    PODAR_ERR_NON_FINITE = 4,
    PODAR_ERR_DIVERGED = 5,
    PODAR_ERR_BUFFER = 6,
    PODAR_ERR_INTERNAL = 7
} podar_status;

typedef enum podar_split { PODAR_SPLIT_TRAIN = 0, PODAR_SPLIT_VAL = 1 } podar_split;
typedef enum podar_guidance { PODAR_GUIDANCE_FULL = 0, PODAR_GUIDANCE_PARTIAL = 1 } podar_guidance;

typedef struct podar_corpus podar_corpus;
typedef struct podar_codec podar_codec;
typedef struct podar_generator podar_generator;

/* Called after every training step (codec) or validation point (generator).
 * Returning nonzero is ignored; the callback is informational. */
typedef void (*podar_progress_fn)(size_t step, size_t total, double loss, void* user);

PODAR_API const char* podar_version(void);
PODAR_API const char* podar_last_error(void);
PODAR_API const char* podar_status_name(podar_status s);
/* Caps worker threads for parallel evaluation; 0 selects the hardware count. */
PODAR_API void podar_set_num_threads(size_t n);

/* ---- corpus ---- */
PODAR_API podar_status podar_corpus_generate(size_t n, uint64_t seed, podar_corpus** out);
PODAR_API podar_status podar_corpus_load(const char* dir, podar_corpus** out);
PODAR_API podar_status podar_corpus_save(const podar_corpus* c, const char* dir);
PODAR_API size_t podar_corpus_size(const podar_corpus* c, podar_split split);
/* Samples of utterance i; pass buf = NULL to query the length. */
PODAR_API podar_status podar_corpus_waveform(const podar_corpus* c, podar_split split, size_t i, float* buf,
                                             size_t cap, size_t* len);
PODAR_API podar_status podar_corpus_tokens(const podar_corpus* c, podar_split split, size_t i, int* buf,
                                           size_t cap, size_t* len);
PODAR_API void podar_corpus_free(podar_corpus* c);

/* ---- signal utilities ---- */
PODAR_API podar_status podar_apply_gain(const float* x, size_t n, double gain_db, float* out);
PODAR_API podar_status podar_energy_ratio_db(const float* x_prime, const float* x, size_t n, double* out);
PODAR_API podar_status podar_token_error_rate(const float* x, size_t n, const int* ref, size_t ref_len,
                                              double* out);
PODAR_API podar_status podar_wav_write(const char* path, const float* x, size_t n, int sample_rate);

/* ---- codec ---- */
PODAR_API podar_status podar_codec_train(const char* config_json, const podar_corpus* corpus, const char* out_dir,
                                         int resume, podar_progress_fn progress, void* user, podar_codec** out);
PODAR_API podar_status podar_codec_load(const char* path, podar_codec** out);
PODAR_API podar_status podar_codec_save(const podar_codec* c, const char* path);
PODAR_API podar_status podar_codec_info(const podar_codec* c, size_t* latent_channels, size_t* power_channels,
                                        size_t* hop);
/* Posterior mean, row-major (L, T) with T = ceil(n / hop). */
PODAR_API podar_status podar_codec_encode(const podar_codec* c, const float* x, size_t n, float* mu, size_t cap,
                                          size_t* frames);
PODAR_API podar_status podar_codec_decode(const podar_codec* c, const float* z, size_t frames, size_t n,
                                          float* out);
PODAR_API void podar_codec_free(podar_codec* c);

/* ---- swap test ---- */
PODAR_API podar_status podar_swap_test(const podar_codec* c, const float* x, size_t n, double gain_db,
                                       double* rdb);
/* Report over a corpus split; writes a per-utterance CSV when csv_path is set
 * and a JSON summary when summary_path is set. */
PODAR_API podar_status podar_swap_report(const podar_codec* c, const podar_corpus* corpus, podar_split split,
                                         double gain_db, const char* csv_path, const char* summary_path,
                                         double* mean_rdb, double* ci95);

/* ---- guidance ---- */
PODAR_API podar_status podar_cfg_combine(const float* v0, const float* v_cond, size_t n, double w, float* out);
PODAR_API podar_status podar_partial_cfg_combine(const float* v0, const float* v_cond, size_t channels,
                                                 size_t frames, size_t k, double w, float* out);

/* ---- generator ---- */
PODAR_API podar_status podar_gen_train(const char* config_json, const podar_codec* codec,
                                       const podar_corpus* corpus, const char* out_dir, podar_progress_fn progress,
                                       void* user, podar_generator** out);
PODAR_API podar_status podar_gen_load(const char* path, podar_generator** out);
/* Generates tokens_len token segments of audio. The first prompt_len samples
 * of prompt (may be NULL when prompt_len is 0) condition the start of the
 * utterance. Output length is tokens_len times the token segment length. */
PODAR_API podar_status podar_gen_sample(const podar_generator* g, const podar_codec* codec, const int* tokens,
                                        size_t tokens_len, const float* prompt, size_t prompt_len, double w,
                                        podar_guidance mode, size_t nfe, uint64_t seed, float* out, size_t cap,
                                        size_t* len);
PODAR_API void podar_gen_free(podar_generator* g);

/* ---- sweeps ---- */
/* config_json: scales, modes, samples, crop_tokens, prompt_tokens, nfe, seed.
 * context_json is folded into each cell's fingerprint (e.g. model hashes). */
PODAR_API podar_status podar_sweep_cfg(const podar_codec* codec, const podar_generator* g,
                                       const podar_corpus* corpus, const char* config_json,
                                       const char* context_json, const char* out_dir);
/* config_json: {"lambdas": [...], "codec": {...}, "generator": {...}, "train_generators": bool} */
PODAR_API podar_status podar_sweep_lambda(const podar_corpus* corpus, const char* config_json, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* PODAR_PODAR_H_ */
