// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "podar/podar.h"

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("podar_capi_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

const char* kTinyCodec = R"({
  "arch": {"latent_channels": 4, "power_channels": 1, "strides": [2, 2], "widths": [8, 8], "stem_width": 4},
  "steps": 2, "batch_size": 2, "crop_samples": 256, "stft_fft_sizes": [64, 32],
  "lambda_podar": 0.5, "min_corpus": 20, "checkpoint_every": 1
})";

}  // namespace

TEST_CASE("C API: errors are reported as status plus message") {
    CHECK(std::string(podar_version()).size() > 0);
    CHECK(std::string(podar_status_name(PODAR_ERR_CONFIG)) == "config error");

    podar_corpus* c = nullptr;
    CHECK(podar_corpus_load("/nonexistent/dir", &c) != PODAR_OK);
    CHECK(c == nullptr);
    CHECK(std::string(podar_last_error()).find("/nonexistent/dir") != std::string::npos);

    CHECK(podar_corpus_generate(4, 1, nullptr) == PODAR_ERR_INVALID_ARGUMENT);
    CHECK(std::string(podar_last_error()).find("null argument") != std::string::npos);

    podar_codec* m = nullptr;
    REQUIRE(podar_corpus_generate(20, 1, &c) == PODAR_OK);
    CHECK(podar_codec_train("{\"bogus\": 1}", c, nullptr, 0, nullptr, nullptr, &m) == PODAR_ERR_CONFIG);
    CHECK(std::string(podar_last_error()).find("bogus") != std::string::npos);
    CHECK(podar_codec_train("{not json", c, nullptr, 0, nullptr, nullptr, &m) == PODAR_ERR_CONFIG);
    CHECK(std::string(podar_last_error()).find('\n') == std::string::npos);
    CHECK(podar_codec_load("/nonexistent.pdar", &m) == PODAR_ERR_IO);
    podar_corpus_free(c);
    podar_corpus_free(nullptr);
    podar_codec_free(nullptr);
    podar_gen_free(nullptr);
}

TEST_CASE("C API: signal utilities") {
    std::vector<float> x{0.1f, -0.2f, 0.3f, 0.05f}, y(4);
    REQUIRE(podar_apply_gain(x.data(), 4, 6.0, y.data()) == PODAR_OK);
    double db = 0.0;
    REQUIRE(podar_energy_ratio_db(y.data(), x.data(), 4, &db) == PODAR_OK);
    CHECK(std::abs(db - 6.0) < 1e-6);
    std::vector<float> loud{0.9f, 0.9f};
    CHECK(podar_apply_gain(loud.data(), 2, 6.0, y.data()) == PODAR_ERR_INVALID_ARGUMENT);

    std::vector<float> v0{1, 0, 2}, vc{2, 1, 0}, out(3);
    REQUIRE(podar_cfg_combine(v0.data(), vc.data(), 3, 3.0, out.data()) == PODAR_OK);
    CHECK(out == std::vector<float>{4, 3, -4});
    REQUIRE(podar_partial_cfg_combine(v0.data(), vc.data(), 3, 1, 1, 3.0, out.data()) == PODAR_OK);
    CHECK(out == std::vector<float>{2, 3, -4});
    CHECK(podar_partial_cfg_combine(v0.data(), vc.data(), 3, 1, 3, 3.0, out.data()) == PODAR_ERR_INVALID_ARGUMENT);
}

TEST_CASE("C API: corpus, codec, swap and generator lifecycle") {
    auto dir = temp_dir("life");
    podar_set_num_threads(1);
    podar_corpus* c = nullptr;
    REQUIRE(podar_corpus_generate(40, 7, &c) == PODAR_OK);
    CHECK(podar_corpus_size(c, PODAR_SPLIT_TRAIN) == 36);
    CHECK(podar_corpus_size(c, PODAR_SPLIT_VAL) == 4);
    REQUIRE(podar_corpus_save(c, (dir / "corpus").c_str()) == PODAR_OK);
    podar_corpus* c2 = nullptr;
    REQUIRE(podar_corpus_load((dir / "corpus").c_str(), &c2) == PODAR_OK);
    CHECK(podar_corpus_size(c2, PODAR_SPLIT_VAL) == 4);

    std::size_t len = 0;
    REQUIRE(podar_corpus_waveform(c, PODAR_SPLIT_VAL, 0, nullptr, 0, &len) == PODAR_OK);
    std::vector<float> wav(len);
    CHECK(podar_corpus_waveform(c, PODAR_SPLIT_VAL, 0, wav.data(), len - 1, &len) == PODAR_ERR_BUFFER);
    REQUIRE(podar_corpus_waveform(c, PODAR_SPLIT_VAL, 0, wav.data(), wav.size(), &len) == PODAR_OK);
    std::size_t nt = 0;
    REQUIRE(podar_corpus_tokens(c, PODAR_SPLIT_VAL, 0, nullptr, 0, &nt) == PODAR_OK);
    std::vector<int> toks(nt);
    REQUIRE(podar_corpus_tokens(c, PODAR_SPLIT_VAL, 0, toks.data(), nt, &nt) == PODAR_OK);
    double ter = 1.0;
    REQUIRE(podar_token_error_rate(wav.data(), wav.size(), toks.data(), nt, &ter) == PODAR_OK);
    CHECK(ter == 0.0);
    CHECK(podar_corpus_waveform(c, PODAR_SPLIT_VAL, 99, nullptr, 0, &len) == PODAR_ERR_INVALID_ARGUMENT);

    std::size_t steps_seen = 0;
    auto progress = [](size_t, size_t, double, void* user) { ++*static_cast<std::size_t*>(user); };
    podar_codec* m = nullptr;
    REQUIRE(podar_codec_train(kTinyCodec, c, (dir / "codec").c_str(), 0, progress, &steps_seen, &m) == PODAR_OK);
    CHECK(steps_seen == 2);
    CHECK(std::filesystem::exists(dir / "codec" / "codec.pdar"));
    CHECK(std::filesystem::exists(dir / "codec" / "train_log.csv"));

    std::size_t L = 0, k = 0, hop = 0;
    REQUIRE(podar_codec_info(m, &L, &k, &hop) == PODAR_OK);
    CHECK(L == 4);
    CHECK(k == 1);
    CHECK(hop == 4);

    std::size_t frames = 0;
    REQUIRE(podar_codec_encode(m, wav.data(), 1000, nullptr, 0, &frames) == PODAR_OK);
    CHECK(frames == 250);
    std::vector<float> mu(L * frames), rec(1000);
    REQUIRE(podar_codec_encode(m, wav.data(), 1000, mu.data(), mu.size(), &frames) == PODAR_OK);
    REQUIRE(podar_codec_decode(m, mu.data(), frames, 1000, rec.data()) == PODAR_OK);
    for (float v : rec) CHECK(std::isfinite(v));

    double rdb = 1.0;
    REQUIRE(podar_swap_test(m, wav.data(), wav.size(), 0.0, &rdb) == PODAR_OK);
    CHECK(std::abs(rdb) < 1e-4);
    double mean = 0.0, ci = 0.0;
    // Four validation utterances are below the 30-utterance minimum.
    CHECK(podar_swap_report(m, c, PODAR_SPLIT_VAL, 6.0, nullptr, nullptr, &mean, &ci) == PODAR_ERR_INVALID_ARGUMENT);
    REQUIRE(podar_swap_report(m, c, PODAR_SPLIT_TRAIN, 6.0, (dir / "swap.csv").c_str(), (dir / "swap.json").c_str(),
                              &mean, &ci) == PODAR_OK);
    CHECK(std::isfinite(mean));
    CHECK(slurp(dir / "swap.csv").rfind("id,rdb,rdb_vs_input\n", 0) == 0);

    REQUIRE(podar_codec_save(m, (dir / "copy.pdar").c_str()) == PODAR_OK);
    podar_codec* m2 = nullptr;
    REQUIRE(podar_codec_load((dir / "copy.pdar").c_str(), &m2) == PODAR_OK);
    double rdb2 = 0.0;
    REQUIRE(podar_swap_test(m, wav.data(), wav.size(), 6.0, &rdb) == PODAR_OK);
    REQUIRE(podar_swap_test(m2, wav.data(), wav.size(), 6.0, &rdb2) == PODAR_OK);
    CHECK(rdb == rdb2);

    const char* gen_cfg = R"({"arch": {"patch": 40, "width": 16, "blocks": 1, "heads": 2, "time_dim": 8},
                              "steps": 2, "batch_size": 2, "crop_tokens": 2, "val_every": 1, "val_noise_draws": 1})";
    podar_generator* g = nullptr;
    REQUIRE(podar_gen_train(gen_cfg, m, c, (dir / "gen").c_str(), nullptr, nullptr, &g) == PODAR_OK);
    CHECK(std::filesystem::exists(dir / "gen" / "gen.pdar"));
    podar_generator* g2 = nullptr;
    REQUIRE(podar_gen_load((dir / "gen" / "gen.pdar").c_str(), &g2) == PODAR_OK);

    const int text[] = {1, 2};
    std::size_t n = 0;
    REQUIRE(podar_gen_sample(g, m, text, 2, nullptr, 0, 1.0, PODAR_GUIDANCE_FULL, 2, 5, nullptr, 0, &n) == PODAR_OK);
    CHECK(n == 3200);
    std::vector<float> a(n), b(n), p(n);
    REQUIRE(podar_gen_sample(g, m, text, 2, wav.data(), 800, 1.0, PODAR_GUIDANCE_FULL, 2, 5, a.data(), n, &n) ==
            PODAR_OK);
    REQUIRE(podar_gen_sample(g2, m, text, 2, wav.data(), 800, 1.0, PODAR_GUIDANCE_PARTIAL, 2, 5, b.data(), n, &n) ==
            PODAR_OK);
    CHECK(a == b);
    REQUIRE(podar_gen_sample(g, m, text, 2, wav.data(), 800, 4.0, PODAR_GUIDANCE_PARTIAL, 2, 5, p.data(), n, &n) ==
            PODAR_OK);
    CHECK(p != a);
    CHECK(podar_gen_sample(g, m, text, 2, nullptr, 0, 1.0, PODAR_GUIDANCE_FULL, 2, 5, a.data(), 10, &n) ==
          PODAR_ERR_BUFFER);
    CHECK(podar_gen_sample(g, m, text, 2, nullptr, 0, 1.0, PODAR_GUIDANCE_FULL, 0, 5, a.data(), n, &n) ==
          PODAR_ERR_INVALID_ARGUMENT);

    REQUIRE(podar_wav_write((dir / "a.wav").c_str(), a.data(), a.size(), 16000) == PODAR_OK);
    CHECK(std::filesystem::file_size(dir / "a.wav") == 44 + 2 * a.size());

    podar_gen_free(g);
    podar_gen_free(g2);
    podar_codec_free(m);
    podar_codec_free(m2);
    podar_corpus_free(c);
    podar_corpus_free(c2);
}
