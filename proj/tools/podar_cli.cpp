// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// podar: experiment lifecycle on top of the C API.
//
//   podar gen-corpus   --out DIR --n N --seed S
//   podar train-codec  --config F [--lambda-podar X] [--power-channels K]
//   podar swap-test    --ckpt F [--split val] [--gain-db 6]
//   podar train-gen    --codec F --config F
//   podar sample       --gen F --codec F --w W --mode full|partial --text 1,2,3
//   podar sweep-cfg    --gen F --codec F [--scales 1,2,3] [--modes full,partial]
//   podar sweep-lambda [--lambdas 0,0.1,0.5,0.75]
//
// Outputs land under --out, else the config's output_dir, else $PODAR_OUT,
// else ./podar_runs. Every command writes the resolved configuration next to
// its artifacts.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "podar/podar.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(podar_status s, const std::string& what) {
    if (s != PODAR_OK) throw Failure(what + ": " + podar_last_error());
}

// RAII wrappers so early exits release handles.
template <class T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    ~Handle() { Free(p); }
};
using Corpus = Handle<podar_corpus, podar_corpus_free>;
using Codec = Handle<podar_codec, podar_codec_free>;
using Generator = Handle<podar_generator, podar_gen_free>;

constexpr std::size_t kDefaultCorpusSize = 400;

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Failure("cannot open config " + path);
    try {
        return json::parse(f, nullptr, true, true);
    } catch (const json::exception& e) {
        throw Failure("config " + path + ": " + e.what());
    }
}

void require_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw Failure(where + ": expected an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == k;
        if (!ok) throw Failure(where + ": unknown key '" + k + "'");
    }
}

// Run configuration: the file plus defaults, with the master seed pushed
// into sections that do not pin their own.
struct RunConfig {
    json doc = json::object();

    static RunConfig load(const std::string& path) {
        RunConfig rc;
        if (!path.empty()) rc.doc = read_json_file(path);
        require_keys(rc.doc, {"seed", "output_dir", "corpus", "codec", "generator", "eval"}, "config");
        if (rc.doc.contains("corpus")) require_keys(rc.doc["corpus"], {"dir", "n", "seed"}, "config.corpus");
        if (rc.doc.contains("eval")) require_keys(rc.doc["eval"], {"cfg", "lambda"}, "config.eval");
        if (!rc.doc.contains("seed")) rc.doc["seed"] = std::uint64_t{0};
        if (!rc.doc["seed"].is_number_unsigned() && !(rc.doc["seed"].is_number_integer() && rc.doc["seed"].get<std::int64_t>() >= 0)) throw Failure("config.seed: expected a non-negative integer");
        const auto seed = rc.doc["seed"].get<std::uint64_t>();
        for (const char* s : {"corpus", "codec", "generator"}) {
            if (!rc.doc.contains(s)) rc.doc[s] = json::object();
            if (!rc.doc[s].is_object()) throw Failure(std::string("config.") + s + ": expected an object");
            if (!rc.doc[s].contains("seed")) rc.doc[s]["seed"] = seed;
        }
        if (!rc.doc.contains("eval")) rc.doc["eval"] = json::object();
        for (const char* s : {"cfg", "lambda"}) {
            auto& e = rc.doc["eval"];
            if (!e.contains(s)) e[s] = json::object();
            if (!e[s].is_object()) throw Failure(std::string("config.eval.") + s + ": expected an object");
        }
        if (!rc.doc["eval"]["cfg"].contains("seed")) rc.doc["eval"]["cfg"]["seed"] = seed;
        return rc;
    }

    fs::path output_root(const std::string& flag) const {
        if (!flag.empty()) return flag;
        if (doc.contains("output_dir")) return doc["output_dir"].get<std::string>();
        if (const char* env = std::getenv("PODAR_OUT"); env && *env) return env;
        return "podar_runs";
    }
};

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        f << text;
        if (!f) throw Failure("cannot write " + p.string());
    }
    fs::rename(tmp, p);
}

void freeze(const fs::path& dir, const std::string& command, const json& resolved, const std::string& name =
                                                                                           "resolved_config.json") {
    json j = resolved;
    j["command"] = command;
    j["podar_version"] = podar_version();
    write_text(dir / name, j.dump(2) + "\n");
}

std::string dump_compact(const json& j) { return j.dump(); }

std::uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Failure("cannot open " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char b[17];
    std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(v));
    return b;
}

void load_corpus(const RunConfig& rc, const std::string& flag, Corpus& out, json& resolved) {
    const json& c = rc.doc["corpus"];
    std::string dir = flag;
    if (dir.empty() && c.contains("dir")) dir = c["dir"].get<std::string>();
    if (!dir.empty()) {
        check(podar_corpus_load(dir.c_str(), &out.p), "corpus");
        resolved["corpus"] = {{"dir", dir}, {"manifest_hash", hex(file_hash((fs::path(dir) / "manifest.jsonl").string()))}};
        return;
    }
    const auto n = c.value("n", kDefaultCorpusSize);
    const auto seed = c["seed"].get<std::uint64_t>();
    check(podar_corpus_generate(n, seed, &out.p), "corpus");
    resolved["corpus"] = {{"n", n}, {"seed", seed}};
}

void progress(size_t step, size_t total, double loss, void*) {
    if (step == total || step % 100 == 0) std::fprintf(stderr, "step %zu/%zu loss %.5f\n", step, total, loss);
}

podar_guidance parse_mode(const std::string& m) {
    if (m == "full") return PODAR_GUIDANCE_FULL;
    if (m == "partial") return PODAR_GUIDANCE_PARTIAL;
    throw Failure("mode must be full or partial, got '" + m + "'");
}

std::vector<int> parse_tokens(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw Failure("--text: '" + item + "' is not an integer token");
        }
    }
    if (out.empty()) throw Failure("--text: no tokens");
    return out;
}

// Replace the manifest row for `key` or append it; rows stay in first-seen order.
void upsert_manifest(const fs::path& path, const std::string& header, const std::string& key,
                     const std::string& row) {
    std::vector<std::string> rows;
    if (std::ifstream f(path); f) {
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line))
            if (!line.empty()) rows.push_back(line);
    }
    bool replaced = false;
    for (auto& r : rows) {
        if (r.substr(0, r.find(',')) == key) {
            r = row;
            replaced = true;
        }
    }
    if (!replaced) rows.push_back(row);
    std::string text = header + "\n";
    for (const auto& r : rows) text += r + "\n";
    write_text(path, text);
}

std::string fmt_g(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%g", v);
    return b;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PoDAR lab: corpus, codec, swap test, generator and sweeps"};
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "worker thread cap (0 = all cores; 1 for bitwise reproducibility)");

    std::string config_path, out_flag, corpus_flag;
    auto add_common = [&](CLI::App* s, bool with_config) {
        if (with_config) s->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        s->add_option("--out", out_flag, "output directory");
        s->add_option("--corpus", corpus_flag, "corpus directory (otherwise generated from the config)")
            ->check(CLI::ExistingDirectory);
    };

    // gen-corpus
    auto* gc = app.add_subcommand("gen-corpus", "synthesize the token corpus and write WAVs + manifest");
    std::size_t gc_n = kDefaultCorpusSize;
    std::uint64_t gc_seed = 0;
    std::string gc_out;
    gc->add_option("--out", gc_out, "output directory")->required();
    gc->add_option("--n", gc_n, "number of utterances");
    gc->add_option("--seed", gc_seed, "corpus seed");

    // train-codec
    auto* tc = app.add_subcommand("train-codec", "train the waveform codec");
    add_common(tc, true);
    double tc_lambda = 0.0;
    std::size_t tc_k = 0;
    bool tc_resume = false;
    auto* tc_lambda_opt = tc->add_option("--lambda-podar", tc_lambda, "consistency weight (overrides config)");
    auto* tc_k_opt = tc->add_option("--power-channels", tc_k, "power channels k (overrides config)");
    tc->add_flag("--resume", tc_resume, "continue from the checkpoint in the output directory");

    // swap-test
    auto* st = app.add_subcommand("swap-test", "swap power channels of x and gained x and report R_dB");
    add_common(st, true);
    std::string st_ckpt, st_split = "val";
    double st_gain = 20.0 * std::log10(2.0);
    st->add_option("--ckpt", st_ckpt, "codec checkpoint")->required()->check(CLI::ExistingFile);
    st->add_option("--split", st_split, "corpus split")->check(CLI::IsMember({"train", "val"}));
    st->add_option("--gain-db", st_gain, "gain applied to the second copy (default: factor 2)");

    // train-gen
    auto* tg = app.add_subcommand("train-gen", "train the latent flow-matching generator");
    add_common(tg, true);
    std::string tg_codec;
    tg->add_option("--codec", tg_codec, "codec checkpoint")->required()->check(CLI::ExistingFile);

    // sample
    auto* sa = app.add_subcommand("sample", "generate one utterance to WAV");
    std::string sa_gen, sa_codec, sa_mode = "partial", sa_text, sa_name, sa_out, sa_prompt_corpus;
    double sa_w = 3.0;
    std::size_t sa_nfe = 32, sa_prompt_index = 0, sa_prompt_tokens = 0;
    std::uint64_t sa_seed = 0;
    sa->add_option("--gen", sa_gen, "generator checkpoint")->required()->check(CLI::ExistingFile);
    sa->add_option("--codec", sa_codec, "codec checkpoint")->required()->check(CLI::ExistingFile);
    sa->add_option("--w", sa_w, "guidance scale");
    sa->add_option("--mode", sa_mode, "guidance mode")->check(CLI::IsMember({"full", "partial"}));
    sa->add_option("--nfe", sa_nfe, "sampler steps");
    sa->add_option("--seed", sa_seed, "sampler seed");
    sa->add_option("--text", sa_text, "comma-separated token ids")->required();
    sa->add_option("--prompt-corpus", sa_prompt_corpus, "corpus directory holding the prompt utterance")
        ->check(CLI::ExistingDirectory);
    sa->add_option("--prompt-index", sa_prompt_index, "validation utterance used as prompt");
    sa->add_option("--prompt-tokens", sa_prompt_tokens, "leading token segments of the prompt to keep");
    sa->add_option("--name", sa_name, "output file stem");
    sa->add_option("--out", sa_out, "output directory");

    // sweep-cfg
    auto* sc = app.add_subcommand("sweep-cfg", "guidance-scale sweep, full vs partial");
    add_common(sc, true);
    std::string sc_gen, sc_codec;
    std::vector<double> sc_scales;
    std::vector<std::string> sc_modes;
    sc->add_option("--gen", sc_gen, "generator checkpoint")->required()->check(CLI::ExistingFile);
    sc->add_option("--codec", sc_codec, "codec checkpoint")->required()->check(CLI::ExistingFile);
    sc->add_option("--scales", sc_scales, "guidance scales")->delimiter(',');
    sc->add_option("--modes", sc_modes, "guidance modes")->delimiter(',')->check(CLI::IsMember({"full", "partial"}));

    // sweep-lambda
    auto* sl = app.add_subcommand("sweep-lambda", "train one codec per lambda and report swap gain");
    add_common(sl, true);
    std::vector<double> sl_lambdas;
    bool sl_gen = false;
    sl->add_option("--lambdas", sl_lambdas, "consistency weights")->delimiter(',');
    sl->add_flag("--train-generators", sl_gen, "also train a generator per codec");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        for (auto& ch : msg)
            if (ch == '\n') ch = ' ';
        std::fprintf(stderr, "podar: error: %s\n", msg.c_str());
        return 2;
    }

    try {
        podar_set_num_threads(threads);

        if (*gc) {
            Corpus c;
            check(podar_corpus_generate(gc_n, gc_seed, &c.p), "gen-corpus");
            check(podar_corpus_save(c.p, gc_out.c_str()), "gen-corpus");
            freeze(gc_out, "gen-corpus", {{"corpus", {{"n", gc_n}, {"seed", gc_seed}}}});
            std::printf("wrote %zu train + %zu val utterances to %s\n", podar_corpus_size(c.p, PODAR_SPLIT_TRAIN),
                        podar_corpus_size(c.p, PODAR_SPLIT_VAL), gc_out.c_str());
            return 0;
        }

        const RunConfig rc = RunConfig::load(config_path);
        json resolved = rc.doc;
        resolved.erase("output_dir");

        if (*tc) {
            json cc = rc.doc["codec"];
            if (*tc_lambda_opt) cc["lambda_podar"] = tc_lambda;
            if (*tc_k_opt) cc["arch"]["power_channels"] = tc_k;
            const fs::path out = rc.output_root(out_flag) / "codec";
            Corpus c;
            load_corpus(rc, corpus_flag, c, resolved);
            resolved["codec"] = cc;
            resolved.erase("generator");
            resolved.erase("eval");
            freeze(out, "train-codec", resolved);
            Codec m;
            check(podar_codec_train(dump_compact(cc).c_str(), c.p, out.string().c_str(), tc_resume ? 1 : 0,
                                    progress, nullptr, &m.p),
                  "train-codec");
            std::printf("codec checkpoint: %s\n", (out / "codec.pdar").string().c_str());
            return 0;
        }

        if (*st) {
            const fs::path out = out_flag.empty() ? fs::path(st_ckpt).parent_path() : fs::path(out_flag);
            Corpus c;
            load_corpus(rc, corpus_flag, c, resolved);
            Codec m;
            check(podar_codec_load(st_ckpt.c_str(), &m.p), "swap-test");
            fs::create_directories(out);
            double mean = 0.0, ci = 0.0;
            const auto split = st_split == "val" ? PODAR_SPLIT_VAL : PODAR_SPLIT_TRAIN;
            check(podar_swap_report(m.p, c.p, split, st_gain, (out / "swap_report.csv").string().c_str(),
                                    (out / "swap_summary.json").string().c_str(), &mean, &ci),
                  "swap-test");
            json r = {{"corpus", resolved["corpus"]},
                      {"swap", {{"ckpt", st_ckpt}, {"ckpt_hash", hex(file_hash(st_ckpt))}, {"split", st_split},
                                {"gain_db", st_gain}}}};
            freeze(out, "swap-test", r, "swap_config.json");
            std::printf("mean R_dB %.4f +/- %.4f (n=%zu)\n", mean, ci, podar_corpus_size(c.p, split));
            return 0;
        }

        if (*tg) {
            const fs::path out = rc.output_root(out_flag) / "gen";
            Corpus c;
            load_corpus(rc, corpus_flag, c, resolved);
            Codec m;
            check(podar_codec_load(tg_codec.c_str(), &m.p), "train-gen");
            resolved["codec_ckpt"] = {{"path", tg_codec}, {"hash", hex(file_hash(tg_codec))}};
            resolved.erase("codec");
            resolved.erase("eval");
            freeze(out, "train-gen", resolved);
            Generator g;
            check(podar_gen_train(dump_compact(rc.doc["generator"]).c_str(), m.p, c.p, out.string().c_str(), progress,
                                  nullptr, &g.p),
                  "train-gen");
            std::printf("generator checkpoint: %s\n", (out / "gen.pdar").string().c_str());
            return 0;
        }

        if (*sa) {
            const auto tokens = parse_tokens(sa_text);
            const fs::path out = rc.output_root(sa_out) / "samples";
            Codec m;
            check(podar_codec_load(sa_codec.c_str(), &m.p), "sample");
            Generator g;
            check(podar_gen_load(sa_gen.c_str(), &g.p), "sample");

            std::vector<float> prompt;
            if (sa_prompt_tokens > 0) {
                if (sa_prompt_corpus.empty()) throw Failure("--prompt-tokens needs --prompt-corpus");
                Corpus c;
                check(podar_corpus_load(sa_prompt_corpus.c_str(), &c.p), "sample");
                std::size_t n = 0, nt = 0;
                check(podar_corpus_waveform(c.p, PODAR_SPLIT_VAL, sa_prompt_index, nullptr, 0, &n), "sample");
                check(podar_corpus_tokens(c.p, PODAR_SPLIT_VAL, sa_prompt_index, nullptr, 0, &nt), "sample");
                if (sa_prompt_tokens >= nt) throw Failure("--prompt-tokens must be below the prompt's token count");
                prompt.resize(n);
                check(podar_corpus_waveform(c.p, PODAR_SPLIT_VAL, sa_prompt_index, prompt.data(), n, &n), "sample");
                prompt.resize(n / nt * sa_prompt_tokens);
            }

            std::size_t len = 0;
            const auto mode = parse_mode(sa_mode);
            check(podar_gen_sample(g.p, m.p, tokens.data(), tokens.size(), prompt.empty() ? nullptr : prompt.data(),
                                   prompt.size(), sa_w, mode, sa_nfe, sa_seed, nullptr, 0, &len),
                  "sample");
            std::vector<float> wav(len);
            check(podar_gen_sample(g.p, m.p, tokens.data(), tokens.size(), prompt.empty() ? nullptr : prompt.data(),
                                   prompt.size(), sa_w, mode, sa_nfe, sa_seed, wav.data(), wav.size(), &len),
                  "sample");

            const std::string stem = sa_name.empty() ? "sample_w" + fmt_g(sa_w) + "_" + sa_mode + "_nfe" +
                                                           std::to_string(sa_nfe) + "_seed" + std::to_string(sa_seed)
                                                     : sa_name;
            fs::create_directories(out);
            const fs::path wav_path = out / (stem + ".wav");
            check(podar_wav_write(wav_path.string().c_str(), wav.data(), wav.size(), 16000), "sample");

            json r = {{"sample",
                       {{"gen", sa_gen},          {"gen_hash", hex(file_hash(sa_gen))},
                        {"codec", sa_codec},      {"codec_hash", hex(file_hash(sa_codec))},
                        {"w", sa_w},              {"mode", sa_mode},
                        {"nfe", sa_nfe},          {"seed", sa_seed},
                        {"text", tokens},         {"prompt_corpus", sa_prompt_corpus},
                        {"prompt_index", sa_prompt_index}, {"prompt_tokens", sa_prompt_tokens}}}};
            freeze(out, "sample", r, stem + ".config.json");
            std::string row = stem + ".wav,\"" + sa_text + "\"," + fmt_g(sa_w) + "," + sa_mode + "," +
                              std::to_string(sa_nfe) + "," + std::to_string(sa_seed) + "," +
                              std::to_string(prompt.size()) + "," + std::to_string(wav.size()) + "," +
                              hex(file_hash(wav_path.string()));
            upsert_manifest(out / "manifest.csv", "file,text,w,mode,nfe,seed,prompt_samples,samples,hash",
                            stem + ".wav", row);
            std::printf("%s\n", wav_path.string().c_str());
            return 0;
        }

        if (*sc) {
            const fs::path out = rc.output_root(out_flag) / "sweep_cfg";
            json ec = rc.doc["eval"]["cfg"];
            if (!sc_scales.empty()) ec["scales"] = sc_scales;
            if (!sc_modes.empty()) ec["modes"] = sc_modes;
            Corpus c;
            load_corpus(rc, corpus_flag, c, resolved);
            Codec m;
            check(podar_codec_load(sc_codec.c_str(), &m.p), "sweep-cfg");
            Generator g;
            check(podar_gen_load(sc_gen.c_str(), &g.p), "sweep-cfg");
            const json ctx = {{"codec_hash", hex(file_hash(sc_codec))},
                              {"gen_hash", hex(file_hash(sc_gen))},
                              {"corpus", resolved["corpus"].contains("manifest_hash")
                                             ? resolved["corpus"]["manifest_hash"]
                                             : resolved["corpus"]}};
            json r = {{"corpus", resolved["corpus"]}, {"eval", {{"cfg", ec}}}, {"context", ctx}};
            freeze(out, "sweep-cfg", r);
            check(podar_sweep_cfg(m.p, g.p, c.p, dump_compact(ec).c_str(), dump_compact(ctx).c_str(),
                                  out.string().c_str()),
                  "sweep-cfg");
            std::printf("records: %s\n", (out / "records.csv").string().c_str());
            return 0;
        }

        if (*sl) {
            const fs::path out = rc.output_root(out_flag) / "sweep_lambda";
            json lc = rc.doc["eval"]["lambda"];
            require_keys(lc, {"lambdas", "train_generators"}, "config.eval.lambda");
            if (!sl_lambdas.empty()) lc["lambdas"] = sl_lambdas;
            if (sl_gen) lc["train_generators"] = true;
            lc["codec"] = rc.doc["codec"];
            lc["generator"] = rc.doc["generator"];
            Corpus c;
            load_corpus(rc, corpus_flag, c, resolved);
            json r = {{"corpus", resolved["corpus"]}, {"sweep", lc}};
            freeze(out, "sweep-lambda", r);
            check(podar_sweep_lambda(c.p, dump_compact(lc).c_str(), out.string().c_str()), "sweep-lambda");
            std::printf("summary: %s\n", (out / "lambda_summary.csv").string().c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (auto& ch : msg)
            if (ch == '\n') ch = ' ';
        std::fprintf(stderr, "podar: error: %s\n", msg.c_str());
        return 1;
    }
    return 1;
}
