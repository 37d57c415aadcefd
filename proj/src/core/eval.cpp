// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "checkpoint.hpp"
#include "json_util.hpp"
#include "parallel.hpp"

namespace podar::eval {

using json = nlohmann::json;
using corpus::Waveform;

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double token_error_rate(const Waveform& generated, const std::vector<int>& reference, const corpus::CorpusConfig& cfg) {
    if (reference.empty()) throw std::invalid_argument("token_error_rate: empty reference");
    const auto tr = corpus::transcribe_oracle(generated, cfg);
    return static_cast<double>(edit_distance(tr.tokens, reference)) / static_cast<double>(reference.size());
}

double power_deviation_db(const Waveform& generated, const Waveform& reference) {
    return std::abs(dsp::energy_ratio_db<float>(generated.samples, reference.samples));
}

double stft_distance(const Waveform& a, const Waveform& b, const dsp::StftConfig& cfg) {
    if (a.size() != b.size()) throw std::invalid_argument("stft_distance: lengths differ");
    ad::NoGradGuard ng;
    auto x = ad::constant(TensorF({1, a.size()}, a.samples));
    auto y = ad::constant(TensorF({1, b.size()}, b.samples));
    return dsp::multires_stft_loss(x, y, cfg).item();
}

namespace {

std::vector<double> centroids(const Waveform& w, std::size_t fft) {
    ad::NoGradGuard ng;
    auto mag = dsp::stft_magnitude(ad::constant(TensorF({1, w.size()}, w.samples)), fft, fft / 4).value();
    // (1, frames, bins)
    const std::size_t F = mag.dim(1), K = mag.dim(2);
    std::vector<double> c(F);
    for (std::size_t f = 0; f < F; ++f) {
        double num = 0.0, den = 1e-12;
        for (std::size_t k = 0; k < K; ++k) {
            num += static_cast<double>(k) * mag[f * K + k];
            den += mag[f * K + k];
        }
        c[f] = num / den;
    }
    return c;
}

}  // namespace

double centroid_correlation(const Waveform& a, const Waveform& b, std::size_t fft) {
    if (a.size() != b.size()) throw std::invalid_argument("centroid_correlation: lengths differ");
    auto ca = centroids(a, fft), cb = centroids(b, fft);
    try {
        return swap::pearson(ca, cb);
    } catch (const std::invalid_argument&) {
        return 0.0;  // flat trajectory
    }
}

EvalRecord make_record(std::string metric, std::vector<double> values, json fingerprint) {
    auto mc = swap::mean_ci95(values);
    EvalRecord r;
    r.metric = std::move(metric);
    r.mean = mc.mean;
    r.ci95 = mc.ci95;
    r.n = values.size();
    r.values = std::move(values);
    r.fingerprint = std::move(fingerprint);
    return r;
}

void to_json(json& j, const CfgSweepConfig& c) {
    std::vector<std::string> modes;
    for (auto m : c.modes) modes.emplace_back(gen::mode_name(m));
    j = json{{"scales", c.scales},   {"modes", modes}, {"samples", c.samples}, {"crop_tokens", c.crop_tokens},
             {"prompt_tokens", c.prompt_tokens}, {"nfe", c.nfe}, {"seed", c.seed}};
}

void from_json(const json& j, CfgSweepConfig& c) {
    const char* w = "cfg sweep config";
    check_keys(j, {"scales", "modes", "samples", "crop_tokens", "prompt_tokens", "nfe", "seed"}, w);
    read_opt(j, "scales", c.scales, w);
    if (j.contains("modes")) {
        std::vector<std::string> names;
        read_opt(j, "modes", names, w);
        c.modes.clear();
        try {
            for (const auto& n : names) c.modes.push_back(gen::mode_from(n));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string(w) + ": " + e.what());
        }
    }
    read_opt(j, "samples", c.samples, w);
    read_opt(j, "crop_tokens", c.crop_tokens, w);
    read_opt(j, "prompt_tokens", c.prompt_tokens, w);
    read_opt(j, "nfe", c.nfe, w);
    read_opt(j, "seed", c.seed, w);
}

CfgCell run_cfg_cell(const codec::Autoencoder& codec, const gen::LoadedGenerator& g,
                     const std::vector<corpus::Utterance>& split, double w, gen::GuidanceMode mode,
                     const CfgSweepConfig& cfg, const corpus::CorpusConfig& ccfg) {
    if (split.empty()) throw std::invalid_argument("cfg sweep: no utterances");
    if (cfg.samples == 0) throw std::invalid_argument("cfg sweep: samples must be positive");
    if (cfg.prompt_tokens >= cfg.crop_tokens)
        throw std::invalid_argument("cfg sweep: prompt_tokens must be smaller than crop_tokens");
    const std::size_t seg = ccfg.segment_samples();
    const std::size_t fpt = g.model->arch().frames_per_token;
    if (seg != fpt * codec.hop()) throw std::invalid_argument("cfg sweep: generator and codec framing disagree");
    const std::size_t n_ref = cfg.crop_tokens * seg, n_prompt = cfg.prompt_tokens * seg;

    CfgCell cell;
    cell.w = w;
    cell.mode = mode;
    cell.items.resize(cfg.samples);
    parallel_for(cfg.samples, [&](std::size_t i) {
        const auto& u = split[i % split.size()];
        if (u.tokens.size() < cfg.crop_tokens)
            throw std::invalid_argument("cfg sweep: utterance " + u.id + " is shorter than crop_tokens");
        Waveform ref{std::vector<float>(u.waveform.samples.begin(),
                                        u.waveform.samples.begin() + static_cast<std::ptrdiff_t>(n_ref)),
                     u.waveform.sample_rate};
        gen::SampleRequest req;
        req.tokens.assign(u.tokens.begin(), u.tokens.begin() + static_cast<std::ptrdiff_t>(cfg.crop_tokens));
        req.prompt = gen::normalize(codec::encode_mean(codec, ref), g.stats).values;
        req.prompt_frames = cfg.prompt_tokens * fpt;
        req.nfe = cfg.nfe;
        req.w = w;
        req.mode = mode;
        Rng rng = Rng::substream(cfg.seed, "sampler", i);
        auto z = gen::sample(*g.model, req, g.stats, rng);
        Waveform out = codec::decode(codec, z, n_ref, ref.sample_rate);

        auto tail = [&](const Waveform& x) {
            return Waveform{std::vector<float>(x.samples.begin() + static_cast<std::ptrdiff_t>(n_prompt), x.samples.end()),
                            x.sample_rate};
        };
        const Waveform gc = tail(out), rc = tail(ref);
        SampleMetrics m;
        m.id = u.id;
        m.ter = token_error_rate(out, req.tokens, ccfg);
        const double e = dsp::power_stats<float>(gc.samples).total_energy;
        m.power_dev_db = e > 0.0 ? power_deviation_db(gc, rc) : std::numeric_limits<double>::infinity();
        m.stft = stft_distance(gc, rc);
        m.centroid_corr = centroid_correlation(gc, rc);
        cell.items[i] = m;
    });

    auto collect = [&](auto field) {
        std::vector<double> v;
        for (const auto& it : cell.items) v.push_back(it.*field);
        return v;
    };
    json fp{{"w", w}, {"mode", gen::mode_name(mode)}};
    cell.records.push_back(make_record("ter", collect(&SampleMetrics::ter), fp));
    cell.records.push_back(make_record("power_dev_db", collect(&SampleMetrics::power_dev_db), fp));
    cell.records.push_back(make_record("stft", collect(&SampleMetrics::stft), fp));
    cell.records.push_back(make_record("centroid_corr", collect(&SampleMetrics::centroid_corr), fp));
    return cell;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string cell_name(double w, gen::GuidanceMode m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "w%g_%s", w, gen::mode_name(m));
    return buf;
}

constexpr const char* kCellHeader = "id,ter,power_dev_db,stft,centroid_corr";

void write_cell(const std::filesystem::path& dir, const std::string& name, const CfgCell& c, const json& fp) {
    std::ostringstream os;
    os << kCellHeader << "\n";
    for (const auto& it : c.items)
        os << it.id << "," << fmt(it.ter) << "," << fmt(it.power_dev_db) << "," << fmt(it.stft) << ","
           << fmt(it.centroid_corr) << "\n";
    ckpt::write_atomic(dir / (name + ".csv"), os.str());
    // The fingerprint goes last: a cell counts as done only once it exists.
    ckpt::write_atomic(dir / (name + ".json"), fp.dump(2) + "\n");
}

bool read_cell(const std::filesystem::path& dir, const std::string& name, const json& fp, std::size_t n,
               CfgCell& c) {
    std::ifstream fj(dir / (name + ".json"));
    if (!fj) return false;
    json saved;
    try {
        fj >> saved;
    } catch (const std::exception&) {
        return false;
    }
    if (saved != fp) return false;
    std::ifstream f(dir / (name + ".csv"));
    std::string line;
    if (!std::getline(f, line) || line != kCellHeader) return false;
    c.items.clear();
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        SampleMetrics m;
        std::string cellv;
        std::getline(ss, m.id, ',');
        double* fields[] = {&m.ter, &m.power_dev_db, &m.stft, &m.centroid_corr};
        for (double* p : fields) {
            if (!std::getline(ss, cellv, ',')) return false;
            *p = std::stod(cellv);
        }
        c.items.push_back(m);
    }
    return c.items.size() == n;
}

}  // namespace

void write_records_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
    std::ostringstream os;
    os << "metric,w,mode,mean,ci95,n\n";
    for (const auto& r : records)
        os << r.metric << "," << fmt(r.fingerprint.value("w", 0.0)) << "," << r.fingerprint.value("mode", "")
           << "," << fmt(r.mean) << "," << fmt(r.ci95) << "," << r.n << "\n";
    ckpt::write_atomic(path, os.str());
}

std::vector<CfgCell> cfg_sweep(const codec::Autoencoder& codec, const gen::LoadedGenerator& g,
                               const std::vector<corpus::Utterance>& split, const CfgSweepConfig& cfg,
                               const std::filesystem::path& out_dir, const json& context,
                               const corpus::CorpusConfig& ccfg) {
    std::vector<CfgCell> cells;
    const auto cell_dir = out_dir / "cells";
    if (!out_dir.empty()) std::filesystem::create_directories(cell_dir);
    for (double w : cfg.scales)
        for (auto mode : cfg.modes) {
            json fp{{"context", context},
                    {"w", w},
                    {"mode", gen::mode_name(mode)},
                    {"samples", cfg.samples},
                    {"crop_tokens", cfg.crop_tokens},
                    {"prompt_tokens", cfg.prompt_tokens},
                    {"nfe", cfg.nfe},
                    {"seed", cfg.seed}};
            const std::string name = cell_name(w, mode);
            CfgCell c;
            if (!out_dir.empty() && read_cell(cell_dir, name, fp, cfg.samples, c)) {
                c.w = w;
                c.mode = mode;
                json rfp{{"w", w}, {"mode", gen::mode_name(mode)}};
                auto col = [&](auto field) {
                    std::vector<double> v;
                    for (const auto& it : c.items) v.push_back(it.*field);
                    return v;
                };
                c.records = {make_record("ter", col(&SampleMetrics::ter), rfp),
                             make_record("power_dev_db", col(&SampleMetrics::power_dev_db), rfp),
                             make_record("stft", col(&SampleMetrics::stft), rfp),
                             make_record("centroid_corr", col(&SampleMetrics::centroid_corr), rfp)};
            } else {
                c = run_cfg_cell(codec, g, split, w, mode, cfg, ccfg);
                if (!out_dir.empty()) write_cell(cell_dir, name, c, fp);
            }
            cells.push_back(std::move(c));
        }
    if (!out_dir.empty()) {
        std::vector<EvalRecord> all;
        for (const auto& c : cells) all.insert(all.end(), c.records.begin(), c.records.end());
        write_records_csv(out_dir / "records.csv", all);
    }
    return cells;
}

std::size_t steps_to_reach(const std::vector<gen::GenLogRow>& log, double target) {
    for (const auto& r : log)
        if (r.val_loss <= target) return r.step;
    return std::numeric_limits<std::size_t>::max();
}

std::vector<double> smooth(const std::vector<double>& v, std::size_t w) {
    if (w == 0) throw std::invalid_argument("smooth: window must be positive");
    std::vector<double> out(v.size());
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w) / 2, n = static_cast<std::ptrdiff_t>(v.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - half);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, lo + static_cast<std::ptrdiff_t>(w));
        double s = 0.0;
        for (std::ptrdiff_t j = lo; j < hi; ++j) s += v[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo);
    }
    return out;
}

namespace {

std::string lambda_dir(double l) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "lambda_%g", l);
    return buf;
}

std::vector<gen::GenLogRow> read_gen_log(const std::filesystem::path& p) {
    std::ifstream f(p);
    std::string line;
    std::vector<gen::GenLogRow> rows;
    if (!std::getline(f, line)) return rows;
    while (std::getline(f, line)) {
        gen::GenLogRow r;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf", &r.step, &r.train_loss, &r.val_loss) == 3) rows.push_back(r);
    }
    return rows;
}

json stored_config(const std::filesystem::path& ckpt_path) {
    if (!std::filesystem::exists(ckpt_path)) return nullptr;
    try {
        return ckpt::load(ckpt_path).metadata.value("train_config", json());
    } catch (const std::exception&) {
        return nullptr;
    }
}

}  // namespace

std::vector<LambdaRun> lambda_sweep(const corpus::Corpus& data, const LambdaSweepConfig& cfg,
                                    const std::filesystem::path& out_dir) {
    if (cfg.lambdas.empty()) throw std::invalid_argument("lambda sweep: no lambdas");
    std::vector<LambdaRun> runs;
    for (double lambda : cfg.lambdas) {
        const auto dir = out_dir / lambda_dir(lambda);
        codec::CodecTrainConfig cc = cfg.codec;
        cc.loss.lambda_podar = lambda;
        std::unique_ptr<codec::CodecModel> model;
        if (stored_config(dir / "codec.pdar") == json(cc)) {
            model = codec::load_codec(dir / "codec.pdar");
        } else {
            model = codec::train_codec(cc, data, {dir, true, {}}).model;
        }

        LambdaRun run;
        run.lambda = lambda;
        const auto& val = data.val.empty() ? data.train : data.val;
        run.swap = swap::swap_report(*model, val, cc.arch.power_channels);
        swap::write_report_csv(dir / "swap_report.csv", run.swap);
        run.recon_stft = codec::reconstruction_loss(*model, val, cc.loss.stft);
        json summary = swap::report_summary(run.swap);
        summary["recon_stft"] = run.recon_stft;
        summary["lambda_podar"] = lambda;
        ckpt::write_atomic(dir / "swap_summary.json", summary.dump(2) + "\n");

        if (cfg.train_generators) {
            gen::GenTrainConfig gc = cfg.gen;
            gc.arch.latent_channels = cc.arch.latent_channels;
            gc.arch.power_channels = cc.arch.power_channels;
            gc.arch.frames_per_token = corpus::CorpusConfig{}.segment_samples() / model->hop();
            const auto gdir = dir / "gen";
            if (stored_config(gdir / "gen.pdar") == json(gc) && std::filesystem::exists(gdir / "gen_log.csv")) {
                run.gen_log = read_gen_log(gdir / "gen_log.csv");
            } else {
                auto cache = gen::build_cache(*model, data);
                run.gen_log = gen::train_generator(gc, cache, {gdir, {}}).log;
            }
        }
        runs.push_back(std::move(run));
    }
    write_lambda_summary(out_dir / "lambda_summary.csv", runs);
    return runs;
}

void write_lambda_summary(const std::filesystem::path& path, const std::vector<LambdaRun>& runs) {
    const LambdaRun* base = &runs.front();
    for (const auto& r : runs)
        if (r.lambda == 0.0) base = &r;
    const double target = base->gen_log.empty() ? std::nan("") : base->gen_log.back().val_loss;
    std::ostringstream os;
    os << "lambda,swap_rdb,swap_ci95,swap_rdb_vs_input,recon_stft,gen_final_val_loss,steps_to_baseline\n";
    for (const auto& r : runs) {
        os << fmt(r.lambda) << "," << fmt(r.swap.mean_rdb) << "," << fmt(r.swap.ci95) << ","
           << fmt(r.swap.mean_rdb_input) << "," << fmt(r.recon_stft) << ",";
        if (r.gen_log.empty()) {
            os << ",\n";
            continue;
        }
        const std::size_t s = steps_to_reach(r.gen_log, target);
        os << fmt(r.gen_log.back().val_loss) << ","
           << (s == std::numeric_limits<std::size_t>::max() ? std::string() : std::to_string(s)) << "\n";
    }
    ckpt::write_atomic(path, os.str());
}

}  // namespace podar::eval
