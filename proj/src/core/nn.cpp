// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "nn.hpp"

#include <cmath>
#include <stdexcept>

namespace podar::nn {

VarF ParamStore::add(const std::string& name, TensorF init) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    VarF v = ad::parameter(std::move(init));
    index_[name] = items_.size();
    items_.emplace_back(name, v);
    return v;
}

const VarF& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
    return items_[it->second].second;
}

std::size_t ParamStore::numel() const {
    std::size_t n = 0;
    for (const auto& [_, v] : items_) n += v.value().size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, v] : items_) const_cast<VarF&>(v).zero_grad();
}

bool ParamStore::all_finite() const { return first_non_finite().empty(); }

std::string ParamStore::first_non_finite() const {
    for (const auto& [name, v] : items_)
        if (!v.value().all_finite()) return name;
    return {};
}

double ParamStore::grad_norm() const {
    double s = 0.0;
    for (const auto& [_, v] : items_)
        for (float g : v.grad().values()) s += static_cast<double>(g) * g;
    return std::sqrt(s);
}

std::vector<std::pair<std::string, TensorF>> ParamStore::snapshot() const {
    std::vector<std::pair<std::string, TensorF>> out;
    out.reserve(items_.size());
    for (const auto& [name, v] : items_) out.emplace_back(name, v.value());
    return out;
}

void ParamStore::load(const std::vector<std::pair<std::string, TensorF>>& values) {
    std::map<std::string, const TensorF*> by_name;
    for (const auto& [name, t] : values) by_name[name] = &t;
    for (auto& [name, v] : items_) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("missing parameter '" + name + "' in checkpoint");
        if (it->second->shape() != v.shape())
            throw std::runtime_error("parameter '" + name + "' has shape " + shape_str(it->second->shape()) +
                                     " in checkpoint, model expects " + shape_str(v.shape()));
        const_cast<VarF&>(v).mutable_value() = *it->second;
    }
}

TensorF uniform_init(const Shape& shape, double bound, Rng& rng) {
    TensorF t(shape);
    for (auto& x : t.storage()) x = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

TensorF kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
    return uniform_init(shape, std::sqrt(3.0 / static_cast<double>(fan_in)), rng);
}

Adam::Adam(ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& [_, v] : params_.items()) {
        m_.emplace_back(v.value().size(), 0.0f);
        v_.emplace_back(v.value().size(), 0.0f);
    }
}

double Adam::step() {
    const double norm = params_.grad_norm();
    double clip = 1.0;
    if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step = cfg_.lr / bc1;
    const auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        VarF p = items[i].second;
        const auto& g = p.grad();
        if (g.empty()) continue;
        auto& w = p.mutable_value().storage();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = static_cast<double>(g[j]) * clip;
            m[j] = static_cast<float>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj);
            v[j] = static_cast<float>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj);
            const double denom = std::sqrt(v[j] / bc2) + cfg_.eps;
            w[j] = static_cast<float>(w[j] - step * m[j] / denom);
        }
    }
    return norm;
}

std::vector<std::pair<std::string, TensorF>> Adam::state() const {
    std::vector<std::pair<std::string, TensorF>> out;
    const auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        out.emplace_back("adam_m/" + items[i].first, TensorF(items[i].second.shape(), m_[i]));
        out.emplace_back("adam_v/" + items[i].first, TensorF(items[i].second.shape(), v_[i]));
    }
    return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, TensorF>>& state, std::size_t steps) {
    std::map<std::string, const TensorF*> by_name;
    for (const auto& [name, t] : state) by_name[name] = &t;
    const auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto m = by_name.find("adam_m/" + items[i].first);
        auto v = by_name.find("adam_v/" + items[i].first);
        if (m == by_name.end() || v == by_name.end())
            throw std::runtime_error("missing optimizer state for '" + items[i].first + "'");
        if (m->second->size() != m_[i].size() || v->second->size() != v_[i].size())
            throw std::runtime_error("optimizer state size mismatch for '" + items[i].first + "'");
        m_[i] = m->second->to_vector();
        v_[i] = v->second->to_vector();
    }
    t_ = steps;
}

Ema::Ema(const ParamStore& params, double decay) : decay_(decay), shadow_(params.snapshot()) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1)");
}

void Ema::update(const ParamStore& params) {
    const auto& items = params.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& w = items[i].second.value().values();
        auto& s = shadow_[i].second.storage();
        for (std::size_t j = 0; j < s.size(); ++j)
            s[j] = static_cast<float>(decay_ * s[j] + (1.0 - decay_) * w[j]);
    }
}

Conv1d Conv1d::make(ParamStore& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                    std::size_t stride, std::size_t padding, Rng& rng) {
    Conv1d c;
    c.w = ps.add(name + ".w", kaiming_uniform({cout, cin, k}, cin * k, rng));
    c.b = ps.add(name + ".b", TensorF({cout}));
    c.stride = stride;
    c.padding = padding;
    return c;
}

ConvTranspose1d ConvTranspose1d::make(ParamStore& ps, const std::string& name, std::size_t cin, std::size_t cout,
                                      std::size_t k, std::size_t stride, std::size_t padding, Rng& rng) {
    ConvTranspose1d c;
    // Each output sample sees about cin * k / stride inputs.
    c.w = ps.add(name + ".w", kaiming_uniform({cin, cout, k}, std::max<std::size_t>(1, cin * k / stride), rng));
    c.b = ps.add(name + ".b", TensorF({cout}));
    c.stride = stride;
    c.padding = padding;
    return c;
}

Linear Linear::make(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                    double gain) {
    Linear l;
    l.w = ps.add(name + ".w", uniform_init({in, out}, gain * std::sqrt(3.0 / static_cast<double>(in)), rng));
    l.b = ps.add(name + ".b", TensorF({out}));
    return l;
}

VarF Linear::operator()(const VarF& x) const { return ad::add(ad::matmul(x, w), b); }

LayerNorm LayerNorm::make(ParamStore& ps, const std::string& name, std::size_t dim) {
    LayerNorm n;
    n.gamma = ps.add(name + ".gamma", TensorF({dim}, 1.0f));
    n.beta = ps.add(name + ".beta", TensorF({dim}));
    return n;
}

VarF LayerNorm::operator()(const VarF& x) const { return ad::add(ad::mul(ad::layer_norm(x), gamma), beta); }

}  // namespace podar::nn
