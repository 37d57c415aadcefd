// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Parameter bookkeeping and optimizers shared by the codec and the generator.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "rng.hpp"

namespace podar::nn {

using ad::VarF;

/// Ordered collection of named float parameters. Iteration order is
/// insertion order, which fixes the checkpoint layout and optimizer state.
class ParamStore {
public:
    VarF add(const std::string& name, TensorF init);
    const VarF& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, VarF>>& items() const { return items_; }
    std::size_t size() const noexcept { return items_.size(); }
    std::size_t numel() const;

    void zero_grad();
    bool all_finite() const;
    /// Name of the first parameter holding a NaN or infinity, or empty.
    std::string first_non_finite() const;
    double grad_norm() const;

    std::vector<std::pair<std::string, TensorF>> snapshot() const;
    /// Copies values in by name; every stored parameter must be present
    /// with a matching shape.
    void load(const std::vector<std::pair<std::string, TensorF>>& values);

private:
    std::vector<std::pair<std::string, VarF>> items_;
    std::map<std::string, std::size_t> index_;
};

// Initializers. fan_in is the number of inputs feeding one output unit.
TensorF uniform_init(const Shape& shape, double bound, Rng& rng);
TensorF kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global L2 norm; 0 disables
};

class Adam {
public:
    Adam(ParamStore& params, AdamConfig cfg);

    /// Applies one update from the accumulated gradients. Returns the
    /// gradient norm before clipping.
    double step();
    std::size_t steps() const noexcept { return t_; }

    std::vector<std::pair<std::string, TensorF>> state() const;
    void load_state(const std::vector<std::pair<std::string, TensorF>>& state, std::size_t steps);

private:
    ParamStore& params_;
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    std::size_t t_ = 0;
};

/// Exponential moving average of parameter values.
class Ema {
public:
    Ema(const ParamStore& params, double decay);

    void update(const ParamStore& params);
    double decay() const noexcept { return decay_; }
    const std::vector<std::pair<std::string, TensorF>>& shadow() const { return shadow_; }
    void set_shadow(std::vector<std::pair<std::string, TensorF>> s) { shadow_ = std::move(s); }

private:
    double decay_;
    std::vector<std::pair<std::string, TensorF>> shadow_;
};

// Thin layer helpers over a ParamStore.

struct Conv1d {
    VarF w, b;
    std::size_t stride = 1, padding = 0;

    static Conv1d make(ParamStore& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                       std::size_t stride, std::size_t padding, Rng& rng);
    VarF operator()(const VarF& x) const { return ad::conv1d(x, w, b, stride, padding); }
};

struct ConvTranspose1d {
    VarF w, b;
    std::size_t stride = 1, padding = 0;

    static ConvTranspose1d make(ParamStore& ps, const std::string& name, std::size_t cin, std::size_t cout,
                                std::size_t k, std::size_t stride, std::size_t padding, Rng& rng);
    VarF operator()(const VarF& x) const { return ad::conv_transpose1d(x, w, b, stride, padding); }
};

/// y = x W + b over the last axis; W is (in, out).
struct Linear {
    VarF w, b;

    static Linear make(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       double gain = 1.0);
    VarF operator()(const VarF& x) const;
};

/// Layer norm over the last axis with learned scale and shift.
struct LayerNorm {
    VarF gamma, beta;

    static LayerNorm make(ParamStore& ps, const std::string& name, std::size_t dim);
    VarF operator()(const VarF& x) const;
};

}  // namespace podar::nn
